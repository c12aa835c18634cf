"""Canonical binary encoding for protocol messages.

Every message type maps to exactly one byte string and back. Signatures and
transcript hashes are computed over these bytes, so the encoding must be
injective: tag byte, then the transaction id as 16 raw bytes, then a body of
fixed-width big-endian integers and length-prefixed fields. Sets are sorted
before encoding; the decoder rejects trailing bytes and non-canonical input.
"""

from __future__ import annotations

import struct
from typing import Union

from .model import (
    ContactTracingReply,
    ContactTracingRequest,
    ErrorReply,
    Group,
    GroupResultPlain,
    KeysReply,
    KeysRequestToItpa,
    KeysRequestToLp,
    RandomIdsReply,
    RandomIdsRequest,
    require_transaction_id,
)

TAG_RANDOM_IDS_REQUEST = 0x01
TAG_RANDOM_IDS_REPLY = 0x02
TAG_CONTACT_TRACING_REQUEST = 0x03
TAG_CONTACT_TRACING_REPLY = 0x04
TAG_KEYS_REQUEST_ITPA = 0x05
TAG_KEYS_REQUEST_LP = 0x06
TAG_KEYS_REPLY = 0x07
TAG_GROUP_RESULT_PLAIN = 0x08
TAG_ERROR_REPLY = 0x09

Message = Union[
    RandomIdsRequest,
    RandomIdsReply,
    ContactTracingRequest,
    ContactTracingReply,
    KeysRequestToItpa,
    KeysRequestToLp,
    KeysReply,
    ErrorReply,
]


class CodecError(ValueError):
    """Raised on malformed, truncated, or non-canonical bytes."""


def _pack_u8(value: int) -> bytes:
    if not 0 <= value <= 0xFF:
        raise CodecError(f"u8 out of range: {value}")
    return struct.pack("!B", value)


def _pack_u32(value: int) -> bytes:
    if not 0 <= value <= 0xFFFFFFFF:
        raise CodecError(f"u32 out of range: {value}")
    return struct.pack("!I", value)


def _pack_f64(value: float) -> bytes:
    return struct.pack("!d", value)


def _pack_bytes(data: bytes) -> bytes:
    return _pack_u32(len(data)) + data


def _pack_str(text: str) -> bytes:
    return _pack_bytes(text.encode("utf-8"))


def _pack_tx(tx: str) -> bytes:
    require_transaction_id(tx)
    return bytes.fromhex(tx)


def _pack_distribution(dist: dict[str, float]) -> bytes:
    items = sorted(dist.items())
    out = [_pack_u32(len(items))]
    for category, ratio in items:
        out.append(_pack_str(category))
        out.append(_pack_f64(ratio))
    return b"".join(out)


class _Reader:
    """Cursor over a byte string that refuses short reads and leftovers."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise CodecError(
                f"truncated: wanted {n} bytes at offset {self._pos}, "
                f"have {len(self._data) - self._pos}"
            )
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("!I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("!d", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError(f"invalid utf-8 in string field: {exc}") from exc

    def tx(self) -> str:
        return self.take(16).hex()

    def distribution(self) -> dict[str, float]:
        n = self.u32()
        dist: dict[str, float] = {}
        prev: str | None = None
        for _ in range(n):
            category = self.text()
            if prev is not None and category <= prev:
                raise CodecError("distribution keys not strictly sorted")
            prev = category
            dist[category] = self.f64()
        return dist

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise CodecError(
                f"{len(self._data) - self._pos} trailing bytes after message"
            )


def encode_message(msg: Message) -> bytes:
    if isinstance(msg, RandomIdsRequest):
        return (
            _pack_u8(TAG_RANDOM_IDS_REQUEST)
            + _pack_tx(msg.tx)
            + _pack_u32(msg.count)
        )
    if isinstance(msg, RandomIdsReply):
        body = [_pack_u32(len(msg.ids))]
        body.extend(_pack_str(uid) for uid in msg.ids)
        return _pack_u8(TAG_RANDOM_IDS_REPLY) + _pack_tx(msg.tx) + b"".join(body)
    if isinstance(msg, ContactTracingRequest):
        body = [_pack_u32(len(msg.groups))]
        for group in msg.groups:
            body.append(_pack_u32(group.group_index))
            body.append(_pack_u32(len(group.member_ids)))
            body.extend(_pack_str(uid) for uid in group.member_ids)
        return (
            _pack_u8(TAG_CONTACT_TRACING_REQUEST)
            + _pack_tx(msg.tx)
            + b"".join(body)
        )
    if isinstance(msg, ContactTracingReply):
        body = [_pack_u32(len(msg.group_ciphertexts))]
        for index, ciphertext in msg.group_ciphertexts:
            body.append(_pack_u32(index))
            body.append(_pack_bytes(ciphertext))
        body.append(_pack_distribution(msg.overall_poi_distribution))
        return (
            _pack_u8(TAG_CONTACT_TRACING_REPLY)
            + _pack_tx(msg.tx)
            + b"".join(body)
        )
    if isinstance(msg, KeysRequestToItpa):
        indices = sorted(msg.infected_group_indices)
        body = [_pack_u32(msg.total_groups), _pack_u32(len(indices))]
        body.extend(_pack_u32(i) for i in indices)
        return (
            _pack_u8(TAG_KEYS_REQUEST_ITPA) + _pack_tx(msg.tx) + b"".join(body)
        )
    if isinstance(msg, KeysRequestToLp):
        return _pack_u8(TAG_KEYS_REQUEST_LP) + _pack_tx(msg.tx)
    if isinstance(msg, KeysReply):
        has_error = msg.error is not None
        body = [_pack_u8(1 if has_error else 0)]
        if has_error:
            body.append(_pack_str(msg.error))
        else:
            body.append(_pack_u32(len(msg.entries)))
            for index, key in msg.entries:
                body.append(_pack_u32(index))
                body.append(_pack_bytes(key))
        return _pack_u8(TAG_KEYS_REPLY) + _pack_tx(msg.tx) + b"".join(body)
    if isinstance(msg, ErrorReply):
        return (
            _pack_u8(TAG_ERROR_REPLY)
            + _pack_tx(msg.tx)
            + _pack_str(msg.code)
            + _pack_str(msg.detail)
        )
    raise CodecError(f"unknown message type {type(msg).__name__}")


def decode_message(data: bytes) -> Message:
    reader = _Reader(data)
    tag = reader.u8()
    tx = reader.tx()
    msg: Message
    if tag == TAG_RANDOM_IDS_REQUEST:
        msg = RandomIdsRequest(tx=tx, count=reader.u32())
    elif tag == TAG_RANDOM_IDS_REPLY:
        n = reader.u32()
        msg = RandomIdsReply(tx=tx, ids=tuple(reader.text() for _ in range(n)))
    elif tag == TAG_CONTACT_TRACING_REQUEST:
        n_groups = reader.u32()
        groups = []
        for _ in range(n_groups):
            index = reader.u32()
            n_members = reader.u32()
            members = tuple(reader.text() for _ in range(n_members))
            groups.append(Group(group_index=index, member_ids=members))
        msg = ContactTracingRequest(tx=tx, groups=tuple(groups))
    elif tag == TAG_CONTACT_TRACING_REPLY:
        n_cts = reader.u32()
        cts = tuple((reader.u32(), reader.blob()) for _ in range(n_cts))
        if any(b[0] <= a[0] for a, b in zip(cts, cts[1:])):
            raise CodecError("ciphertext indices not strictly sorted")
        msg = ContactTracingReply(
            tx=tx,
            group_ciphertexts=cts,
            overall_poi_distribution=reader.distribution(),
        )
    elif tag == TAG_KEYS_REQUEST_ITPA:
        total = reader.u32()
        n_idx = reader.u32()
        indices = []
        prev = -1
        for _ in range(n_idx):
            value = reader.u32()
            if value <= prev:
                raise CodecError("infected group indices not strictly sorted")
            prev = value
            indices.append(value)
        msg = KeysRequestToItpa(
            tx=tx,
            total_groups=total,
            infected_group_indices=frozenset(indices),
        )
    elif tag == TAG_KEYS_REQUEST_LP:
        msg = KeysRequestToLp(tx=tx)
    elif tag == TAG_KEYS_REPLY:
        if reader.u8():
            msg = KeysReply(tx=tx, entries=(), error=reader.text())
        else:
            n = reader.u32()
            entries = tuple((reader.u32(), reader.blob()) for _ in range(n))
            if any(b[0] <= a[0] for a, b in zip(entries, entries[1:])):
                raise CodecError("key entry indices not strictly sorted")
            msg = KeysReply(tx=tx, entries=entries, error=None)
    elif tag == TAG_ERROR_REPLY:
        msg = ErrorReply(tx=tx, code=reader.text(), detail=reader.text())
    else:
        raise CodecError(f"unknown message tag 0x{tag:02x}")
    reader.finish()
    return msg


def encode_group_result(result: GroupResultPlain) -> bytes:
    """Group results travel only inside ciphertexts, so they carry no tx."""
    contacts = sorted(result.risk_contacts)
    body = [_pack_u8(TAG_GROUP_RESULT_PLAIN), _pack_u32(len(contacts))]
    body.extend(_pack_str(uid) for uid in contacts)
    body.append(_pack_distribution(result.poi_distribution))
    return b"".join(body)


def decode_group_result(data: bytes) -> GroupResultPlain:
    reader = _Reader(data)
    if reader.u8() != TAG_GROUP_RESULT_PLAIN:
        raise CodecError("not a group result payload")
    n = reader.u32()
    contacts = []
    prev: str | None = None
    for _ in range(n):
        uid = reader.text()
        if prev is not None and uid <= prev:
            raise CodecError("risk contacts not strictly sorted")
        prev = uid
        contacts.append(uid)
    dist = reader.distribution()
    reader.finish()
    return GroupResultPlain(
        risk_contacts=frozenset(contacts), poi_distribution=dist
    )
