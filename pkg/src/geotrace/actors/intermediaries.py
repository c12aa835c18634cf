"""Identity Provider and Independent Third-Party Authority actors.

The IDP hands out uniformly drawn real user ids and learns nothing beyond a
count. The ITPA mediates key release: it records what the health authority
declares, fetches all group keys from the location provider, checks the
declared group count against what the LP actually stored, and forwards only
the infected-group keys.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from ..codec import decode_message, encode_message
from ..model import (
    ErrorReply,
    IDP,
    ITPA,
    KEYS_ERROR_COUNT_MISMATCH,
    KeysReply,
    KeysRequestToItpa,
    KeysRequestToLp,
    LP,
    RandomIdsReply,
    RandomIdsRequest,
    UserId,
)
from ..crypto import SigningKeyPair, sign_envelope


class RangeRegistry:
    """Virtual population registry: ids exist as formatted integers.

    Keeps million-subscriber registries cheap: only ids actually drawn are
    materialized.
    """

    def __init__(self, size: int, prefix: str = "+34", digits: int = 9) -> None:
        if size < 0 or size > 10**digits:
            raise ValueError(f"registry size {size} does not fit {digits} digits")
        self.size = size
        self.prefix = prefix
        self.digits = digits

    def __len__(self) -> int:
        return self.size

    def format_id(self, index: int) -> UserId:
        return f"{self.prefix}{index:0{self.digits}d}"

    def sample(self, rng: random.Random, n: int) -> list[UserId]:
        return [self.format_id(i) for i in rng.sample(range(self.size), n)]

    def __contains__(self, user_id: UserId) -> bool:
        if not user_id.startswith(self.prefix):
            return False
        tail = user_id[len(self.prefix) :]
        return (
            len(tail) == self.digits
            and tail.isdigit()
            and int(tail) < self.size
        )


class ExplicitRegistry:
    """Registry over a concrete id list (the synthetic world's population)."""

    def __init__(self, ids: list[UserId]) -> None:
        self._ids = sorted(set(ids))
        self._members = frozenset(self._ids)

    def __len__(self) -> int:
        return len(self._ids)

    def sample(self, rng: random.Random, n: int) -> list[UserId]:
        return rng.sample(self._ids, n)

    def __contains__(self, user_id: UserId) -> bool:
        return user_id in self._members


class IdentityProvider:
    """Supplies distinct random real ids; sees counts, never infection data."""

    def __init__(self, registry, keypair: SigningKeyPair, rng: random.Random) -> None:
        self.registry = registry
        self.keypair = keypair
        self._rng = rng

    def handle(self, envelope, net):
        msg = decode_message(envelope.message_bytes)
        if not isinstance(msg, RandomIdsRequest):
            reply = ErrorReply(tx=envelope.tx, code="unexpected-message")
        elif msg.count < 0 or msg.count > len(self.registry):
            reply = ErrorReply(
                tx=msg.tx,
                code="registry-too-small",
                detail=f"asked {msg.count} of {len(self.registry)}",
            )
        else:
            ids = self.registry.sample(self._rng, msg.count)
            reply = RandomIdsReply(tx=msg.tx, ids=tuple(ids))
        return sign_envelope(self.keypair, IDP, envelope.tx, encode_message(reply))


@dataclass(frozen=True)
class ItpaRecord:
    """The ITPA's durable witness: what the HA declared for one transaction."""

    tx: str
    total_groups: int
    infected_group_indices: frozenset[int]

    def to_json_dict(self) -> dict:
        return {
            "tx": self.tx,
            "total_groups": self.total_groups,
            "infected_group_indices": sorted(self.infected_group_indices),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> ItpaRecord:
        return cls(
            tx=data["tx"],
            total_groups=int(data["total_groups"]),
            infected_group_indices=frozenset(
                int(i) for i in data["infected_group_indices"]
            ),
        )


class IndependentAuthority:
    """Key-release mediator and second audit witness."""

    def __init__(self, keypair: SigningKeyPair) -> None:
        self.keypair = keypair
        self._records: dict[str, ItpaRecord] = {}

    def handle(self, envelope, net):
        msg = decode_message(envelope.message_bytes)
        if not isinstance(msg, KeysRequestToItpa):
            reply = ErrorReply(tx=envelope.tx, code="unexpected-message")
            return self._signed(envelope.tx, reply)
        if msg.tx in self._records:
            reply = ErrorReply(tx=msg.tx, code="duplicate-tx")
            return self._signed(msg.tx, reply)
        bad_index = any(
            i < 0 or i >= msg.total_groups for i in msg.infected_group_indices
        )
        if msg.total_groups < 1 or bad_index or (
            len(msg.infected_group_indices) >= msg.total_groups
        ):
            reply = ErrorReply(tx=msg.tx, code="invalid-declaration")
            return self._signed(msg.tx, reply)
        # The declaration is witnessed before any outcome is known.
        self._records[msg.tx] = ItpaRecord(
            tx=msg.tx,
            total_groups=msg.total_groups,
            infected_group_indices=msg.infected_group_indices,
        )
        lp_request = KeysRequestToLp(tx=msg.tx)
        lp_reply_env = net.request(
            ITPA, LP, self._signed(msg.tx, lp_request)
        )
        lp_msg = decode_message(lp_reply_env.message_bytes)
        if not isinstance(lp_msg, KeysReply) or lp_msg.error is not None:
            error = lp_msg.error if isinstance(lp_msg, KeysReply) else "lp-error"
            reply = KeysReply(tx=msg.tx, entries=(), error=error)
            return self._signed(msg.tx, reply)
        by_index = dict(lp_msg.entries)
        if len(lp_msg.entries) != msg.total_groups or not (
            msg.infected_group_indices <= set(by_index)
        ):
            reply = KeysReply(
                tx=msg.tx, entries=(), error=KEYS_ERROR_COUNT_MISMATCH
            )
            return self._signed(msg.tx, reply)
        released = tuple(
            (i, by_index[i]) for i in sorted(msg.infected_group_indices)
        )
        return self._signed(msg.tx, KeysReply(tx=msg.tx, entries=released))

    def _signed(self, tx, message):
        return sign_envelope(self.keypair, ITPA, tx, encode_message(message))

    def export_records(self) -> list[ItpaRecord]:
        return [self._records[tx] for tx in sorted(self._records)]

    def write_records(self, path: str | Path) -> None:
        with open(path, "w") as handle:
            for record in self.export_records():
                handle.write(json.dumps(record.to_json_dict(), sort_keys=True))
                handle.write("\n")


def read_itpa_records(path: str | Path) -> list[ItpaRecord]:
    records = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(ItpaRecord.from_json_dict(json.loads(line)))
    return records
