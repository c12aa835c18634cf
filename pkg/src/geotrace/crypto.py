"""Signing envelopes, per-group encryption, and seeded key material.

Non-repudiation rests on Ed25519 signatures over the canonical message
bytes bound to sender and transaction. Group results are sealed with
AES-GCM-256 under single-use keys; the nonce is derived from transaction
and group index, which is safe precisely because each key encrypts at most
one message.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .model import require_transaction_id


class EnvelopeError(ValueError):
    """Raised when an envelope fails verification or decoding."""


def derive_rng(master_seed: int, purpose: str, index: int = 0) -> random.Random:
    """Derive an independent named random stream from the master seed.

    Streams are keyed by (seed, purpose, index) through SHA-256, so adding a
    new consumer never perturbs existing ones.
    """
    digest = hashlib.sha256(f"{master_seed}:{purpose}:{index}".encode()).digest()
    return random.Random(int.from_bytes(digest, "big"))


@dataclass(frozen=True)
class SigningKeyPair:
    private: Ed25519PrivateKey
    public_bytes: bytes

    @classmethod
    def generate(cls, rng: random.Random) -> SigningKeyPair:
        private = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        raw = private.public_key().public_bytes_raw()
        return cls(private=private, public_bytes=raw)


def _signed_payload(sender: str, tx: str, message_bytes: bytes) -> bytes:
    require_transaction_id(tx)
    return (
        sender.encode("utf-8")
        + b"\x00"
        + bytes.fromhex(tx)
        + message_bytes
    )


@dataclass(frozen=True)
class SignedEnvelope:
    """A message with its origin pinned: (sender, tx, bytes, signature)."""

    sender: str
    tx: str
    message_bytes: bytes
    signature: bytes

    def verify(self, public_key_bytes: bytes) -> None:
        """Raise EnvelopeError unless the signature matches sender and key."""
        try:
            key = Ed25519PublicKey.from_public_bytes(public_key_bytes)
            key.verify(
                self.signature,
                _signed_payload(self.sender, self.tx, self.message_bytes),
            )
        except (InvalidSignature, ValueError) as exc:
            raise EnvelopeError(
                f"signature check failed for {self.sender} tx={self.tx}"
            ) from exc


def sign_envelope(
    keypair: SigningKeyPair, sender: str, tx: str, message_bytes: bytes
) -> SignedEnvelope:
    signature = keypair.private.sign(_signed_payload(sender, tx, message_bytes))
    return SignedEnvelope(
        sender=sender, tx=tx, message_bytes=message_bytes, signature=signature
    )


def canonical_b64decode(text: str) -> bytes:
    """Decode base64, rejecting any encoding that is not the canonical one.

    Plain b64decode ignores trailing padding bits, so two different strings
    can decode to the same bytes; requiring re-encode equality makes every
    single-character change to stored base64 detectable.
    """
    try:
        raw = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise EnvelopeError(f"invalid base64: {exc}") from exc
    if base64.b64encode(raw).decode("ascii") != text:
        raise EnvelopeError("non-canonical base64 encoding")
    return raw


def envelope_to_json_dict(env: SignedEnvelope) -> dict:
    return {
        "sender": env.sender,
        "tx": env.tx,
        "payload": base64.b64encode(env.message_bytes).decode("ascii"),
        "signature": base64.b64encode(env.signature).decode("ascii"),
    }


def envelope_from_json_dict(data: dict) -> SignedEnvelope:
    try:
        return SignedEnvelope(
            sender=data["sender"],
            tx=data["tx"],
            message_bytes=canonical_b64decode(data["payload"]),
            signature=canonical_b64decode(data["signature"]),
        )
    except KeyError as exc:
        raise EnvelopeError(f"envelope record missing field {exc}") from exc


def write_public_registry(path: str | Path, registry: dict[str, bytes]) -> None:
    encoded = {
        party: base64.b64encode(key).decode("ascii")
        for party, key in sorted(registry.items())
    }
    Path(path).write_text(json.dumps(encoded, indent=2, sort_keys=True) + "\n")


def load_public_registry(path: str | Path) -> dict[str, bytes]:
    data = json.loads(Path(path).read_text())
    return {party: canonical_b64decode(key) for party, key in data.items()}


def new_group_key(rng: random.Random) -> bytes:
    return rng.randbytes(32)


def group_nonce(tx: str, group_index: int) -> bytes:
    require_transaction_id(tx)
    material = (
        b"group-nonce"
        + bytes.fromhex(tx)
        + group_index.to_bytes(4, "big")
    )
    return hashlib.sha256(material).digest()[:12]


def encrypt_group_result(
    key: bytes, tx: str, group_index: int, plaintext: bytes
) -> bytes:
    return AESGCM(key).encrypt(group_nonce(tx, group_index), plaintext, None)


def decrypt_group_result(
    key: bytes, tx: str, group_index: int, ciphertext: bytes
) -> bytes:
    try:
        return AESGCM(key).decrypt(group_nonce(tx, group_index), ciphertext, None)
    except InvalidTag as exc:
        raise EnvelopeError(
            f"group {group_index} ciphertext failed authentication"
        ) from exc
