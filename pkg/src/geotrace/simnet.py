"""Deterministic in-process message bus with a tamper-evident transcript.

Delivery is synchronous and single-threaded: a request invokes the
recipient's handler inline and returns its signed reply, so one seed yields
one byte-exact transcript. Every send is verified before delivery; entries
are hash-chained so a transcript mutation is detectable even in fields the
signatures do not cover (seq, time, routing).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .crypto import (
    EnvelopeError,
    SignedEnvelope,
    envelope_from_json_dict,
    envelope_to_json_dict,
)
from .model import PARTIES

GENESIS = hashlib.sha256(b"transcript-genesis").hexdigest()

DELIVERED = "delivered"
REFUSED = "refused"


class DeliveryRefused(RuntimeError):
    """The bus rejected a send (unknown party or failed verification)."""


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    sim_time: float
    sender: str
    recipient: str
    kind: str
    reason: str
    envelope: SignedEnvelope
    chain: str

    def to_json_dict(self) -> dict:
        return {
            "seq": self.seq,
            "sim_time": self.sim_time,
            "from": self.sender,
            "to": self.recipient,
            "kind": self.kind,
            "reason": self.reason,
            "envelope": envelope_to_json_dict(self.envelope),
            "chain": self.chain,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> TranscriptEntry:
        return cls(
            seq=int(data["seq"]),
            sim_time=float(data["sim_time"]),
            sender=data["from"],
            recipient=data["to"],
            kind=data["kind"],
            reason=data["reason"],
            envelope=envelope_from_json_dict(data["envelope"]),
            chain=data["chain"],
        )


def _chain_digest(prev: str, entry_without_chain: dict) -> str:
    material = prev.encode("ascii") + json.dumps(
        entry_without_chain, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return hashlib.sha256(material).hexdigest()


class SimNet:
    def __init__(self, public_keys: dict[str, bytes]) -> None:
        self.public_keys = dict(public_keys)
        self._handlers: dict[str, object] = {}
        self.transcript: list[TranscriptEntry] = []
        self.now = 0.0

    def register(self, party: str, handler) -> None:
        if party not in PARTIES:
            raise ValueError(f"unknown party {party!r}")
        self._handlers[party] = handler

    def _append(
        self, sender: str, recipient: str, kind: str, reason: str,
        envelope: SignedEnvelope,
    ) -> TranscriptEntry:
        prev = self.transcript[-1].chain if self.transcript else GENESIS
        body = {
            "seq": len(self.transcript),
            "sim_time": self.now,
            "from": sender,
            "to": recipient,
            "kind": kind,
            "reason": reason,
            "envelope": envelope_to_json_dict(envelope),
        }
        entry = TranscriptEntry(
            seq=len(self.transcript),
            sim_time=self.now,
            sender=sender,
            recipient=recipient,
            kind=kind,
            reason=reason,
            envelope=envelope,
            chain=_chain_digest(prev, body),
        )
        self.transcript.append(entry)
        return entry

    def _deliver(self, sender: str, recipient: str, envelope: SignedEnvelope):
        if sender not in PARTIES or recipient not in PARTIES:
            raise DeliveryRefused(f"unknown party in {sender}->{recipient}")
        key = self.public_keys.get(envelope.sender)
        refusal = None
        if envelope.sender != sender:
            refusal = f"sender label {envelope.sender!r} does not match origin"
        elif key is None:
            refusal = f"no registered key for {envelope.sender!r}"
        else:
            try:
                envelope.verify(key)
            except EnvelopeError as exc:
                refusal = str(exc)
        if refusal is not None:
            self._append(sender, recipient, REFUSED, refusal, envelope)
            raise DeliveryRefused(refusal)
        self._append(sender, recipient, DELIVERED, "", envelope)
        handler = self._handlers.get(recipient)
        if handler is None:
            raise DeliveryRefused(f"party {recipient!r} has no handler")
        return handler.handle(envelope, self)

    def request(
        self, sender: str, recipient: str, envelope: SignedEnvelope
    ) -> SignedEnvelope:
        """Synchronous round trip; both directions land in the transcript."""
        reply = self._deliver(sender, recipient, envelope)
        if reply is None:
            raise DeliveryRefused(f"{recipient} returned no reply")
        key = self.public_keys.get(reply.sender)
        refusal = None
        if reply.sender != recipient:
            refusal = f"reply sender {reply.sender!r} is not {recipient!r}"
        elif key is None:
            refusal = f"no registered key for {reply.sender!r}"
        else:
            try:
                reply.verify(key)
            except EnvelopeError as exc:
                refusal = str(exc)
        if refusal is not None:
            self._append(recipient, sender, REFUSED, refusal, reply)
            raise DeliveryRefused(refusal)
        self._append(recipient, sender, DELIVERED, "", reply)
        return reply

    def write_transcript(self, path: str | Path) -> None:
        with open(path, "w") as handle:
            for entry in self.transcript:
                handle.write(
                    json.dumps(
                        entry.to_json_dict(), sort_keys=True, separators=(",", ":")
                    )
                )
                handle.write("\n")


def load_transcript(path: str | Path) -> list[TranscriptEntry]:
    entries = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                entries.append(TranscriptEntry.from_json_dict(json.loads(line)))
    return entries


@dataclass
class ReplayReport:
    n_entries: int
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def replay(
    entries: list[TranscriptEntry], public_keys: dict[str, bytes]
) -> ReplayReport:
    """Offline re-verification of a transcript.

    Checks gapless sequencing, the hash chain, party validity, sender
    consistency, and every delivered envelope's signature; refusal entries
    must contain envelopes that indeed fail verification.
    """
    failures = []
    prev = GENESIS
    for position, entry in enumerate(entries):
        where = f"entry {position}"
        if entry.seq != position:
            failures.append(f"{where}: seq {entry.seq} breaks contiguity")
        if entry.sender not in PARTIES or entry.recipient not in PARTIES:
            failures.append(
                f"{where}: unknown party {entry.sender}->{entry.recipient}"
            )
        if entry.kind not in (DELIVERED, REFUSED):
            failures.append(f"{where}: unknown kind {entry.kind!r}")
        body = entry.to_json_dict()
        body.pop("chain")
        expected_chain = _chain_digest(prev, body)
        if entry.chain != expected_chain:
            failures.append(f"{where}: hash chain broken")
        prev = entry.chain

        env = entry.envelope
        key = public_keys.get(env.sender)
        verifies = False
        if key is not None:
            try:
                env.verify(key)
                verifies = True
            except EnvelopeError:
                verifies = False
        if entry.kind == DELIVERED:
            if env.sender != entry.sender:
                failures.append(
                    f"{where}: envelope sender {env.sender} != route origin"
                )
            if not verifies:
                failures.append(f"{where}: signature verification failed")
        elif entry.kind == REFUSED and verifies and env.sender == entry.sender:
            failures.append(
                f"{where}: refusal recorded for a verifying envelope"
            )
    return ReplayReport(n_entries=len(entries), failures=failures)


def replay_file(path: str | Path, public_keys: dict[str, bytes]) -> ReplayReport:
    try:
        entries = load_transcript(path)
    except (EnvelopeError, KeyError, ValueError, json.JSONDecodeError) as exc:
        return ReplayReport(n_entries=0, failures=[f"unreadable transcript: {exc}"])
    return replay(entries, public_keys)
