"""Location Provider actor: answers grouped tracing queries from its store.

Per request group the LP unions its members' direct and indirect contacts
over the lookback window, drops the group's own members, attaches the
group's POI category distribution, and seals the result under a fresh
single-use key. It retains every handled request envelope verbatim and
escrows the keys for the mediator and the auditor.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..codec import (
    decode_message,
    encode_group_result,
    encode_message,
)
from ..crypto import (
    SignedEnvelope,
    SigningKeyPair,
    encrypt_group_result,
    envelope_from_json_dict,
    envelope_to_json_dict,
    new_group_key,
    sign_envelope,
)
from ..geo.contacts import ContactEngine
from ..geo.poi import distribution_from_counts, poi_visits, visit_category_counts
from ..geo.store import Poi, TraceStore
from ..model import (
    ContactPolicy,
    ContactTracingReply,
    ContactTracingRequest,
    ErrorReply,
    GroupResultPlain,
    KEYS_ERROR_UNKNOWN_TX,
    KeysReply,
    KeysRequestToLp,
    LP,
    validate_request,
)


@dataclass(frozen=True)
class RetainedRequest:
    tx: str
    envelope: SignedEnvelope
    received_at: float


class LocationProvider:
    def __init__(
        self,
        store: TraceStore,
        pois: Sequence[Poi],
        policy: ContactPolicy,
        keypair: SigningKeyPair,
        rng: random.Random,
    ) -> None:
        self.store = store
        self.pois = list(pois)
        self.policy = policy
        self.keypair = keypair
        self._rng = rng
        self._retained: list[RetainedRequest] = []
        self._keys: dict[str, dict[int, bytes]] = {}
        self.now = 0.0

    def handle(self, envelope: SignedEnvelope, net) -> SignedEnvelope:
        msg = decode_message(envelope.message_bytes)
        if isinstance(msg, ContactTracingRequest):
            return self._handle_tracing(envelope, msg)
        if isinstance(msg, KeysRequestToLp):
            return self._handle_keys(msg)
        reply = ErrorReply(tx=envelope.tx, code="unexpected-message")
        return self._signed(envelope.tx, reply)

    def _handle_tracing(
        self, envelope: SignedEnvelope, request: ContactTracingRequest
    ) -> SignedEnvelope:
        if request.tx in self._keys:
            return self._signed(
                request.tx, ErrorReply(tx=request.tx, code="duplicate-tx")
            )
        violations = validate_request(request)
        if violations:
            return self._signed(
                request.tx,
                ErrorReply(
                    tx=request.tx,
                    code="invalid-request",
                    detail="; ".join(violations),
                ),
            )

        window_start = self.now - self.policy.lookback_s
        engine = ContactEngine(self.store, window_start, self.now, self.policy)
        keys: dict[int, bytes] = {}
        ciphertexts = []
        overall_counts: Counter = Counter()
        for group in request.groups:
            members = set(group.member_ids)
            risk: set[str] = set()
            counts: Counter = Counter()
            for member in group.member_ids:
                for hit in engine.contacts(member):
                    risk.add(hit.contact)
                counts.update(
                    visit_category_counts(
                        poi_visits(
                            self.store,
                            self.pois,
                            member,
                            window_start,
                            self.now,
                            self.policy,
                        )
                    )
                )
            risk -= members
            result = GroupResultPlain(
                risk_contacts=frozenset(risk),
                poi_distribution=distribution_from_counts(counts),
            )
            key = new_group_key(self._rng)
            keys[group.group_index] = key
            ciphertexts.append(
                (
                    group.group_index,
                    encrypt_group_result(
                        key,
                        request.tx,
                        group.group_index,
                        encode_group_result(result),
                    ),
                )
            )
            overall_counts.update(counts)

        self._keys[request.tx] = keys
        self._retained.append(
            RetainedRequest(tx=request.tx, envelope=envelope, received_at=self.now)
        )
        reply = ContactTracingReply(
            tx=request.tx,
            group_ciphertexts=tuple(ciphertexts),
            overall_poi_distribution=distribution_from_counts(overall_counts),
        )
        return self._signed(request.tx, reply)

    def _handle_keys(self, msg: KeysRequestToLp) -> SignedEnvelope:
        stored = self._keys.get(msg.tx)
        if stored is None:
            reply = KeysReply(tx=msg.tx, entries=(), error=KEYS_ERROR_UNKNOWN_TX)
        else:
            reply = KeysReply(
                tx=msg.tx,
                entries=tuple((i, stored[i]) for i in sorted(stored)),
            )
        return self._signed(msg.tx, reply)

    def _signed(self, tx: str, message) -> SignedEnvelope:
        return sign_envelope(self.keypair, LP, tx, encode_message(message))

    def group_key(self, tx: str, group_index: int) -> bytes | None:
        return self._keys.get(tx, {}).get(group_index)

    def export_evidence(self) -> list[RetainedRequest]:
        return list(self._retained)

    def write_evidence(self, path: str | Path) -> None:
        """Evidence lines carry only signature-covered material."""
        with open(path, "w") as handle:
            for retained in self._retained:
                handle.write(
                    json.dumps(
                        envelope_to_json_dict(retained.envelope), sort_keys=True
                    )
                )
                handle.write("\n")


def read_evidence(path: str | Path) -> list[SignedEnvelope]:
    envelopes = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                envelopes.append(envelope_from_json_dict(json.loads(line)))
    return envelopes
