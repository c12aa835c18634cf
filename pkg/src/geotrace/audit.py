"""Offline audit: proves health-authority misuse from retained evidence.

The auditor sees only what the location provider and the mediator retained:
signed request envelopes and declared infected-group indices. It rebuilds
the infected-id multiset across all transactions and flags every id that
was placed in infected groups more than once; each flag carries the signed
envelopes that make the accusation undeniable. It never reads HA state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .actors.intermediaries import ItpaRecord
from .codec import CodecError, decode_message
from .crypto import EnvelopeError, SignedEnvelope
from .model import HA, ContactTracingRequest


@dataclass(frozen=True)
class AuditViolation:
    user_id: str
    tx_list: tuple[str, ...]
    evidence_refs: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "tx_list": list(self.tx_list),
            "evidence_refs": list(self.evidence_refs),
        }


@dataclass(frozen=True)
class CoverageFinding:
    kind: str
    tx: str
    detail: str

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "tx": self.tx, "detail": self.detail}


@dataclass
class AuditReport:
    violations: list[AuditViolation] = field(default_factory=list)
    coverage_findings: list[CoverageFinding] = field(default_factory=list)
    integrity_errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.violations or self.coverage_findings or self.integrity_errors
        )

    @property
    def aborted(self) -> bool:
        return bool(self.integrity_errors)

    def to_json_dict(self) -> dict:
        return {
            "violations": [v.to_json_dict() for v in self.violations],
            "coverage_findings": [f.to_json_dict() for f in self.coverage_findings],
            "integrity_errors": list(self.integrity_errors),
        }


def audit(
    evidence: list[SignedEnvelope],
    itpa_records: list[ItpaRecord],
    public_keys: dict[str, bytes],
) -> AuditReport:
    report = AuditReport()
    ha_key = public_keys.get(HA)

    requests: dict[str, tuple[int, ContactTracingRequest]] = {}
    for ref, envelope in enumerate(evidence):
        if ha_key is None:
            report.integrity_errors.append("no registered HA public key")
            break
        if envelope.sender != HA:
            report.integrity_errors.append(
                f"evidence {ref}: sender {envelope.sender!r} is not the HA"
            )
            continue
        try:
            envelope.verify(ha_key)
        except EnvelopeError as exc:
            report.integrity_errors.append(f"evidence {ref}: {exc}")
            continue
        try:
            message = decode_message(envelope.message_bytes)
        except CodecError as exc:
            report.integrity_errors.append(f"evidence {ref}: undecodable: {exc}")
            continue
        if not isinstance(message, ContactTracingRequest):
            report.integrity_errors.append(
                f"evidence {ref}: not a contact-tracing request"
            )
            continue
        if message.tx in requests:
            report.integrity_errors.append(
                f"evidence {ref}: duplicate transaction {message.tx}"
            )
            continue
        requests[message.tx] = (ref, message)

    if report.integrity_errors:
        # Tampered or malformed evidence: no accusation may rest on it.
        return report

    records = {record.tx: record for record in itpa_records}
    for tx in sorted(set(requests) - set(records)):
        report.coverage_findings.append(
            CoverageFinding(
                kind="missing-itpa-record",
                tx=tx,
                detail="request retained by LP but never declared to ITPA",
            )
        )
    for tx in sorted(set(records) - set(requests)):
        report.coverage_findings.append(
            CoverageFinding(
                kind="missing-evidence",
                tx=tx,
                detail="ITPA declaration without a retained LP request",
            )
        )

    sightings: dict[str, list[tuple[str, int]]] = {}
    for tx in sorted(set(requests) & set(records)):
        ref, request = requests[tx]
        record = records[tx]
        if record.total_groups != len(request.groups):
            report.coverage_findings.append(
                CoverageFinding(
                    kind="declared-count-mismatch",
                    tx=tx,
                    detail=(
                        f"ITPA holds {record.total_groups} groups, "
                        f"request carries {len(request.groups)}"
                    ),
                )
            )
        for index in sorted(record.infected_group_indices):
            if index >= len(request.groups):
                report.coverage_findings.append(
                    CoverageFinding(
                        kind="infected-index-out-of-range",
                        tx=tx,
                        detail=f"declared infected group {index} does not exist",
                    )
                )
                continue
            for user_id in request.groups[index].member_ids:
                sightings.setdefault(user_id, []).append((tx, ref))

    for user_id in sorted(sightings):
        occurrences = sightings[user_id]
        if len(occurrences) < 2:
            continue
        report.violations.append(
            AuditViolation(
                user_id=user_id,
                tx_list=tuple(sorted({tx for tx, _ in occurrences})),
                evidence_refs=tuple(sorted({ref for _, ref in occurrences})),
            )
        )
    return report


def write_audit_report(report: AuditReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
