"""End-to-end simulation driver: world, actors, day loop, metrics, artifacts.

One tracing round runs per simulated day. Audits run daily over the
cumulative evidence, the way a supervisor would actually work. Every output
is a pure function of (scenario, seed, adversary), so two runs of the same
triple produce byte-identical transcripts and reports.

Metric computation may be spread over a thread pool (one task per day).
Day tasks only read the trace stores; the stores' lazy caches tolerate
concurrent fills because every fill writes the same value for the same key.
Results are merged in day order, so worker count never changes any output.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .actors.ha import HealthAuthority, RoundOutcome
from .actors.intermediaries import IdentityProvider, IndependentAuthority
from .actors.lp import LocationProvider
from .adversary import MaliciousTargetedHA, evaluate_reid
from .audit import AuditReport, audit, write_audit_report
from .codec import decode_message
from .crypto import SigningKeyPair, derive_rng, write_public_registry
from .geo.contacts import ContactEngine
from .geo.oracle import OracleGuardError, oracle_contacts
from .geo.store import TraceStore
from .model import (
    ContactPolicy,
    ContactTracingRequest,
    HA,
    IDP,
    ITPA,
    LP,
    UserId,
)
from .simnet import SimNet, replay_file
from .synthgen import DAY_S, ScenarioConfig, ScenarioError, World, build_world, seed_infections

ADVERSARY_MODES = ("none", "ha-targeted", "lp-reid", "both")

REPORT_SCHEMA_VERSION = 1


def _load_report_schema() -> dict:
    ref = importlib.resources.files("geotrace").joinpath(
        "schemas/run_report.schema.json"
    )
    return json.loads(ref.read_text(encoding="utf-8"))


def total_variation(p: dict[str, float], q: dict[str, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def _truth_contact_users(
    store: TraceStore,
    subject: UserId,
    t0: float,
    t1: float,
    policy: ContactPolicy,
    engine_cache: dict[tuple[float, float], ContactEngine],
) -> tuple[set[UserId], str]:
    """Contacts of one subject in the ground-truth store.

    The brute-force route is authoritative while the instance fits its
    guards; past them, the windowed engine computes the same relation.
    """
    try:
        hits = oracle_contacts(store, subject, t0, t1, policy)
        return {h.contact for h in hits}, "oracle"
    except OracleGuardError:
        engine = engine_cache.get((t0, t1))
        if engine is None:
            engine = ContactEngine(store, t0, t1, policy)
            engine_cache[(t0, t1)] = engine
        return {h.contact for h in engine.contacts(subject)}, "engine"


@dataclass
class DayMetrics:
    day: int
    tx: str | None
    decoy: bool
    error: str | None
    m: int
    n: int
    k: int
    l: int
    exact_groups: int = 0
    infected_groups: int = 0
    truth_pairs_full: int = 0
    truth_pairs_covered: int = 0
    recalled_pairs: int = 0
    reported_pairs: int = 0
    true_reported_pairs: int = 0
    poi_tv: float | None = None
    truth_mode: str = "oracle"

    def to_json_dict(self) -> dict:
        return {
            "day": self.day,
            "tx": self.tx,
            "decoy": self.decoy,
            "error": self.error,
            "m": self.m,
            "n": self.n,
            "k": self.k,
            "l": self.l,
            "exact_groups": self.exact_groups,
            "infected_groups": self.infected_groups,
            "truth_pairs_full": self.truth_pairs_full,
            "truth_pairs_covered": self.truth_pairs_covered,
            "recalled_pairs": self.recalled_pairs,
            "reported_pairs": self.reported_pairs,
            "true_reported_pairs": self.true_reported_pairs,
            "poi_tv": self.poi_tv,
            "truth_mode": self.truth_mode,
        }


def _day_metrics(world: World, outcome: RoundOutcome) -> DayMetrics:
    metrics = DayMetrics(
        day=outcome.day,
        tx=outcome.tx,
        decoy=outcome.decoy,
        error=outcome.error,
        m=outcome.m,
        n=outcome.n,
        k=outcome.k,
        l=outcome.l,
    )
    if outcome.request is None or outcome.report is None:
        return metrics

    policy = world.config.policy
    t1 = outcome.sim_time
    t0 = t1 - policy.lookback_s
    covered = set(world.covered_users)
    request = outcome.request
    results = dict(outcome.report.per_infected_group)
    metrics.infected_groups = len(results)

    engine_cache: dict[tuple[float, float], ContactEngine] = {}
    truth_of: dict[UserId, set[UserId]] = {}
    positives: set[UserId] = set()
    for idx in outcome.infected_indices:
        positives.update(request.groups[idx].member_ids)
    for subject in sorted(positives):
        truth_of[subject], metrics.truth_mode = _truth_contact_users(
            world.truth_store, subject, t0, t1, policy, engine_cache
        )

    tv_values = []
    for idx in sorted(results):
        group = request.groups[idx]
        reported = set(results[idx].risk_contacts)
        truth_group = set()
        for member in group.member_ids:
            truth_group |= truth_of[member]
        truth_group -= set(group.member_ids)
        if reported == truth_group:
            metrics.exact_groups += 1

        reported_outside = reported - positives
        truth_hits = set()
        for member in group.member_ids:
            truth_hits |= truth_of[member] - positives
        metrics.reported_pairs += len(reported_outside)
        metrics.true_reported_pairs += len(reported_outside & truth_hits)
        for member in group.member_ids:
            for contact in truth_of[member] - positives:
                metrics.truth_pairs_full += 1
                # A pair is recalled only when its own endpoints were both
                # observable; a contact vouched for by a covered co-member
                # does not count for a member the provider never saw.
                if member in covered and contact in covered:
                    metrics.truth_pairs_covered += 1
                    if contact in reported:
                        metrics.recalled_pairs += 1
        dist = results[idx].poi_distribution
        if dist:
            tv_values.append(
                total_variation(dict(dist), dict(outcome.overall_poi))
            )
    if tv_values:
        metrics.poi_tv = sum(tv_values) / len(tv_values)
    return metrics


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    adversary: str
    out_dir: Path
    outcomes: list[RoundOutcome]
    day_metrics: list[DayMetrics]
    audit_report: AuditReport
    replay_ok: bool
    report: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if not self.replay_ok or self.audit_report.aborted:
            return 2
        if self.audit_report.violations:
            return 3
        return 0


def _aggregate_metrics(day_metrics: list[DayMetrics]) -> dict:
    truth_full = sum(m.truth_pairs_full for m in day_metrics)
    truth_covered = sum(m.truth_pairs_covered for m in day_metrics)
    recalled = sum(m.recalled_pairs for m in day_metrics)
    reported = sum(m.reported_pairs for m in day_metrics)
    true_reported = sum(m.true_reported_pairs for m in day_metrics)
    tvs = [m.poi_tv for m in day_metrics if m.poi_tv is not None]
    modes = {m.truth_mode for m in day_metrics if m.infected_groups}
    return {
        "recall_full": recalled / truth_full if truth_full else None,
        "recall_covered": recalled / truth_covered if truth_covered else None,
        "precision": true_reported / reported if reported else None,
        "pair_counts": {
            "truth_full": truth_full,
            "truth_covered": truth_covered,
            "recalled": recalled,
            "reported": reported,
            "true_reported": true_reported,
        },
        "exact_groups": sum(m.exact_groups for m in day_metrics),
        "infected_groups": sum(m.infected_groups for m in day_metrics),
        "rounds_with_errors": sum(1 for m in day_metrics if m.error),
        "decoy_rounds": sum(1 for m in day_metrics if m.decoy),
        "poi_tv_mean": sum(tvs) / len(tvs) if tvs else None,
        "truth_mode": sorted(modes)[0] if len(modes) == 1 else "mixed",
    }


def _targeted_attack_report(
    world: World, ha: MaliciousTargetedHA, audit_report: AuditReport
) -> dict:
    policy = world.config.policy
    inferred = sorted(ha.inferred_contacts())
    t1 = world.config.days * DAY_S
    t0 = max(0.0, t1 - policy.lookback_s)
    cache: dict[tuple[float, float], ContactEngine] = {}
    true_contacts, _ = _truth_contact_users(
        world.truth_store, ha.target, t0, t1, policy, cache
    )
    true_sorted = sorted(true_contacts)
    hits = len(set(inferred) & true_contacts)
    return {
        "target": ha.target,
        "attack_rounds": sorted(ha.attack_rounds),
        "n_target_results": len(ha.target_group_results()),
        "inferred_contacts": inferred,
        "true_target_contacts": true_sorted,
        "inference_precision": hits / len(inferred) if inferred else None,
        "inference_recall": hits / len(true_sorted) if true_sorted else None,
        "audit_detected": any(
            v.user_id == ha.target for v in audit_report.violations
        ),
    }


def _reid_attack_report(
    lp: LocationProvider, infections: list[list[UserId]]
) -> dict:
    history = []
    for retained in lp.export_evidence():
        msg = decode_message(retained.envelope.message_bytes)
        if isinstance(msg, ContactTracingRequest):
            history.append(msg)
    truth = {user for day in infections for user in day}
    result = evaluate_reid(history, truth)
    return {
        "strategy": result.strategy,
        "n_requests": len(history),
        "n_distinct_ids": result.n_distinct,
        "n_guessed": result.n_guessed,
        "repeated_fraction": result.repeated_fraction,
        "precision": result.precision,
        "recall": result.recall,
        "base_rate": result.base_rate,
    }


def run_simulation(
    config: ScenarioConfig,
    seed: int,
    out_dir: str | Path,
    adversary: str = "none",
    workers: int = 1,
) -> RunResult:
    if adversary not in ADVERSARY_MODES:
        raise ScenarioError(f"unknown adversary mode: {adversary!r}")
    if workers < 1:
        raise ScenarioError("workers must be at least 1")
    targeted = adversary in ("ha-targeted", "both")
    if targeted and config.days < 2:
        raise ScenarioError("the targeted attack needs at least 2 days")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "audit").mkdir(exist_ok=True)

    world = build_world(config, seed)
    infections = seed_infections(world, seed)

    keypairs = {
        party: SigningKeyPair.generate(derive_rng(seed, f"keys:{party}"))
        for party in (HA, LP, IDP, ITPA)
    }
    public_keys = {p: kp.public_bytes for p, kp in keypairs.items()}
    net = SimNet(public_keys)
    lp = LocationProvider(
        store=world.lp_store,
        pois=world.pois,
        policy=config.policy,
        keypair=keypairs[LP],
        rng=derive_rng(seed, "lp-keys"),
    )
    idp = IdentityProvider(world.registry, keypairs[IDP], derive_rng(seed, "idp"))
    itpa = IndependentAuthority(keypairs[ITPA])
    if targeted:
        ha: HealthAuthority = MaliciousTargetedHA(
            config.grouping,
            keypairs[HA],
            derive_rng(seed, "ha"),
            target=world.covered_users[0] if world.covered_users else world.users[0],
            attack_rounds=(0, 1),
            registry_size_hint=config.registry_size,
        )
    else:
        ha = HealthAuthority(
            config.grouping,
            keypairs[HA],
            derive_rng(seed, "ha"),
            registry_size_hint=config.registry_size,
        )
    net.register(LP, lp)
    net.register(IDP, idp)
    net.register(ITPA, itpa)

    daily_audits: list[AuditReport] = []
    for day in range(config.days):
        now = (day + 1) * DAY_S
        net.now = now
        lp.now = now
        ha.run_round(net, infections[day], day=day, now=now)

        evidence = [r.envelope for r in lp.export_evidence()]
        day_report = audit(evidence, itpa.export_records(), public_keys)
        daily_audits.append(day_report)
        write_audit_report(day_report, out / "audit" / f"day_{day:02d}.json")

    transcript_path = out / "transcript.jsonl"
    net.write_transcript(transcript_path)
    lp.write_evidence(out / "evidence.jsonl")
    itpa.write_records(out / "itpa_records.jsonl")
    write_public_registry(out / "public_keys.json", public_keys)

    replay_report = replay_file(transcript_path, public_keys)
    final_audit = daily_audits[-1] if daily_audits else AuditReport()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            day_metrics = list(
                pool.map(lambda o: _day_metrics(world, o), ha.outcomes)
            )
    else:
        day_metrics = [_day_metrics(world, o) for o in ha.outcomes]
    day_metrics.sort(key=lambda m: m.day)

    attacks: dict = {}
    if targeted:
        assert isinstance(ha, MaliciousTargetedHA)
        attacks["ha_targeted"] = _targeted_attack_report(world, ha, final_audit)
    if adversary in ("lp-reid", "both"):
        attacks["lp_reid"] = _reid_attack_report(lp, infections)

    transcript_sha = hashlib.sha256(transcript_path.read_bytes()).hexdigest()
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": {
            "name": config.name,
            "population": config.population,
            "days": config.days,
            "lp_coverage": config.lp_coverage,
            "location_noise_m": config.location_noise_m,
            "registry_size": config.registry_size,
            "daily_positives": config.daily_positives,
        },
        "seed": seed,
        "adversary": adversary,
        "rounds": [m.to_json_dict() for m in day_metrics],
        "metrics": _aggregate_metrics(day_metrics),
        "audit": {
            "ok": final_audit.ok,
            "aborted": final_audit.aborted,
            "n_violations": len(final_audit.violations),
            "n_coverage_findings": len(final_audit.coverage_findings),
            "n_integrity_errors": len(final_audit.integrity_errors),
            "violations": [v.to_json_dict() for v in final_audit.violations],
        },
        "integrity": {
            "transcript_replay_ok": replay_report.ok,
            "transcript_entries": replay_report.n_entries,
            "transcript_sha256": transcript_sha,
        },
        "attacks": attacks,
        "artifacts": {
            "transcript": "transcript.jsonl",
            "evidence": "evidence.jsonl",
            "itpa_records": "itpa_records.jsonl",
            "public_keys": "public_keys.json",
            "audit_dir": "audit",
        },
    }
    jsonschema.validate(report, _load_report_schema())
    report_text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    (out / "run_report.json").write_text(report_text, encoding="utf-8")

    return RunResult(
        config=config,
        seed=seed,
        adversary=adversary,
        out_dir=out,
        outcomes=ha.outcomes,
        day_metrics=day_metrics,
        audit_report=final_audit,
        replay_ok=replay_report.ok,
        report=report,
    )
