"""Acceptance gate: one test per shipped guarantee, nine in all.

Each test prints a single verdict line (run pytest with -s to watch them
go by) and then asserts the same condition, so a failure shows both the
line and the offending detail. Numeric margins were measured on the
reference runs first and then frozen here.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
import re
import statistics
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from geotrace.actors.ha import HealthAuthority
from geotrace.actors.intermediaries import (
    IdentityProvider,
    IndependentAuthority,
    RangeRegistry,
    read_itpa_records,
)
from geotrace.actors.lp import LocationProvider, read_evidence
from geotrace.adversary import MaliciousTargetedHA, reid_experiment
from geotrace.audit import audit
from geotrace.codec import decode_message
from geotrace.crypto import (
    EnvelopeError,
    SigningKeyPair,
    decrypt_group_result,
    derive_rng,
    load_public_registry,
)
from geotrace.geo.contacts import ContactEngine
from geotrace.geo.oracle import oracle_contacts
from geotrace.geo.poi import (
    distribution_from_counts,
    poi_visits,
    visit_category_counts,
)
from geotrace.geo.store import LocationSample, TraceStore
from geotrace.model import (
    HA,
    IDP,
    ITPA,
    LP,
    PARTIES,
    ContactPolicy,
    ContactTracingReply,
    ContactTracingRequest,
    KeysReply,
    is_user_id,
)
from geotrace.runner import run_simulation
from geotrace.simnet import SimNet, load_transcript
from geotrace.synthgen import (
    DEFAULT_GROUPING,
    ScenarioConfig,
    build_world,
    load_scenario,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

KEYPAIRS = {
    party: SigningKeyPair.generate(derive_rng(424_242, f"keys:{party}"))
    for party in PARTIES
}
PUBLIC = {party: kp.public_bytes for party, kp in KEYPAIRS.items()}


def _verdict(label: str, ok: bool) -> None:
    print(f"acceptance {label}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="module")
def baseline(tmp_path_factory):
    """The reference full-coverage noise-free run plus its rebuilt world."""
    config = load_scenario(str(SCENARIOS / "honest.toml"))
    out = tmp_path_factory.mktemp("baseline")
    started = time.perf_counter()
    result = run_simulation(config, seed=42, out_dir=out)
    elapsed = time.perf_counter() - started
    world = build_world(config, 42)
    return config, result, elapsed, world


def test_criterion_1_end_to_end_exactness(baseline):
    config, result, elapsed, world = baseline
    assert config.population <= 200
    assert config.days == 7
    assert config.lp_coverage == 1.0
    assert config.location_noise_m == 0.0

    policy = config.policy
    mismatches = []
    checked = 0
    for outcome in result.outcomes:
        if outcome.request is None or outcome.report is None:
            continue
        results = dict(outcome.report.per_infected_group)
        engine = ContactEngine(
            world.truth_store,
            outcome.sim_time - policy.lookback_s,
            outcome.sim_time,
            policy,
        )
        for idx in sorted(outcome.infected_indices):
            group = outcome.request.groups[idx]
            truth: set[str] = set()
            for member in group.member_ids:
                truth |= {hit.contact for hit in engine.contacts(member)}
            truth -= set(group.member_ids)
            checked += 1
            if truth != set(results[idx].risk_contacts):
                mismatches.append((outcome.day, idx))

    ok = (
        not mismatches
        and checked >= 5
        and result.exit_code == 0
        and elapsed < 60.0
    )
    _verdict("1 end-to-end exactness", ok)
    assert mismatches == []
    assert checked >= 5
    assert result.exit_code == 0
    assert elapsed < 60.0, f"honest run took {elapsed:.1f}s"


def _mini_population(rng):
    """A compact random world: up to 50 users drifting between shared spots."""
    n_users = int(rng.integers(5, 51))
    users = [f"+34650{i:06d}" for i in range(n_users)]
    bin_width = int(rng.choice([60, 90, 120]))
    policy = ContactPolicy(
        direct_distance_m=float(rng.uniform(1.5, 3.5)),
        direct_min_duration_s=bin_width * int(rng.integers(1, 4)),
        indirect_distance_m=float(rng.uniform(4.0, 8.0)),
        indirect_lag_s=int(rng.choice([120, 240, 600])),
        bin_width_s=bin_width,
        max_gap_s=int(rng.choice([bin_width, 3 * bin_width])),
        error_aware=bool(rng.integers(0, 2)),
    )
    spots = rng.uniform(0.0, 160.0, size=(4, 2))
    horizon = 6_000.0
    store = TraceStore.for_policy(policy)
    for user in users:
        t = float(rng.uniform(0.0, 900.0))
        for _ in range(int(rng.integers(2, 6))):
            if rng.random() < 0.7:
                center = spots[int(rng.integers(0, len(spots)))]
            else:
                center = rng.uniform(0.0, 160.0, size=2)
            for _ in range(int(rng.integers(1, 8))):
                t += float(rng.uniform(40.0, 500.0))
                if t >= horizon:
                    break
                pos = center + rng.normal(0.0, 3.0, size=2)
                store.add(
                    LocationSample(
                        user,
                        t,
                        float(pos[0]),
                        float(pos[1]),
                        accuracy_m=float(rng.uniform(0.0, 3.0)),
                    )
                )
    t0 = float(rng.choice([0.0, 600.0]))
    t1 = float(rng.uniform(3_500.0, horizon))
    return store, users, t0, t1, policy


def test_criterion_2_engine_equals_brute_force():
    divergences = 0
    total_hits = 0
    for trial in range(100):
        rng = np.random.default_rng(61_000 + trial)
        store, users, t0, t1, policy = _mini_population(rng)
        engine = ContactEngine(store, t0, t1, policy)
        subjects = rng.choice(users, size=min(6, len(users)), replace=False)
        for subject in subjects:
            expected = oracle_contacts(store, str(subject), t0, t1, policy)
            got = engine.contacts(str(subject))
            total_hits += len(expected)
            if got != expected:
                divergences += 1
    ok = divergences == 0 and total_hits > 0
    _verdict("2 engine equals brute force", ok)
    assert divergences == 0
    assert total_hits > 0


def _strings_within(value):
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _strings_within(key)
            yield from _strings_within(item)
    elif isinstance(value, (list, tuple, set, frozenset)):
        for item in value:
            yield from _strings_within(item)
    elif dataclasses.is_dataclass(value) and not isinstance(value, type):
        for field in dataclasses.fields(value):
            yield from _strings_within(getattr(value, field.name))


def test_criterion_3_privacy_mechanics(baseline):
    config, result, _, _ = baseline
    out = result.out_dir
    entries = load_transcript(out / "transcript.jsonl")

    released: dict[str, dict[int, bytes]] = {}
    replies: list[ContactTracingReply] = []
    requests: dict[str, ContactTracingRequest] = {}
    for entry in entries:
        message = decode_message(entry.envelope.message_bytes)
        if (
            entry.sender == ITPA
            and entry.recipient == HA
            and isinstance(message, KeysReply)
            and message.error is None
        ):
            released.setdefault(message.tx, {}).update(dict(message.entries))
        elif (
            entry.sender == LP
            and entry.recipient == HA
            and isinstance(message, ContactTracingReply)
        ):
            replies.append(message)
        elif (
            entry.sender == HA
            and entry.recipient == LP
            and isinstance(message, ContactTracingRequest)
        ):
            requests[message.tx] = message

    # (a) every key the HA ever received fails on every random-group
    # ciphertext, while the released keys do open their own groups
    held_keys = [key for keys in released.values() for key in keys.values()]
    attempts = 0
    breaches = 0
    releases_work = True
    for reply in replies:
        infected = released.get(reply.tx, {})
        for idx, ciphertext in reply.group_ciphertexts:
            if idx in infected:
                try:
                    decrypt_group_result(infected[idx], reply.tx, idx, ciphertext)
                except EnvelopeError:
                    releases_work = False
                continue
            for key in held_keys:
                attempts += 1
                try:
                    decrypt_group_result(key, reply.tx, idx, ciphertext)
                except EnvelopeError:
                    continue
                breaches += 1
    ok_sealed = attempts > 0 and breaches == 0 and releases_work

    # (b) nothing the mediator sends or receives carries a user id
    leaked = []
    for entry in entries:
        if ITPA not in (entry.sender, entry.recipient):
            continue
        message = decode_message(entry.envelope.message_bytes)
        leaked.extend(
            s
            for s in _strings_within((message, entry.envelope))
            if is_user_id(s)
        )
    records_text = (out / "itpa_records.jsonl").read_text()
    ok_blind = not leaked and re.search(r"\+[0-9]{8,15}", records_text) is None

    # (c) anonymity floors hold on the wire, for every request
    records = {r.tx: r for r in read_itpa_records(out / "itpa_records.jsonl")}
    rows = {row["tx"]: row for row in result.report["rounds"] if row["tx"]}
    floor_breaks = []
    for tx, request in requests.items():
        declared = records[tx].infected_group_indices
        m = sum(len(request.groups[i].member_ids) for i in declared)
        total = sum(len(g.member_ids) for g in request.groups)
        n = total - m
        k = len(request.groups)
        l = len(declared)
        if n < 10 * m or k < 5 * l:
            floor_breaks.append(tx)
        if (rows[tx]["m"], rows[tx]["n"], rows[tx]["k"], rows[tx]["l"]) != (
            m,
            n,
            k,
            l,
        ):
            floor_breaks.append(f"{tx}: report row disagrees with the wire")
    ok_floors = not floor_breaks and len(requests) == config.days

    ok = ok_sealed and ok_blind and ok_floors
    _verdict("3 privacy mechanics", ok)
    assert breaches == 0 and attempts > 0 and releases_work
    assert leaked == []
    assert ok_blind
    assert floor_breaks == []
    assert len(requests) == config.days


def _audit_materials(seed: int, malicious: bool):
    """Protocol-only rounds (empty location store) yielding audit inputs."""
    policy = ContactPolicy(bin_width_s=300, direct_min_duration_s=900)
    registry = RangeRegistry(5_000)
    net = SimNet(PUBLIC)
    lp = LocationProvider(
        TraceStore.for_policy(policy),
        [],
        policy,
        KEYPAIRS[LP],
        derive_rng(seed, "lp"),
    )
    idp = IdentityProvider(registry, KEYPAIRS[IDP], derive_rng(seed, "idp"))
    itpa = IndependentAuthority(KEYPAIRS[ITPA])
    net.register(LP, lp)
    net.register(IDP, idp)
    net.register(ITPA, itpa)
    target = registry.format_id(4_321)
    if malicious:
        grouping = dataclasses.replace(DEFAULT_GROUPING, decoy_probability=0.0)
        ha: HealthAuthority = MaliciousTargetedHA(
            grouping,
            KEYPAIRS[HA],
            derive_rng(seed, "ha"),
            target=target,
            attack_rounds=(0, 1),
            registry_size_hint=len(registry),
        )
    else:
        ha = HealthAuthority(
            DEFAULT_GROUPING,
            KEYPAIRS[HA],
            derive_rng(seed, "ha"),
            registry_size_hint=len(registry),
        )
    for day in range(3):
        positives = {registry.format_id(1_000 + 10 * day + j) for j in range(2)}
        now = (day + 1) * 86_400.0
        net.now = now
        lp.now = now
        outcome = ha.run_round(net, positives, day=day, now=now)
        assert outcome.error is None
    evidence = [r.envelope for r in lp.export_evidence()]
    return evidence, itpa.export_records(), target


def test_criterion_4_audit_complete_and_sound():
    detections = 0
    for seed in range(9_000, 9_050):
        evidence, records, target = _audit_materials(seed, malicious=True)
        report = audit(evidence, records, PUBLIC)
        caught = [v for v in report.violations if v.user_id == target]
        if not caught:
            continue
        violation = caught[0]
        if len(violation.evidence_refs) < 2:
            continue
        for ref in violation.evidence_refs:
            evidence[ref].verify(PUBLIC[HA])
        detections += 1

    clean = 0
    for seed in range(9_500, 9_550):
        evidence, records, _ = _audit_materials(seed, malicious=False)
        report = audit(evidence, records, PUBLIC)
        if report.ok:
            clean += 1

    ok = detections == 50 and clean == 50
    _verdict("4 audit completeness and soundness", ok)
    assert detections == 50
    assert clean == 50


def test_criterion_5_singleton_frequency_attack():
    compliant = reid_experiment(
        n_seeds=20,
        n_rounds=35,
        m_per_round=3,
        grouping=DEFAULT_GROUPING,
        naive=False,
    ).summary()
    naive = reid_experiment(
        n_seeds=20,
        n_rounds=35,
        m_per_round=3,
        grouping=DEFAULT_GROUPING,
        naive=True,
    ).summary()

    # Reference measurement, frozen: compliant precision 0.1149 with base
    # rate 0.1095 (overlapping intervals, gap 0.0054); naive precision
    # 0.8232 with base rate 0.0333 (margin 0.79) and recall 0.97.
    gap = abs(compliant["precision_mean"] - compliant["base_rate_mean"])
    margin = naive["precision_mean"] - naive["base_rate_mean"]
    checks = {
        "compliant intervals overlap": compliant["ci_overlap"] is True,
        "compliant gap under 0.02": gap < 0.02,
        "compliant attack degrades to singletons":
            compliant["strategies"] == ["singletons"],
        "naive margin over 0.5": margin > 0.5,
        "naive repetition is the tell": naive["strategies"] == ["repeated-ids"],
        "naive recall over 0.9": naive["recall_mean"] > 0.9,
    }
    ok = all(checks.values())
    _verdict("5 re-identification countermeasure", ok)
    assert ok, {name: value for name, value in checks.items() if not value}


COVERAGE_PROBE = ScenarioConfig(
    name="coverage-probe",
    population=48,
    days=3,
    area_m=900.0,
    pois_per_category=1,
    registry_size=5_000,
    daily_positives=3,
    location_noise_m=0.0,
)
COVERAGE_SEEDS = 8

# Contact pairs cluster by household, so per-seed recall swings widely
# (measured 0.21 to 0.54 at p = 0.62 over these seeds). The band is four
# standard errors of the per-seed rates, never less than 0.02; the
# finite-population gap between c(c-1)/(N(N-1)) and p squared stays
# under 0.015 at this population.
COVERAGE_SE_MULT = 4.0
COVERAGE_ABS_FLOOR = 0.02
COVERAGE_FINITE_GAP = 0.015


def test_criterion_6_recall_tracks_squared_coverage(baseline, tmp_path):
    _, result, _, _ = baseline
    checks = {
        "full coverage recalls everything":
            result.report["metrics"]["recall_full"] == 1.0,
    }
    measured = {}
    population = COVERAGE_PROBE.population
    for p in (0.3, 0.62):
        c = round(p * population)
        # Exactly c of N users are covered, so a fixed pair survives with
        # the hypergeometric probability, which p squared approximates.
        p_pair = c * (c - 1) / (population * (population - 1))
        rates = []
        truth = 0
        coverable = 0
        recalled = 0
        for offset in range(COVERAGE_SEEDS):
            cfg = dataclasses.replace(COVERAGE_PROBE, lp_coverage=p)
            run = run_simulation(
                cfg, seed=600 + offset, out_dir=tmp_path / f"p{p}-{offset}"
            )
            t = sum(m.truth_pairs_full for m in run.day_metrics)
            r = sum(m.recalled_pairs for m in run.day_metrics)
            truth += t
            coverable += sum(m.truth_pairs_covered for m in run.day_metrics)
            recalled += r
            if t:
                rates.append(r / t)
        rate = recalled / truth
        spread = statistics.stdev(rates) / math.sqrt(len(rates))
        tolerance = max(COVERAGE_SE_MULT * spread, COVERAGE_ABS_FLOOR)
        measured[p] = (rate, p_pair, truth, tolerance)
        # With zero noise the provider finds every pair it can see, so the
        # only loss is coverage itself.
        checks[f"coverage {p} recalls exactly the coverable pairs"] = (
            recalled == coverable
        )
        checks[f"coverage {p} tracks the pair survival rate"] = (
            truth >= 200 and abs(rate - p_pair) <= tolerance
        )
        checks[f"coverage {p} survival approximates p squared"] = (
            abs(p_pair - p * p) <= COVERAGE_FINITE_GAP
        )
    ok = all(checks.values())
    _verdict("6 recall tracks squared coverage", ok)
    assert ok, (checks, measured)


def test_criterion_7_byte_identical_reruns(tmp_path):
    probe = ScenarioConfig(
        name="determinism-probe",
        population=24,
        days=2,
        area_m=700.0,
        pois_per_category=1,
        registry_size=4_000,
        daily_positives=2,
        location_noise_m=0.0,
    )
    first = run_simulation(probe, seed=11, out_dir=tmp_path / "first")
    second = run_simulation(probe, seed=11, out_dir=tmp_path / "second")
    threaded = run_simulation(
        probe, seed=11, out_dir=tmp_path / "threaded", workers=3
    )
    names = ("transcript.jsonl", "run_report.json")
    rerun_same = all(
        (first.out_dir / name).read_bytes() == (second.out_dir / name).read_bytes()
        for name in names
    )
    threads_same = all(
        (first.out_dir / name).read_bytes()
        == (threaded.out_dir / name).read_bytes()
        for name in names
    )
    ok = rerun_same and threads_same
    _verdict("7 byte-identical reruns", ok)
    assert rerun_same
    assert threads_same


def test_criterion_8_evidence_tamper_detection(baseline, tmp_path):
    _, result, _, _ = baseline
    source = result.out_dir / "evidence.jsonl"
    records = read_itpa_records(result.out_dir / "itpa_records.jsonl")
    public = load_public_registry(result.out_dir / "public_keys.json")

    untouched = audit(read_evidence(source), records, public)
    data = source.read_bytes()
    assert data.endswith(b"\n")

    rng = random.Random(8_800)
    mutated_path = tmp_path / "evidence.jsonl"
    missed = []
    for trial in range(100):
        # The final byte is the file's trailing newline: record framing,
        # not evidence content, and its only whitespace-preserving flip
        # leaves every envelope intact. All content bytes are fair game.
        bit = rng.randrange((len(data) - 1) * 8)
        mutated = bytearray(data)
        mutated[bit // 8] ^= 1 << (bit % 8)
        mutated_path.write_bytes(bytes(mutated))
        try:
            envelopes = read_evidence(mutated_path)
        except (ValueError, KeyError):
            continue
        if audit(envelopes, records, public).ok:
            missed.append(bit)

    ok = untouched.ok and not missed
    _verdict("8 evidence tamper detection", ok)
    assert untouched.ok
    assert missed == []


def test_criterion_9_poi_distribution_identities(baseline):
    config, result, _, world = baseline
    policy = config.policy
    tol = 1e-9
    problems = []
    emitted = 0
    for outcome in result.outcomes:
        if outcome.request is None:
            continue
        t1 = outcome.sim_time
        t0 = t1 - policy.lookback_s
        dists: dict[int, dict[str, float]] = {}
        totals: dict[int, int] = {}
        pooled: Counter = Counter()
        for group in outcome.request.groups:
            counts: Counter = Counter()
            for member in group.member_ids:
                counts.update(
                    visit_category_counts(
                        poi_visits(
                            world.lp_store, world.pois, member, t0, t1, policy
                        )
                    )
                )
            dists[group.group_index] = distribution_from_counts(counts)
            totals[group.group_index] = sum(counts.values())
            pooled.update(counts)

        for idx, dist in dists.items():
            emitted += 1
            if dist and abs(sum(dist.values()) - 1.0) > tol:
                problems.append((outcome.day, idx, "not normalized"))

        overall = outcome.overall_poi
        if overall and abs(sum(overall.values()) - 1.0) > tol:
            problems.append((outcome.day, "overall", "not normalized"))

        visible = dict(outcome.report.per_infected_group) if outcome.report else {}
        for idx, res in visible.items():
            if res.poi_distribution != dists[idx]:
                problems.append((outcome.day, idx, "decrypted mismatch"))

        grand = sum(totals.values())
        mixture: dict[str, float] = {}
        for idx, dist in dists.items():
            for category, share in dist.items():
                mixture[category] = (
                    mixture.get(category, 0.0) + totals[idx] * share
                )
        if grand:
            mixture = {c: v / grand for c, v in mixture.items()}
        keys = set(mixture) | set(overall)
        if any(
            abs(mixture.get(c, 0.0) - overall.get(c, 0.0)) > tol for c in keys
        ):
            problems.append((outcome.day, "overall", "mixture identity"))

        recomputed = distribution_from_counts(pooled)
        if set(recomputed) != set(overall) or any(
            abs(recomputed[c] - overall[c]) > tol for c in recomputed
        ):
            problems.append((outcome.day, "overall", "pooled recompute"))

    ok = not problems and emitted >= 20
    _verdict("9 poi distribution identities", ok)
    assert problems == []
    assert emitted >= 20
