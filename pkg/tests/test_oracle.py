"""Brute-force oracle: guard rails plus randomized engine equivalence.

The equivalence trials rebuild small synthetic populations with clustered
random walks and compare every ContactHit field between the indexed engine
and the exhaustive pairwise scan. Any divergence in radii handling, lag
windows, duration thresholds, or direct-pair exclusion shows up here.
"""

import numpy as np
import pytest

from geotrace.geo.contacts import ContactEngine
from geotrace.geo.oracle import (
    MAX_ORACLE_BIN_PAIRS,
    MAX_ORACLE_USERS,
    OracleGuardError,
    oracle_contacts,
)
from geotrace.geo.store import LocationSample, TraceStore
from geotrace.model import ContactPolicy


def test_user_count_guard():
    policy = ContactPolicy()
    store = TraceStore.for_policy(policy)
    for i in range(MAX_ORACLE_USERS + 1):
        store.add(LocationSample(f"+346000{i:05d}", 30.0, float(i), 0.0))
    with pytest.raises(OracleGuardError):
        oracle_contacts(store, "+34600000000", 0.0, 3600.0, policy)


def test_bin_pair_guard():
    policy = ContactPolicy()
    store = TraceStore.for_policy(policy)
    store.add(LocationSample("+34600000001", 30.0, 0.0, 0.0))
    store.add(LocationSample("+34600000002", 30.0, 1.0, 0.0))
    too_long = (MAX_ORACLE_BIN_PAIRS + 1) * policy.bin_width_s
    with pytest.raises(OracleGuardError):
        oracle_contacts(store, "+34600000001", 0.0, float(too_long), policy)


def test_unknown_subject_yields_nothing():
    policy = ContactPolicy()
    store = TraceStore.for_policy(policy)
    store.add(LocationSample("+34600000001", 30.0, 0.0, 0.0))
    assert oracle_contacts(store, "+34600000099", 0.0, 3600.0, policy) == []


def test_oracle_matches_hand_computed_case():
    policy = ContactPolicy(
        direct_min_duration_s=120, indirect_lag_s=180, max_gap_s=30
    )
    w = policy.bin_width_s
    store = TraceStore.for_policy(policy)
    a, b, c = "+34600000001", "+34600000002", "+34600000003"
    for bin_i in (0, 1):
        store.add(LocationSample(a, (bin_i + 0.5) * w, 0.0, 0.0))
        store.add(LocationSample(b, (bin_i + 0.5) * w, 1.5, 0.0))
    # c walks through a's spot two bins later: indirect only
    store.add(LocationSample(c, (3 + 0.5) * w, 3.0, 0.0))
    hits = oracle_contacts(store, a, 0.0, 1800.0, policy)
    assert [(h.contact, h.kind) for h in hits] == [(b, "direct"), (c, "indirect")]
    assert hits[0].overlap_s == 2 * w
    assert hits[1].overlap_s == 1.0


def _random_world(rng):
    n_users = int(rng.integers(4, 26))
    users = [f"+34610{i:06d}" for i in range(n_users)]
    hotspots = rng.uniform(0.0, 120.0, size=(3, 2))
    bin_width = int(rng.choice([60, 120]))
    policy = ContactPolicy(
        direct_distance_m=float(rng.uniform(1.5, 3.0)),
        direct_min_duration_s=bin_width * int(rng.integers(1, 4)),
        indirect_distance_m=float(rng.uniform(4.0, 7.0)),
        indirect_lag_s=int(rng.choice([120, 300, 600])),
        bin_width_s=bin_width,
        max_gap_s=int(rng.choice([90, 180])),
        error_aware=bool(rng.integers(0, 2)),
    )
    store = TraceStore.for_policy(policy)
    horizon = 7200.0
    for user in users:
        anchor = hotspots[rng.integers(0, len(hotspots))]
        pos = anchor + rng.normal(0.0, 4.0, size=2)
        t = float(rng.uniform(0.0, 600.0))
        for _ in range(int(rng.integers(8, 40))):
            t += float(rng.uniform(20.0, 400.0))
            if t >= horizon:
                break
            pos = pos + rng.normal(0.0, 2.5, size=2)
            if rng.random() < 0.15:  # jump to another hotspot
                pos = hotspots[rng.integers(0, len(hotspots))] + rng.normal(
                    0.0, 4.0, size=2
                )
            acc = float(rng.uniform(0.0, 3.0)) if policy.error_aware else 0.0
            store.add(
                LocationSample(user, t, float(pos[0]), float(pos[1]), accuracy_m=acc)
            )
    t0 = float(rng.choice([0.0, 480.0]))
    t1 = float(rng.uniform(4000.0, horizon))
    return store, users, t0, t1, policy


@pytest.mark.parametrize("trial", range(30))
def test_engine_matches_oracle_on_random_worlds(trial):
    rng = np.random.default_rng(52_000 + trial)
    store, users, t0, t1, policy = _random_world(rng)
    engine = ContactEngine(store, t0, t1, policy)
    subjects = rng.choice(users, size=min(5, len(users)), replace=False)
    for subject in subjects:
        expected = oracle_contacts(store, str(subject), t0, t1, policy)
        got = engine.contacts(str(subject))
        assert got == expected
