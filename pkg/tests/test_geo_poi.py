"""POI visit extraction: claiming rules, run lengths, distribution identity."""

import numpy as np
import pytest

from geotrace.geo.poi import (
    PoiVisit,
    assign_poi_bins,
    distribution_from_counts,
    poi_distribution,
    poi_visits,
    visit_category_counts,
)
from geotrace.geo.store import LocationSample, Poi, TraceStore
from geotrace.model import ContactPolicy

U = "+34600000001"
V = "+34600000002"

# 5-bin minimum visit, one-bin resampling reach.
POLICY = ContactPolicy(poi_visit_min_s=300, max_gap_s=30)
W = POLICY.bin_width_s


def put(store, user, b, x, y):
    store.add(LocationSample(user, (b + 0.5) * W, x, y))


def binned(store, user, t0=0.0, t1=3600.0):
    return store.resample(user, t0, t1, POLICY)


def test_bins_outside_every_radius_are_unassigned():
    store = TraceStore.for_policy(POLICY)
    put(store, U, 0, 100.0, 100.0)
    pois = [Poi(poi_id=0, category="grocery", x=0.0, y=0.0, radius_m=10.0)]
    assert assign_poi_bins(binned(store, U), pois) == []


def test_overlapping_pois_claimed_by_nearest_center():
    store = TraceStore.for_policy(POLICY)
    put(store, U, 0, 4.0, 0.0)
    pois = [
        Poi(poi_id=0, category="grocery", x=0.0, y=0.0, radius_m=10.0),
        Poi(poi_id=1, category="transit", x=6.0, y=0.0, radius_m=10.0),
    ]
    assigned = assign_poi_bins(binned(store, U), pois)
    assert len(assigned) == 1
    assert assigned[0][1].poi_id == 1


def test_exact_distance_tie_breaks_to_lower_id():
    store = TraceStore.for_policy(POLICY)
    put(store, U, 0, 5.0, 0.0)
    pois = [
        Poi(poi_id=7, category="transit", x=10.0, y=0.0, radius_m=8.0),
        Poi(poi_id=2, category="grocery", x=0.0, y=0.0, radius_m=8.0),
    ]
    assigned = assign_poi_bins(binned(store, U), pois)
    assert assigned[0][1].poi_id == 2


def test_visit_requires_min_consecutive_bins():
    pois = [Poi(poi_id=0, category="cafe", x=0.0, y=0.0, radius_m=10.0)]
    store = TraceStore.for_policy(POLICY)
    for b in range(4):  # one bin short of the 5-bin minimum
        put(store, U, b, 1.0, 1.0)
    assert poi_visits(store, pois, U, 0.0, 3600.0, POLICY) == []

    store = TraceStore.for_policy(POLICY)
    for b in range(5):
        put(store, U, b, 1.0, 1.0)
    visits = poi_visits(store, pois, U, 0.0, 3600.0, POLICY)
    assert len(visits) == 1
    visit = visits[0]
    assert visit == PoiVisit(
        user=U,
        poi_id=0,
        category="cafe",
        start_t=0.0,
        end_t=5 * W,
        dwell_s=5 * W,
    )


def test_gap_splits_a_run():
    pois = [Poi(poi_id=0, category="cafe", x=0.0, y=0.0, radius_m=10.0)]
    store = TraceStore.for_policy(POLICY)
    for b in list(range(5)) + list(range(6, 11)):
        put(store, U, b, 0.0, 0.0)
    visits = poi_visits(store, pois, U, 0.0, 3600.0, POLICY)
    assert [(v.start_t, v.end_t) for v in visits] == [
        (0.0, 5 * W),
        (6 * W, 11 * W),
    ]


def test_switching_pois_splits_a_run():
    pois = [
        Poi(poi_id=0, category="cafe", x=0.0, y=0.0, radius_m=10.0),
        Poi(poi_id=1, category="gym", x=100.0, y=0.0, radius_m=10.0),
    ]
    store = TraceStore.for_policy(POLICY)
    for b in range(5):
        put(store, U, b, 0.0, 0.0)
    for b in range(5, 10):
        put(store, U, b, 100.0, 0.0)
    visits = poi_visits(store, pois, U, 0.0, 3600.0, POLICY)
    assert [v.category for v in visits] == ["cafe", "gym"]


def test_category_counts_and_normalization():
    visits = [
        PoiVisit(U, 0, "cafe", 0.0, 300.0, 300.0),
        PoiVisit(U, 1, "gym", 600.0, 900.0, 300.0),
        PoiVisit(V, 2, "cafe", 0.0, 300.0, 300.0),
    ]
    counts = visit_category_counts(visits)
    assert counts == {"cafe": 2, "gym": 1}
    dist = distribution_from_counts(counts)
    assert dist == pytest.approx({"cafe": 2 / 3, "gym": 1 / 3})
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)


def test_empty_counts_give_empty_distribution():
    assert distribution_from_counts(visit_category_counts([])) == {}


def test_group_mixture_reproduces_pooled_distribution():
    # Count-weighted recombination of per-group distributions must equal
    # the pooled distribution, which is what makes per-group reporting an
    # honest decomposition.
    rng = np.random.default_rng(7)
    users = [f"+3460000{i:04d}" for i in range(12)]
    pois = [
        Poi(poi_id=i, category=c, x=200.0 * i, y=0.0, radius_m=12.0)
        for i, c in enumerate(["cafe", "gym", "grocery", "transit"])
    ]
    store = TraceStore.for_policy(POLICY)
    for user in users:
        visits = rng.integers(1, 4)
        b = 0
        for _ in range(visits):
            poi = pois[rng.integers(0, len(pois))]
            stay = int(rng.integers(5, 9))
            for k in range(stay):
                put(store, user, b + k, poi.x + 1.0, 0.5)
            b += stay + 2
    window = (0.0, 86_400.0)

    pooled = poi_distribution(store, pois, users, *window, POLICY)
    groups = [users[0:5], users[5:8], users[8:12]]
    mixture: dict[str, float] = {}
    total = 0
    for group in groups:
        counts = visit_category_counts(
            v
            for user in group
            for v in poi_visits(store, pois, user, *window, POLICY)
        )
        weight = sum(counts.values())
        total += weight
        for category, share in distribution_from_counts(counts).items():
            mixture[category] = mixture.get(category, 0.0) + weight * share
    mixture = {c: s / total for c, s in mixture.items()}

    assert set(mixture) == set(pooled)
    for category in pooled:
        assert mixture[category] == pytest.approx(pooled[category], abs=1e-12)
