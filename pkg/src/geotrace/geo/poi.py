"""POI visit extraction and category distributions.

A visit is a long-enough run of consecutive bins whose position falls
inside a POI radius; when radii overlap, the nearest center claims the bin.
Distributions are normalized visit counts per category, so partitioning a
user set into groups and recombining the group distributions (weighted by
visit counts) reproduces the pooled distribution exactly up to float error.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..model import ContactPolicy, UserId
from .store import BinnedTrace, Poi, TraceStore


@dataclass(frozen=True)
class PoiVisit:
    user: UserId
    poi_id: int
    category: str
    start_t: float
    end_t: float
    dwell_s: float


def assign_poi_bins(trace: BinnedTrace, pois: Sequence[Poi]) -> list[tuple[int, Poi]]:
    """Map each covered bin to the POI containing it, nearest center first.

    Ties on distance break toward the smaller poi_id so assignment is a
    pure function of the data.
    """
    if len(trace) == 0 or not pois:
        return []
    ordered = sorted(pois, key=lambda p: p.poi_id)
    px = np.array([p.x for p in ordered])
    py = np.array([p.y for p in ordered])
    pr2 = np.array([p.radius_m**2 for p in ordered])
    d2 = (trace.x[:, None] - px[None, :]) ** 2 + (trace.y[:, None] - py[None, :]) ** 2
    inside = d2 <= pr2[None, :]
    d2 = np.where(inside, d2, np.inf)
    # argmin returns the first (lowest poi_id) among exact distance ties
    best = np.argmin(d2, axis=1)
    covered = inside.any(axis=1)
    return [
        (int(trace.bins[i]), ordered[best[i]])
        for i in range(len(trace))
        if covered[i]
    ]


def poi_visits(
    store: TraceStore,
    pois: Sequence[Poi],
    user: UserId,
    t0: float,
    t1: float,
    policy: ContactPolicy,
) -> list[PoiVisit]:
    trace = store.resample(user, t0, t1, policy)
    assigned = assign_poi_bins(trace, pois)
    w = policy.bin_width_s
    min_bins = -(-policy.poi_visit_min_s // w)
    visits = []
    run_start = 0
    for i in range(1, len(assigned) + 1):
        boundary = (
            i == len(assigned)
            or assigned[i][1].poi_id != assigned[run_start][1].poi_id
            or assigned[i][0] != assigned[i - 1][0] + 1
        )
        if not boundary:
            continue
        n_bins = i - run_start
        if n_bins >= min_bins:
            first_bin = assigned[run_start][0]
            poi = assigned[run_start][1]
            visits.append(
                PoiVisit(
                    user=user,
                    poi_id=poi.poi_id,
                    category=poi.category,
                    start_t=float(first_bin * w),
                    end_t=float((first_bin + n_bins) * w),
                    dwell_s=float(n_bins * w),
                )
            )
        run_start = i
    return visits


def visit_category_counts(visits: Iterable[PoiVisit]) -> Counter:
    return Counter(v.category for v in visits)


def distribution_from_counts(counts: Counter) -> dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        return {}
    return {category: counts[category] / total for category in sorted(counts)}


def poi_distribution(
    store: TraceStore,
    pois: Sequence[Poi],
    users: Iterable[UserId],
    t0: float,
    t1: float,
    policy: ContactPolicy,
) -> dict[str, float]:
    counts: Counter = Counter()
    for user in users:
        counts.update(visit_category_counts(poi_visits(store, pois, user, t0, t1, policy)))
    return distribution_from_counts(counts)
