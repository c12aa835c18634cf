"""Brute-force contact oracle for cross-checking the indexed engine.

Exhaustive pairwise bin scan with no spatial index: every (subject bin,
contact bin) pair inside the lag window is distance-checked directly. The
guard keeps it test-sized; production queries belong to ContactEngine.
"""

from __future__ import annotations

import numpy as np

from ..model import ContactPolicy, UserId
from .contacts import ContactHit
from .store import TraceStore, bin_range

MAX_ORACLE_USERS = 200
MAX_ORACLE_BIN_PAIRS = 1_000_000


class OracleGuardError(RuntimeError):
    """The instance is too large for the brute-force oracle."""


def oracle_contacts(
    store: TraceStore,
    subject: UserId,
    t0: float,
    t1: float,
    policy: ContactPolicy,
) -> list[ContactHit]:
    n_users = len(store)
    b0, b1 = bin_range(t0, t1, policy.bin_width_s)
    window_bins = max(0, b1 - b0)
    if n_users > MAX_ORACLE_USERS:
        raise OracleGuardError(f"{n_users} users exceeds {MAX_ORACLE_USERS}")
    if max(0, n_users - 1) * window_bins > MAX_ORACLE_BIN_PAIRS:
        raise OracleGuardError(
            f"{n_users - 1} users x {window_bins} bins exceeds "
            f"{MAX_ORACLE_BIN_PAIRS} bin-pairs"
        )

    subject_trace = store.resample(subject, t0, t1, policy)
    if len(subject_trace) == 0:
        return []
    error_aware = policy.error_aware
    direct_r = policy.direct_distance_m
    indirect_r = policy.indirect_distance_m
    lag = policy.indirect_lag_bins

    co_bins: dict[UserId, set[int]] = {}
    exposure: dict[UserId, set[int]] = {}
    for other in store.users():
        if other == subject:
            continue
        other_trace = store.resample(other, t0, t1, policy)
        if len(other_trace) == 0:
            continue
        for offset in range(0, lag + 1):
            # subject bin s pairs with the contact's presence bin t = s + offset
            _, si, oi = np.intersect1d(
                subject_trace.bins + offset,
                other_trace.bins,
                assume_unique=True,
                return_indices=True,
            )
            if len(si) == 0:
                continue
            d2 = (subject_trace.x[si] - other_trace.x[oi]) ** 2 + (
                subject_trace.y[si] - other_trace.y[oi]
            ) ** 2
            if error_aware:
                acc = subject_trace.accuracy[si] + other_trace.accuracy[oi]
                direct_ok = d2 <= (direct_r + acc) ** 2
                indirect_ok = d2 <= (indirect_r + acc) ** 2
            else:
                direct_ok = d2 <= direct_r * direct_r
                indirect_ok = d2 <= indirect_r * indirect_r
            if offset == 0 and direct_ok.any():
                bins = other_trace.bins[oi][direct_ok]
                co_bins.setdefault(other, set()).update(int(b) for b in bins)
            if indirect_ok.any():
                bins = other_trace.bins[oi][indirect_ok]
                exposure.setdefault(other, set()).update(int(b) for b in bins)

    w = policy.bin_width_s
    min_direct_bins = policy.direct_min_duration_s // w
    hits = []
    direct_users = set()
    for other in sorted(co_bins):
        bins = co_bins[other]
        if len(bins) < min_direct_bins:
            continue
        direct_users.add(other)
        hits.append(
            ContactHit(
                subject=subject,
                contact=other,
                kind="direct",
                overlap_s=float(len(bins) * w),
                first_t=float(min(bins) * w),
                last_t=float((max(bins) + 1) * w),
            )
        )
    for other in sorted(exposure):
        if other in direct_users:
            continue
        bins = exposure[other]
        hits.append(
            ContactHit(
                subject=subject,
                contact=other,
                kind="indirect",
                overlap_s=float(len(bins)),
                first_t=float(min(bins) * w),
                last_t=float((max(bins) + 1) * w),
            )
        )
    return sorted(hits, key=lambda h: (h.contact, h.kind))
