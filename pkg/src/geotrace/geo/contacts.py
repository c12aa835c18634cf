"""Indexed contact detection: direct proximity and indirect (lagged) exposure.

The engine bins every trace onto the shared time grid, drops positions into
a per-bin spatial grid whose cell equals the largest interaction radius,
and answers subject queries from the 3x3 cell neighborhood. Completeness of
that neighborhood is what the brute-force oracle cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..model import ContactPolicy, UserId
from .store import BinnedTrace, TraceStore, bin_range

DIRECT = "direct"
INDIRECT = "indirect"


@dataclass(frozen=True)
class ContactHit:
    """One detected contact.

    overlap_s holds seconds of co-location for direct hits but the count of
    exposure bins for indirect hits; first_t/last_t bound the qualifying
    bins in either case.
    """

    subject: UserId
    contact: UserId
    kind: str
    overlap_s: float
    first_t: float
    last_t: float


def _hits_from_bins(
    subject: UserId,
    kind: str,
    per_contact_bins: dict[UserId, set[int]],
    bin_width: int,
    min_bins: int,
) -> list[ContactHit]:
    hits = []
    for contact in sorted(per_contact_bins):
        bins = per_contact_bins[contact]
        if len(bins) < min_bins:
            continue
        overlap = len(bins) * bin_width if kind == DIRECT else float(len(bins))
        hits.append(
            ContactHit(
                subject=subject,
                contact=contact,
                kind=kind,
                overlap_s=float(overlap),
                first_t=float(min(bins) * bin_width),
                last_t=float((max(bins) + 1) * bin_width),
            )
        )
    return hits


class ContactEngine:
    """Window-scoped detector shared across many subject queries.

    The per-bin grid over the whole population is built once per
    (window, policy); per-subject queries then cost a neighborhood scan.
    """

    def __init__(
        self, store: TraceStore, t0: float, t1: float, policy: ContactPolicy
    ) -> None:
        self.store = store
        self.policy = policy
        self.t0 = t0
        self.t1 = t1
        self.b0, self.b1 = bin_range(t0, t1, policy.bin_width_s)
        self._binned: dict[UserId, BinnedTrace] = {}
        self._grid: dict[tuple[int, int, int], list] | None = None
        self._max_accuracy = 0.0
        self._direct_cache: dict[UserId, list[ContactHit]] = {}

    def binned(self, user: UserId) -> BinnedTrace:
        trace = self._binned.get(user)
        if trace is None:
            trace = self.store.resample(user, self.t0, self.t1, self.policy)
            self._binned[user] = trace
        return trace

    def _cell(self, value: float) -> int:
        return math.floor(value / self.store.cell_size_m)

    def _ensure_grid(self) -> dict[tuple[int, int, int], list]:
        if self._grid is None:
            grid: dict[tuple[int, int, int], list] = {}
            max_acc = 0.0
            for user in self.store.users():
                trace = self.binned(user)
                bins, xs, ys, accs = trace.bins, trace.x, trace.y, trace.accuracy
                for i in range(len(bins)):
                    x = float(xs[i])
                    y = float(ys[i])
                    acc = float(accs[i])
                    key = (int(bins[i]), self._cell(x), self._cell(y))
                    grid.setdefault(key, []).append((user, x, y, acc))
                    if acc > max_acc:
                        max_acc = acc
            self._grid = grid
            self._max_accuracy = max_acc
        return self._grid

    def _reach(self, radius: float, subject_acc: float) -> int:
        if not self.policy.error_aware:
            return 1
        inflated = radius + subject_acc + self._max_accuracy
        return max(1, math.ceil(inflated / self.store.cell_size_m))

    def _neighbors(
        self, grid: dict, b: int, x: float, y: float, reach: int
    ) -> list:
        cx = self._cell(x)
        cy = self._cell(y)
        found = []
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                bucket = grid.get((b, cx + dx, cy + dy))
                if bucket:
                    found.extend(bucket)
        return found

    def _pair_threshold(self, radius: float, acc_a: float, acc_b: float) -> float:
        if self.policy.error_aware:
            return radius + acc_a + acc_b
        return radius

    def direct_contacts(self, subject: UserId) -> list[ContactHit]:
        cached = self._direct_cache.get(subject)
        if cached is not None:
            return list(cached)
        grid = self._ensure_grid()
        policy = self.policy
        trace = self.binned(subject)
        co_bins: dict[UserId, set[int]] = {}
        for i in range(len(trace.bins)):
            b = int(trace.bins[i])
            sx = float(trace.x[i])
            sy = float(trace.y[i])
            sacc = float(trace.accuracy[i])
            reach = self._reach(policy.direct_distance_m, sacc)
            for user, x, y, acc in self._neighbors(grid, b, sx, sy, reach):
                if user == subject:
                    continue
                thr = self._pair_threshold(policy.direct_distance_m, sacc, acc)
                if (x - sx) ** 2 + (y - sy) ** 2 <= thr * thr:
                    co_bins.setdefault(user, set()).add(b)
        hits = _hits_from_bins(
            subject, DIRECT, co_bins, policy.bin_width_s, policy.direct_min_bins
        )
        self._direct_cache[subject] = hits
        return list(hits)

    def indirect_contacts(self, subject: UserId) -> list[ContactHit]:
        """Users occupying, within the lag window, a spot the subject held.

        A presence bin t of user u qualifies when the subject stood within
        indirect_distance_m of u's position at some bin in [t - lag, t].
        Pairs already reported as direct are excluded.
        """
        grid = self._ensure_grid()
        policy = self.policy
        trace = self.binned(subject)
        lag = policy.indirect_lag_bins
        exposure: dict[UserId, set[int]] = {}
        for i in range(len(trace.bins)):
            s = int(trace.bins[i])
            sx = float(trace.x[i])
            sy = float(trace.y[i])
            sacc = float(trace.accuracy[i])
            reach = self._reach(policy.indirect_distance_m, sacc)
            for t in range(s, min(s + lag, self.b1 - 1) + 1):
                for user, x, y, acc in self._neighbors(grid, t, sx, sy, reach):
                    if user == subject:
                        continue
                    thr = self._pair_threshold(
                        policy.indirect_distance_m, sacc, acc
                    )
                    if (x - sx) ** 2 + (y - sy) ** 2 <= thr * thr:
                        exposure.setdefault(user, set()).add(t)
        direct_users = {hit.contact for hit in self.direct_contacts(subject)}
        for user in direct_users:
            exposure.pop(user, None)
        return _hits_from_bins(subject, INDIRECT, exposure, policy.bin_width_s, 1)

    def contacts(self, subject: UserId) -> list[ContactHit]:
        hits = self.direct_contacts(subject) + self.indirect_contacts(subject)
        return sorted(hits, key=lambda h: (h.contact, h.kind))


def find_direct_contacts(
    store: TraceStore, subject: UserId, t0: float, t1: float, policy: ContactPolicy
) -> list[ContactHit]:
    return ContactEngine(store, t0, t1, policy).direct_contacts(subject)


def find_indirect_contacts(
    store: TraceStore, subject: UserId, t0: float, t1: float, policy: ContactPolicy
) -> list[ContactHit]:
    return ContactEngine(store, t0, t1, policy).indirect_contacts(subject)
