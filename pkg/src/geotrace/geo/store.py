"""Spatiotemporal trace store: ingestion, grid index, and resampling.

Traces live in a planar meter frame. The store sorts samples per user,
maintains a spatial grid over raw samples (cell size = the largest
interaction radius), and resamples traces onto a global time-bin grid so
that contact detection and its oracle share one discretization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..model import ContactPolicy, UserId, is_user_id


@dataclass(frozen=True)
class LocationSample:
    user: UserId
    t: float
    x: float
    y: float
    accuracy_m: float = 0.0
    poi: int | None = None

    def is_wellformed(self) -> bool:
        return (
            is_user_id(self.user)
            and math.isfinite(self.t)
            and math.isfinite(self.x)
            and math.isfinite(self.y)
            and math.isfinite(self.accuracy_m)
            and self.accuracy_m >= 0
        )


@dataclass(frozen=True)
class Poi:
    poi_id: int
    category: str
    x: float
    y: float
    radius_m: float

    def __post_init__(self) -> None:
        if self.radius_m <= 0:
            raise ValueError(f"poi {self.poi_id} has non-positive radius")


@dataclass(frozen=True)
class BinnedTrace:
    """One position per covered time bin (arrays aligned by index)."""

    user: UserId
    bins: np.ndarray
    x: np.ndarray
    y: np.ndarray
    accuracy: np.ndarray

    def __len__(self) -> int:
        return len(self.bins)


def bin_range(t0: float, t1: float, bin_width_s: int) -> tuple[int, int]:
    """Bin indices covering [t0, t1): first bin and one-past-last bin."""
    return math.floor(t0 / bin_width_s), math.ceil(t1 / bin_width_s)


@dataclass
class _UserTrace:
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    acc: list = field(default_factory=list)
    seen: set = field(default_factory=set)
    arrays: tuple[np.ndarray, ...] | None = None


class TraceStore:
    """Build-once, read-many trace container.

    Ingestion accepts unordered samples; queries see per-user traces with
    strictly increasing timestamps. Malformed samples are dropped and
    counted, as are later duplicates of an already-seen (user, t).
    """

    def __init__(self, cell_size_m: float) -> None:
        if cell_size_m <= 0:
            raise ValueError("cell_size_m must be positive")
        self.cell_size_m = cell_size_m
        self.rejected_count = 0
        self.duplicate_count = 0
        self._traces: dict[UserId, _UserTrace] = {}
        self._grid: dict[tuple[int, int], list[tuple[UserId, float, float, float]]] | None = None
        self._resample_cache: dict[tuple, BinnedTrace] = {}

    @classmethod
    def for_policy(cls, policy: ContactPolicy) -> TraceStore:
        return cls(max(policy.direct_distance_m, policy.indirect_distance_m))

    def add(self, sample: LocationSample) -> None:
        if not sample.is_wellformed():
            self.rejected_count += 1
            return
        trace = self._traces.setdefault(sample.user, _UserTrace())
        if sample.t in trace.seen:
            self.duplicate_count += 1
            return
        trace.seen.add(sample.t)
        trace.t.append(sample.t)
        trace.x.append(sample.x)
        trace.y.append(sample.y)
        trace.acc.append(sample.accuracy_m)
        trace.arrays = None
        self._grid = None
        self._resample_cache.clear()

    def add_many(self, samples: Iterable[LocationSample]) -> None:
        for sample in samples:
            self.add(sample)

    def users(self) -> list[UserId]:
        return sorted(self._traces)

    def __contains__(self, user: UserId) -> bool:
        return user in self._traces

    def __len__(self) -> int:
        return len(self._traces)

    def _finalized(self, user: UserId) -> tuple[np.ndarray, ...] | None:
        trace = self._traces.get(user)
        if trace is None:
            return None
        if trace.arrays is None:
            t = np.asarray(trace.t, dtype=np.float64)
            order = np.argsort(t, kind="stable")
            t = t[order]
            # Strictly increasing timestamps; duplicates were already
            # dropped at ingestion, this only re-asserts the invariant.
            if len(t) > 1:
                keep = np.concatenate(([True], t[1:] > t[:-1]))
            else:
                keep = np.ones(len(t), dtype=bool)
            sel = order[keep]
            trace.arrays = (
                t[keep],
                np.asarray(trace.x, dtype=np.float64)[sel],
                np.asarray(trace.y, dtype=np.float64)[sel],
                np.asarray(trace.acc, dtype=np.float64)[sel],
            )
        return trace.arrays

    def trace_arrays(self, user: UserId) -> tuple[np.ndarray, ...] | None:
        return self._finalized(user)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            math.floor(x / self.cell_size_m),
            math.floor(y / self.cell_size_m),
        )

    def samples_in_cell(self, cx: int, cy: int) -> list[tuple[UserId, float, float, float]]:
        if self._grid is None:
            grid: dict[tuple[int, int], list] = {}
            for user in self.users():
                t, x, y, _acc = self._finalized(user)
                for i in range(len(t)):
                    key = self.cell_of(float(x[i]), float(y[i]))
                    grid.setdefault(key, []).append(
                        (user, float(t[i]), float(x[i]), float(y[i]))
                    )
            self._grid = grid
        return self._grid.get((cx, cy), [])

    def resample(
        self, user: UserId, t0: float, t1: float, policy: ContactPolicy
    ) -> BinnedTrace:
        """Snap a trace onto the global bin grid over [t0, t1).

        Each bin gets the raw sample nearest its center, provided that
        sample lies within max_gap_s of the center; the earlier sample wins
        exact ties. Uncovered bins are simply absent.
        """
        w = policy.bin_width_s
        b0, b1 = bin_range(t0, t1, w)
        key = (user, b0, b1, w, policy.max_gap_s)
        cached = self._resample_cache.get(key)
        if cached is not None:
            return cached
        empty = BinnedTrace(
            user=user,
            bins=np.empty(0, dtype=np.int64),
            x=np.empty(0),
            y=np.empty(0),
            accuracy=np.empty(0),
        )
        arrays = self._finalized(user)
        if arrays is None or b1 <= b0 or len(arrays[0]) == 0:
            self._resample_cache[key] = empty
            return empty
        t, x, y, acc = arrays
        centers = (np.arange(b0, b1, dtype=np.float64) + 0.5) * w
        right = np.searchsorted(t, centers, side="left")
        left = right - 1
        d_left = np.where(left >= 0, np.abs(centers - t[np.clip(left, 0, None)]), np.inf)
        d_right = np.where(right < len(t), np.abs(t[np.clip(right, None, len(t) - 1)] - centers), np.inf)
        pick_left = d_left <= d_right
        chosen = np.where(pick_left, np.clip(left, 0, None), np.clip(right, None, len(t) - 1))
        dist = np.where(pick_left, d_left, d_right)
        covered = dist <= policy.max_gap_s
        idx = chosen[covered]
        result = BinnedTrace(
            user=user,
            bins=np.arange(b0, b1, dtype=np.int64)[covered],
            x=x[idx],
            y=y[idx],
            accuracy=acc[idx],
        )
        self._resample_cache[key] = result
        return result


def read_traces_csv(path: str | Path) -> Iterator[LocationSample]:
    """Stream samples from the header-tagged trace CSV (user,t,x,y,accuracy,poi)."""
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            yield LocationSample(
                user=row["user"],
                t=float(row["t"]),
                x=float(row["x"]),
                y=float(row["y"]),
                accuracy_m=float(row["accuracy"]),
                poi=int(row["poi"]) if row["poi"] else None,
            )


def write_traces_csv(path: str | Path, samples: Iterable[LocationSample]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["user", "t", "x", "y", "accuracy", "poi"])
        for s in samples:
            writer.writerow(
                [s.user, s.t, s.x, s.y, s.accuracy_m, "" if s.poi is None else s.poi]
            )


def read_pois_csv(path: str | Path) -> list[Poi]:
    """Load the POI registry CSV (id,category,x,y,radius)."""
    pois = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            pois.append(
                Poi(
                    poi_id=int(row["id"]),
                    category=row["category"],
                    x=float(row["x"]),
                    y=float(row["y"]),
                    radius_m=float(row["radius"]),
                )
            )
    return pois


def write_pois_csv(path: str | Path, pois: Iterable[Poi]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "category", "x", "y", "radius"])
        for p in pois:
            writer.writerow([p.poi_id, p.category, p.x, p.y, p.radius_m])
