"""Deterministic synthetic world: households, workplaces, errands, traces.

Everything is derived from one integer seed. The generator produces two
parallel trace stores: a noiseless full-population store that serves as
ground truth, and the location provider's copy, which covers only a subset
of users and may carry Gaussian position noise.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace

from .actors.intermediaries import RangeRegistry
from .crypto import derive_rng
from .geo.store import LocationSample, Poi, TraceStore
from .model import ContactPolicy, GroupingParams, UserId

DAY_S = 86_400.0

# In-day schedule anchors (seconds from midnight).
_HOME_UNTIL = 28_800.0       # 08:00
_WORK_FROM = 30_600.0        # 08:30, after a fixed-width commute
_WORK_UNTIL = 61_200.0       # 17:00
_EVENING_MARGIN = 1_800.0    # be home no later than 23:30

_ERRAND_CATEGORIES = (
    "restaurant",
    "grocery",
    "transit",
    "hospital",
    "sport",
    "retail",
    "education",
    "other",
)


class ScenarioError(ValueError):
    """Scenario file or parameter set is unusable."""


# Sized for a handful of daily positives: group-size draws for infected and
# random groups come from overlapping distributions, so group length alone
# says nothing about which kind a group is.
DEFAULT_GROUPING = GroupingParams(
    n_random_min=30,
    n_random_max=60,
    l_infected_min=1,
    l_infected_max=2,
    k_groups_min=12,
    k_groups_max=24,
    group_size_min=1,
    group_size_max=8,
)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "default"
    population: int = 120
    days: int = 4
    area_m: float = 1_500.0
    pois_per_category: int = 2
    registry_size: int = 20_000
    daily_positives: int = 3
    lp_coverage: float = 1.0
    # Default matches consumer positioning accuracy of a meter or two.
    location_noise_m: float = 2.0
    visit_probability: float = 0.85
    speed_mps: float = 1.4
    jitter_m: float = 1.5
    policy: ContactPolicy = field(default_factory=ContactPolicy)
    grouping: GroupingParams = field(default_factory=lambda: DEFAULT_GROUPING)

    @property
    def n_pois(self) -> int:
        return self.pois_per_category * len(_ERRAND_CATEGORIES)

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ScenarioError("population must be at least 2")
        if self.days < 1:
            raise ScenarioError("days must be at least 1")
        if self.registry_size < self.population:
            raise ScenarioError("registry_size must cover the population")
        if not 0.0 <= self.lp_coverage <= 1.0:
            raise ScenarioError("lp_coverage must be within [0, 1]")
        if self.location_noise_m < 0.0:
            raise ScenarioError("location_noise_m must be non-negative")
        if not 0.0 <= self.visit_probability <= 1.0:
            raise ScenarioError("visit_probability must be within [0, 1]")
        if self.speed_mps <= 0.0:
            raise ScenarioError("speed_mps must be positive")
        if self.area_m < 200.0:
            raise ScenarioError("area_m is too small for distinct anchors")
        if self.pois_per_category < 1:
            raise ScenarioError("pois_per_category must be at least 1")
        if self.daily_positives < 0:
            raise ScenarioError("daily_positives must be non-negative")


def _config_section(data: dict, key: str, cls, error_label: str):
    """Build the section object, or None when the table is absent so the
    ScenarioConfig default applies."""
    if key not in data:
        return None
    section = data.pop(key)
    if not isinstance(section, dict):
        raise ScenarioError(f"[{error_label}] must be a table")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ScenarioError(f"bad [{error_label}] key: {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"bad [{error_label}] value: {exc}") from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)
    policy = _config_section(data, "policy", ContactPolicy, "policy")
    grouping = _config_section(data, "grouping", GroupingParams, "grouping")
    scenario = data.pop("scenario", {})
    if not isinstance(scenario, dict):
        raise ScenarioError("[scenario] must be a table")
    if data:
        raise ScenarioError(f"unknown top-level tables: {sorted(data)}")
    overrides = dict(scenario)
    if policy is not None:
        overrides["policy"] = policy
    if grouping is not None:
        overrides["grouping"] = grouping
    try:
        return ScenarioConfig(**overrides)
    except TypeError as exc:
        raise ScenarioError(f"bad [scenario] key: {exc}") from exc


def load_scenario(path: str) -> ScenarioConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # pragma: no cover - Python 3.10 fallback
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid TOML: {exc}") from exc
    return scenario_from_dict(data)


@dataclass(frozen=True)
class PlannedVisit:
    user: UserId
    day: int
    poi_id: int
    category: str
    start_t: float
    end_t: float

    @property
    def dwell_s(self) -> float:
        return self.end_t - self.start_t


@dataclass(frozen=True)
class _Segment:
    """Piecewise-linear position over [t0, t1): still if p0 == p1."""

    t0: float
    t1: float
    x0: float
    y0: float
    x1: float
    y1: float
    jitter: bool

    def position_at(self, t: float) -> tuple[float, float]:
        if self.t1 <= self.t0:
            return self.x1, self.y1
        f = (t - self.t0) / (self.t1 - self.t0)
        return (
            self.x0 + f * (self.x1 - self.x0),
            self.y0 + f * (self.y1 - self.y0),
        )


@dataclass
class World:
    config: ScenarioConfig
    seed: int
    users: list[UserId]
    registry: RangeRegistry
    pois: list[Poi]
    truth_store: TraceStore
    lp_store: TraceStore
    covered_users: list[UserId]
    planned_visits: list[PlannedVisit]
    home_of: dict[UserId, tuple[float, float]]
    workplace_of: dict[UserId, tuple[float, float]]
    household_of: dict[UserId, int]


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _jitter_point(
    rng: random.Random, center: tuple[float, float], radius: float
) -> tuple[float, float]:
    r = radius * math.sqrt(rng.random())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return center[0] + r * math.cos(theta), center[1] + r * math.sin(theta)


def _clear_of_pois(
    point: tuple[float, float], pois: list[Poi], margin: float
) -> bool:
    return all(
        _dist(point, (poi.x, poi.y)) > poi.radius_m + margin for poi in pois
    )


def _place_pois(rng: random.Random, config: ScenarioConfig) -> list[Poi]:
    pois: list[Poi] = []
    max_radius = 20.0
    separation = 3.0 * max_radius
    attempts = 0
    while len(pois) < config.n_pois:
        attempts += 1
        if attempts > 200 * config.n_pois:
            raise ScenarioError(
                "cannot place POIs with required separation; enlarge area_m"
            )
        x = rng.uniform(50.0, config.area_m - 50.0)
        y = rng.uniform(50.0, config.area_m - 50.0)
        if any(_dist((x, y), (p.x, p.y)) < separation for p in pois):
            continue
        radius = rng.uniform(8.0, max_radius)
        category = _ERRAND_CATEGORIES[len(pois) % len(_ERRAND_CATEGORIES)]
        pois.append(
            Poi(poi_id=len(pois), category=category, x=x, y=y, radius_m=radius)
        )
    return pois


def _place_anchor(
    rng: random.Random, config: ScenarioConfig, pois: list[Poi]
) -> tuple[float, float]:
    for _ in range(10_000):
        point = (
            rng.uniform(20.0, config.area_m - 20.0),
            rng.uniform(20.0, config.area_m - 20.0),
        )
        if _clear_of_pois(point, pois, margin=10.0):
            return point
    raise ScenarioError("cannot place anchors clear of POIs; enlarge area_m")


def _day_schedule(
    rng: random.Random,
    config: ScenarioConfig,
    pois: list[Poi],
    home: tuple[float, float],
    work: tuple[float, float],
    user: UserId,
    day: int,
    visits_out: list[PlannedVisit],
) -> list[_Segment]:
    base = day * DAY_S
    segments = [
        _Segment(base, base + _HOME_UNTIL, *home, *home, jitter=True),
        _Segment(base + _HOME_UNTIL, base + _WORK_FROM, *home, *work, jitter=False),
        _Segment(base + _WORK_FROM, base + _WORK_UNTIL, *work, *work, jitter=True),
    ]
    cursor = base + _WORK_UNTIL
    pos = work
    if rng.random() < config.visit_probability:
        n_errands = rng.choice((1, 1, 2))
        for poi_index in rng.sample(range(len(pois)), min(n_errands, len(pois))):
            poi = pois[poi_index]
            travel = _dist(pos, (poi.x, poi.y)) / config.speed_mps
            dwell = rng.uniform(1_500.0, 2_400.0)
            home_travel = _dist((poi.x, poi.y), home) / config.speed_mps
            deadline = base + DAY_S - _EVENING_MARGIN
            if cursor + travel + dwell + home_travel > deadline:
                break
            segments.append(
                _Segment(cursor, cursor + travel, *pos, poi.x, poi.y, jitter=False)
            )
            cursor += travel
            segments.append(
                _Segment(
                    cursor, cursor + dwell, poi.x, poi.y, poi.x, poi.y, jitter=True
                )
            )
            visits_out.append(
                PlannedVisit(
                    user=user,
                    day=day,
                    poi_id=poi.poi_id,
                    category=poi.category,
                    start_t=cursor,
                    end_t=cursor + dwell,
                )
            )
            cursor += dwell
            pos = (poi.x, poi.y)
    travel_home = _dist(pos, home) / config.speed_mps
    segments.append(
        _Segment(cursor, cursor + travel_home, *pos, *home, jitter=False)
    )
    segments.append(
        _Segment(cursor + travel_home, base + DAY_S, *home, *home, jitter=True)
    )
    return segments


def _position(segments: list[_Segment], t: float) -> tuple[float, float, bool]:
    for seg in segments:
        if seg.t0 <= t < seg.t1:
            x, y = seg.position_at(t)
            return x, y, seg.jitter
    last = segments[-1]
    return last.x1, last.y1, last.jitter


def build_world(config: ScenarioConfig, seed: int) -> World:
    registry = RangeRegistry(config.registry_size)
    users = [registry.format_id(i) for i in range(config.population)]
    layout_rng = derive_rng(seed, "world-layout")
    pois = _place_pois(layout_rng, config)

    household_of: dict[UserId, int] = {}
    home_of: dict[UserId, tuple[float, float]] = {}
    remaining = list(users)
    household = 0
    while remaining:
        size = min(layout_rng.randint(1, 4), len(remaining))
        anchor = _place_anchor(layout_rng, config, pois)
        for user in remaining[:size]:
            household_of[user] = household
            home_of[user] = anchor
        remaining = remaining[size:]
        household += 1

    n_workplaces = max(1, config.population // 8)
    workplaces = [
        _place_anchor(layout_rng, config, pois) for _ in range(n_workplaces)
    ]
    workplace_of = {
        user: workplaces[layout_rng.randrange(n_workplaces)] for user in users
    }

    truth_store = TraceStore.for_policy(config.policy)
    lp_store = TraceStore.for_policy(config.policy)
    coverage_rng = derive_rng(seed, "world-coverage")
    n_covered = round(config.lp_coverage * config.population)
    covered_users = sorted(coverage_rng.sample(users, n_covered))
    covered_set = set(covered_users)

    w = float(config.policy.bin_width_s)
    bins_per_day = int(DAY_S / w)
    planned_visits: list[PlannedVisit] = []
    move_rng = derive_rng(seed, "world-motion")
    noise_rng = derive_rng(seed, "world-noise")
    sigma = config.location_noise_m

    truth_samples: list[LocationSample] = []
    lp_samples: list[LocationSample] = []
    for user in users:
        home = home_of[user]
        work = workplace_of[user]
        for day in range(config.days):
            segments = _day_schedule(
                move_rng, config, pois, home, work, user, day, planned_visits
            )
            day_bin0 = int(day * bins_per_day)
            for b in range(day_bin0, day_bin0 + bins_per_day):
                t = (b + 0.5) * w
                x, y, jitter = _position(segments, t)
                if jitter:
                    x, y = _jitter_point(move_rng, (x, y), config.jitter_m)
                truth_samples.append(
                    LocationSample(user=user, t=t, x=x, y=y, accuracy_m=0.0)
                )
                if user in covered_set:
                    lp_samples.append(
                        LocationSample(
                            user=user,
                            t=t,
                            x=x + noise_rng.gauss(0.0, sigma),
                            y=y + noise_rng.gauss(0.0, sigma),
                            accuracy_m=sigma,
                        )
                    )
    truth_store.add_many(truth_samples)
    lp_store.add_many(lp_samples)

    return World(
        config=config,
        seed=seed,
        users=users,
        registry=registry,
        pois=pois,
        truth_store=truth_store,
        lp_store=lp_store,
        covered_users=covered_users,
        planned_visits=planned_visits,
        home_of=home_of,
        workplace_of=workplace_of,
        household_of=household_of,
    )


def seed_infections(world: World, seed: int) -> list[list[UserId]]:
    """Fresh positives per day; no user tests positive twice."""
    rng = derive_rng(seed, "infections")
    config = world.config
    never = list(world.users)
    per_day: list[list[UserId]] = []
    for _ in range(config.days):
        count = min(config.daily_positives, len(never))
        chosen = sorted(rng.sample(never, count))
        never = [u for u in never if u not in set(chosen)]
        per_day.append(chosen)
    return per_day


def naive_grouping(grouping: GroupingParams) -> GroupingParams:
    """The no-countermeasure parameterization used by legacy authorities."""
    return replace(grouping, reuse_fraction=0.0, decoy_probability=0.0)


def country_coverage(country: str, column: str = "facebook") -> float:
    """LP coverage fraction for a country from the shipped penetration table.

    Percentages above 100 (device counts exceeding population) clamp to
    full coverage.
    """
    import importlib.resources

    ref = importlib.resources.files("geotrace").joinpath(
        "data/penetration_rates.json"
    )
    table = json.loads(ref.read_text(encoding="utf-8"))
    try:
        percent = table["countries"][country][column]
    except KeyError as exc:
        raise ScenarioError(f"no penetration entry for {country!r}/{column!r}") from exc
    return min(1.0, float(percent) / 100.0)
