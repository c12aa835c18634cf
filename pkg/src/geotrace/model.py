"""Shared domain types, message schemas, and parameter records.

Everything here is an immutable value object: instances are safe to share
across threads and never mutated after construction.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

# Party identifiers used on envelopes and the message bus.
HA = "HA"
LP = "LP"
IDP = "IDP"
ITPA = "ITPA"
PARTIES = frozenset({HA, LP, IDP, ITPA})

# Phone-number style identifier: "+" followed by 8-15 digits.
UserId = str
USER_ID_RE = re.compile(r"^\+[0-9]{8,15}$")

# 128-bit request identifier rendered as 32 lowercase hex chars.
TransactionId = str
TRANSACTION_ID_RE = re.compile(r"^[0-9a-f]{32}$")

POI_CATEGORIES = (
    "restaurant",
    "grocery",
    "transit",
    "hospital",
    "sport",
    "retail",
    "workplace",
    "residence",
    "education",
    "other",
)

DISTRIBUTION_TOLERANCE = 1e-9


def is_user_id(value: str) -> bool:
    return isinstance(value, str) and USER_ID_RE.match(value) is not None


def require_user_id(value: str) -> UserId:
    if not is_user_id(value):
        raise ValueError(f"not a valid user id: {value!r}")
    return value


def is_transaction_id(value: str) -> bool:
    return isinstance(value, str) and TRANSACTION_ID_RE.match(value) is not None


def require_transaction_id(value: str) -> TransactionId:
    if not is_transaction_id(value):
        raise ValueError(f"not a valid transaction id: {value!r}")
    return value


def new_transaction_id(rng) -> TransactionId:
    """Draw a fresh 128-bit transaction id from the given random stream."""
    return f"{rng.getrandbits(128):032x}"


def check_distribution(dist: dict[str, float]) -> list[str]:
    """Return the problems with a category->ratio map (empty list if clean).

    A valid distribution is either empty or sums to 1 within
    DISTRIBUTION_TOLERANCE, with known categories and non-negative values.
    """
    problems = []
    for category, ratio in dist.items():
        if category not in POI_CATEGORIES:
            problems.append(f"unknown poi category {category!r}")
        if not isinstance(ratio, (int, float)) or not math.isfinite(ratio):
            problems.append(f"non-finite ratio for {category!r}")
        elif ratio < 0:
            problems.append(f"negative ratio for {category!r}")
    if dist:
        total = sum(dist.values())
        if abs(total - 1.0) > DISTRIBUTION_TOLERANCE:
            problems.append(f"ratios sum to {total!r}, expected 1")
    return problems


@dataclass(frozen=True)
class ContactPolicy:
    """Epidemiological detection parameters left open by design.

    Defaults: 2 m / 15 min direct contact, 5 m / 10 min airborne lag,
    10-day lookback, 60 s bins.
    """

    direct_distance_m: float = 2.0
    direct_min_duration_s: int = 900
    indirect_distance_m: float = 5.0
    indirect_lag_s: int = 600
    lookback_days: int = 10
    bin_width_s: int = 60
    max_gap_s: int = 180
    poi_visit_min_s: int = 300
    # Inflate pairwise thresholds by reported accuracy radii; off by default.
    error_aware: bool = False

    def __post_init__(self) -> None:
        positive = {
            "direct_distance_m": self.direct_distance_m,
            "direct_min_duration_s": self.direct_min_duration_s,
            "indirect_distance_m": self.indirect_distance_m,
            "indirect_lag_s": self.indirect_lag_s,
            "bin_width_s": self.bin_width_s,
            "max_gap_s": self.max_gap_s,
            "poi_visit_min_s": self.poi_visit_min_s,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if self.lookback_days < 1:
            raise ValueError("lookback_days must be >= 1")
        if self.direct_min_duration_s % self.bin_width_s != 0:
            raise ValueError(
                "direct_min_duration_s must be a multiple of bin_width_s"
            )

    @property
    def lookback_s(self) -> int:
        return self.lookback_days * 86_400

    @property
    def direct_min_bins(self) -> int:
        return self.direct_min_duration_s // self.bin_width_s

    @property
    def indirect_lag_bins(self) -> int:
        return self.indirect_lag_s // self.bin_width_s


@dataclass(frozen=True)
class GroupingParams:
    """Ranges the health authority draws its anonymization parameters from.

    The ratio floors operationalize "many more random ids than infected"
    and "many more groups than infected groups": every emitted request must
    satisfy n_random >= n_to_m_floor * n_infected_ids and
    k_groups >= k_to_l_floor * n_infected_groups.
    """

    n_random_min: int
    n_random_max: int
    l_infected_min: int
    l_infected_max: int
    k_groups_min: int
    k_groups_max: int
    group_size_min: int = 1
    group_size_max: int = 64
    reuse_fraction: float = 0.5
    decoy_probability: float = 0.1
    n_to_m_floor: int = 10
    k_to_l_floor: int = 5

    def __post_init__(self) -> None:
        ranges = (
            ("n_random", self.n_random_min, self.n_random_max),
            ("l_infected", self.l_infected_min, self.l_infected_max),
            ("k_groups", self.k_groups_min, self.k_groups_max),
            ("group_size", self.group_size_min, self.group_size_max),
        )
        for name, lo, hi in ranges:
            if lo < 0 or hi < lo:
                raise ValueError(f"empty or negative {name} range [{lo}, {hi}]")
        if self.l_infected_min < 0 or self.k_groups_min < 1:
            raise ValueError("need k_groups_min >= 1 and l_infected_min >= 0")
        if self.group_size_min < 1:
            raise ValueError("group_size_min must be >= 1")
        if self.n_random_min < 1:
            raise ValueError("n_random_min must be >= 1")
        # L <<< K is enforced structurally at the range level.
        if self.l_infected_max >= self.k_groups_min:
            raise ValueError("l_infected_max must be < k_groups_min")
        for name, value in (
            ("reuse_fraction", self.reuse_fraction),
            ("decoy_probability", self.decoy_probability),
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.n_to_m_floor < 1 or self.k_to_l_floor < 1:
            raise ValueError("ratio floors must be >= 1")

    def validate_for_expected_positives(self, expected_m: int) -> None:
        """Reject configurations whose random-id floor cannot hide expected_m."""
        if expected_m > 0 and self.n_random_min < self.n_to_m_floor * expected_m:
            raise ValueError(
                f"n_random_min={self.n_random_min} below "
                f"{self.n_to_m_floor}x expected positives ({expected_m})"
            )


@dataclass(frozen=True)
class Group:
    """One ordered member list within a contact-tracing request."""

    group_index: int
    member_ids: tuple[UserId, ...]


@dataclass(frozen=True)
class ContactTracingRequest:
    tx: TransactionId
    groups: tuple[Group, ...]

    @property
    def all_member_ids(self) -> tuple[UserId, ...]:
        return tuple(uid for g in self.groups for uid in g.member_ids)


@dataclass(frozen=True)
class GroupResultPlain:
    """Aggregated per-group answer: a flat risk-contact set plus the POI mix.

    The flat set is the unlinkability guarantee: nothing in this record maps
    a risk contact back to the member whose trace produced it.
    """

    risk_contacts: frozenset[UserId]
    poi_distribution: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ContactTracingReply:
    tx: TransactionId
    group_ciphertexts: tuple[tuple[int, bytes], ...]
    overall_poi_distribution: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RandomIdsRequest:
    """Health authority's ask for real random ids; carries only a count."""

    tx: TransactionId
    count: int


@dataclass(frozen=True)
class RandomIdsReply:
    tx: TransactionId
    ids: tuple[UserId, ...]


@dataclass(frozen=True)
class KeysRequestToItpa:
    tx: TransactionId
    total_groups: int
    infected_group_indices: frozenset[int]


@dataclass(frozen=True)
class KeysRequestToLp:
    """Key retrieval forwarded by the third-party authority; transaction only."""

    tx: TransactionId


KEYS_ERROR_COUNT_MISMATCH = "count-mismatch"
KEYS_ERROR_UNKNOWN_TX = "unknown-tx"


@dataclass(frozen=True)
class KeysReply:
    tx: TransactionId
    entries: tuple[tuple[int, bytes], ...] = ()
    error: str | None = None


@dataclass(frozen=True)
class ErrorReply:
    """Generic in-protocol failure notice (duplicate tx, shortfalls, ...)."""

    tx: TransactionId
    code: str
    detail: str = ""


@dataclass(frozen=True)
class RiskContactReport:
    """Final health-authority output: decrypted infected-group results only."""

    tx: TransactionId
    per_infected_group: tuple[tuple[int, GroupResultPlain], ...]
    all_risk_contacts: frozenset[UserId]

    def to_json_dict(self) -> dict:
        return {
            "tx": self.tx,
            "groups": [
                {
                    "group_index": idx,
                    "risk_contacts": sorted(result.risk_contacts),
                    "poi_distribution": dict(sorted(result.poi_distribution.items())),
                }
                for idx, result in self.per_infected_group
            ],
            "all_risk_contacts": sorted(self.all_risk_contacts),
        }


def validate_request(req: ContactTracingRequest) -> list[str]:
    """Collect every structural violation in a request.

    Violations are data, not faults: the list is empty iff the request is
    well formed (contiguous group indices, non-empty groups, no duplicate id
    within a group or across groups of this request).
    """
    violations = []
    if not is_transaction_id(req.tx):
        violations.append(f"malformed transaction id {req.tx!r}")
    seen: dict[UserId, int] = {}
    for position, group in enumerate(req.groups):
        if group.group_index != position:
            violations.append(
                f"group at position {position} carries index {group.group_index}"
            )
        if not group.member_ids:
            violations.append(f"group {group.group_index} is empty")
        in_group: set[UserId] = set()
        for uid in group.member_ids:
            if not is_user_id(uid):
                violations.append(
                    f"group {group.group_index} holds malformed id {uid!r}"
                )
            if uid in in_group:
                violations.append(
                    f"duplicate id {uid} within group {group.group_index}"
                )
                continue
            in_group.add(uid)
            if uid in seen:
                violations.append(
                    f"duplicate id {uid} across groups "
                    f"{seen[uid]} and {group.group_index}"
                )
            else:
                seen[uid] = group.group_index
    return violations
