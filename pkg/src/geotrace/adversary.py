"""Attack harness: the two threat models, as drop-in actor variants.

Adversaries speak the same message interfaces as the honest actors; nothing
in the honest code paths changes. The targeted health authority reuses one
id across two transactions to intersect the decrypted risk sets; the
re-identification attacker is a location provider doing frequency analysis
on the id streams it legitimately receives.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, replace

from .actors.ha import HealthAuthority
from .actors.intermediaries import (
    IdentityProvider,
    IndependentAuthority,
    RangeRegistry,
)
from .actors.lp import LocationProvider
from .codec import decode_message
from .crypto import SigningKeyPair, derive_rng
from .geo.store import TraceStore
from .model import (
    ContactPolicy,
    ContactTracingRequest,
    GroupingParams,
    HA,
    IDP,
    ITPA,
    LP,
    UserId,
)
from .simnet import SimNet

# Observed-repeat share below which repetition itself is the anomaly: in an
# all-fresh id stream, ids recurring across transactions mark re-traced
# positives. Compliant reuse drives the share far above this.
REPEAT_RARITY_THRESHOLD = 0.2


class MaliciousTargetedHA(HealthAuthority):
    """Health authority that plants one target id in two transactions.

    Co-members differ between the two rounds, so intersecting the two
    decrypted risk sets strips away everything but the target's own
    contacts (plus any contact shared with a co-member).
    """

    enforce_ledger = False

    def __init__(
        self,
        grouping: GroupingParams,
        keypair: SigningKeyPair,
        rng: random.Random,
        target: UserId,
        attack_rounds: tuple[int, int],
        registry_size_hint: int | None = None,
    ) -> None:
        super().__init__(grouping, keypair, rng, registry_size_hint)
        self.target = target
        self.attack_rounds = attack_rounds

    def _round_positives(self, new_positives: set[str]) -> set[str]:
        positives = set(new_positives) | self.pending
        self.pending = set()
        if self.round_index in self.attack_rounds:
            positives.add(self.target)
        return positives

    def target_group_results(self) -> list[tuple[str, frozenset[str]]]:
        found = []
        for outcome in self.outcomes:
            if outcome.request is None or outcome.report is None:
                continue
            results = dict(outcome.report.per_infected_group)
            for idx in sorted(outcome.infected_indices):
                group = outcome.request.groups[idx]
                if self.target in group.member_ids and idx in results:
                    found.append((outcome.tx, results[idx].risk_contacts))
        return found

    def inferred_contacts(self) -> frozenset[str]:
        results = self.target_group_results()
        if len(results) < 2:
            return frozenset()
        sets = [set(contacts) for _, contacts in results]
        return frozenset(set.intersection(*sets))


class NaiveHealthAuthority(HealthAuthority):
    """Pre-countermeasure behavior: re-traces each positive while active,
    never reuses ids, never sends decoys. This is the world in which
    repetition across queries gives infected ids away."""

    enforce_ledger = False

    def __init__(
        self,
        grouping: GroupingParams,
        keypair: SigningKeyPair,
        rng: random.Random,
        registry_size_hint: int | None = None,
        active_rounds: int = 3,
    ) -> None:
        naive_grouping = replace(
            grouping, reuse_fraction=0.0, decoy_probability=0.0
        )
        super().__init__(naive_grouping, keypair, rng, registry_size_hint)
        self.active_rounds = active_rounds
        self._active: dict[str, int] = {}

    def _round_positives(self, new_positives: set[str]) -> set[str]:
        for user_id in new_positives:
            self._active[user_id] = self.active_rounds
        current = set(self._active)
        for user_id in list(self._active):
            self._active[user_id] -= 1
            if self._active[user_id] == 0:
                del self._active[user_id]
        return current


@dataclass(frozen=True)
class AttackGuess:
    guessed: frozenset[str]
    strategy: str
    n_distinct: int
    repeated_fraction: float


def id_frequencies(history: list[ContactTracingRequest]) -> Counter:
    counts: Counter = Counter()
    for request in history:
        counts.update(request.all_member_ids)
    return counts


def singleton_guess(history: list[ContactTracingRequest]) -> frozenset[str]:
    """Baseline strategy: ids that were never reused across the history."""
    counts = id_frequencies(history)
    return frozenset(uid for uid, c in counts.items() if c == 1)


def frequency_attack(history: list[ContactTracingRequest]) -> AttackGuess:
    """Frequency analysis that adapts to the observed reuse regime.

    When repeats exist but are rare, the id stream looks use-once and the
    few recurring ids are the anomaly, so they are the guess. When repeats
    are common (reuse countermeasure active) or absent entirely (a single
    request), frequency carries no such signal and the guess falls back to
    the never-reused baseline.
    """
    counts = id_frequencies(history)
    n_distinct = len(counts)
    repeated = frozenset(uid for uid, c in counts.items() if c >= 2)
    fraction = len(repeated) / n_distinct if n_distinct else 0.0
    if 0.0 < fraction < REPEAT_RARITY_THRESHOLD:
        return AttackGuess(
            guessed=repeated,
            strategy="repeated-ids",
            n_distinct=n_distinct,
            repeated_fraction=fraction,
        )
    return AttackGuess(
        guessed=frozenset(uid for uid, c in counts.items() if c == 1),
        strategy="singletons",
        n_distinct=n_distinct,
        repeated_fraction=fraction,
    )


@dataclass(frozen=True)
class ReidResult:
    precision: float
    recall: float
    base_rate: float
    strategy: str
    n_distinct: int
    n_guessed: int
    repeated_fraction: float


def evaluate_reid(
    history: list[ContactTracingRequest], truth: set[str]
) -> ReidResult:
    counts = id_frequencies(history)
    guess = frequency_attack(history)
    truth_observed = truth & set(counts)
    hits = len(guess.guessed & truth_observed)
    precision = hits / len(guess.guessed) if guess.guessed else 0.0
    recall = hits / len(truth_observed) if truth_observed else 0.0
    base_rate = len(truth_observed) / len(counts) if counts else 0.0
    return ReidResult(
        precision=precision,
        recall=recall,
        base_rate=base_rate,
        strategy=guess.strategy,
        n_distinct=guess.n_distinct,
        n_guessed=len(guess.guessed),
        repeated_fraction=guess.repeated_fraction,
    )


def run_protocol_only_rounds(
    seed: int,
    n_rounds: int,
    m_per_round: int,
    grouping: GroupingParams,
    registry_size: int = 200_000,
    naive: bool = False,
    naive_active_rounds: int = 3,
) -> tuple[list[ContactTracingRequest], set[str], HealthAuthority]:
    """Drive full protocol rounds with an empty location store.

    Frequency attacks read only the id streams, so geo computation is
    skipped by simply giving the LP no traces; everything else (bus,
    signatures, grouping, key release) runs for real.
    """
    policy = ContactPolicy(bin_width_s=300, direct_min_duration_s=900)
    registry = RangeRegistry(registry_size)
    keypairs = {
        party: SigningKeyPair.generate(derive_rng(seed, f"keys:{party}"))
        for party in (HA, LP, IDP, ITPA)
    }
    net = SimNet({p: kp.public_bytes for p, kp in keypairs.items()})
    lp = LocationProvider(
        store=TraceStore.for_policy(policy),
        pois=[],
        policy=policy,
        keypair=keypairs[LP],
        rng=derive_rng(seed, "lp-keys"),
    )
    idp = IdentityProvider(registry, keypairs[IDP], derive_rng(seed, "idp"))
    itpa = IndependentAuthority(keypairs[ITPA])
    if naive:
        ha: HealthAuthority = NaiveHealthAuthority(
            grouping,
            keypairs[HA],
            derive_rng(seed, "ha"),
            registry_size_hint=registry_size,
            active_rounds=naive_active_rounds,
        )
    else:
        ha = HealthAuthority(
            grouping,
            keypairs[HA],
            derive_rng(seed, "ha"),
            registry_size_hint=registry_size,
        )
    net.register(LP, lp)
    net.register(IDP, idp)
    net.register(ITPA, itpa)

    positives_rng = derive_rng(seed, "positives")
    ever_infected: set[str] = set()
    used_indices: set[int] = set()
    for round_no in range(n_rounds):
        fresh: set[str] = set()
        while len(fresh) < m_per_round:
            index = positives_rng.randrange(registry_size)
            if index in used_indices:
                continue
            used_indices.add(index)
            fresh.add(registry.format_id(index))
        ever_infected |= fresh
        lp.now = (round_no + 1) * 86_400.0
        net.now = lp.now
        ha.run_round(net, fresh, day=round_no, now=lp.now)

    history = [
        decode_message(env.envelope.message_bytes)
        for env in lp.export_evidence()
    ]
    history = [req for req in history if isinstance(req, ContactTracingRequest)]
    return history, ever_infected, ha


def normal_ci95(values: list[float]) -> tuple[float, float, float]:
    """Mean with a normal-approximation 95% interval over per-seed values."""
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, mean, mean
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    half = 1.96 * math.sqrt(var / n)
    return mean, mean - half, mean + half


@dataclass
class ReidExperiment:
    results: list[ReidResult]

    def summary(self) -> dict:
        precision_mean, p_lo, p_hi = normal_ci95(
            [r.precision for r in self.results]
        )
        base_mean, b_lo, b_hi = normal_ci95([r.base_rate for r in self.results])
        recall_mean, _, _ = normal_ci95([r.recall for r in self.results])
        return {
            "n_seeds": len(self.results),
            "precision_mean": precision_mean,
            "precision_ci95": [p_lo, p_hi],
            "base_rate_mean": base_mean,
            "base_rate_ci95": [b_lo, b_hi],
            "recall_mean": recall_mean,
            "strategies": sorted({r.strategy for r in self.results}),
            "ci_overlap": p_lo <= b_hi and b_lo <= p_hi,
        }


def reid_experiment(
    n_seeds: int,
    n_rounds: int,
    m_per_round: int,
    grouping: GroupingParams,
    naive: bool,
    registry_size: int = 200_000,
    base_seed: int = 1_000,
) -> ReidExperiment:
    results = []
    for offset in range(n_seeds):
        history, truth, _ = run_protocol_only_rounds(
            seed=base_seed + offset,
            n_rounds=n_rounds,
            m_per_round=m_per_round,
            grouping=grouping,
            registry_size=registry_size,
            naive=naive,
        )
        results.append(evaluate_reid(history, truth))
    return ReidExperiment(results=results)
