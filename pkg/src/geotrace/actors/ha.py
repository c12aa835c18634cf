"""Health Authority actor: anonymized round construction and key retrieval.

Each round hides M positives among N ≥ 10·M random ids spread over K ≥ 5·L
groups, with group sizes drawn from overlapping distributions and group
order shuffled so nothing structural marks the infected groups. Previously
sent ids (infected ones included) feed a reuse pool for later random
groups, and some rounds carry no positives at all.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from ..codec import decode_group_result, decode_message, encode_message
from ..crypto import (
    EnvelopeError,
    SigningKeyPair,
    decrypt_group_result,
    sign_envelope,
)
from ..model import (
    ContactTracingReply,
    ContactTracingRequest,
    ErrorReply,
    Group,
    GroupingParams,
    GroupResultPlain,
    HA,
    IDP,
    ITPA,
    KeysReply,
    KeysRequestToItpa,
    LP,
    RandomIdsReply,
    RandomIdsRequest,
    RiskContactReport,
    new_transaction_id,
    validate_request,
)

# Overhead added to IDP asks so collision filtering still leaves enough ids.
IDP_ASK_MARGIN = 8


class RoundAborted(RuntimeError):
    """A round could not be completed; carries a stable reason code."""

    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class ComplianceError(RuntimeError):
    """A compliant HA refused an operation (re-reported positive)."""


@dataclass
class RoundOutcome:
    day: int
    sim_time: float
    tx: str | None
    m: int
    n: int
    k: int
    l: int
    decoy: bool
    deferred: int
    infected_indices: frozenset[int] = frozenset()
    request: ContactTracingRequest | None = None
    report: RiskContactReport | None = None
    overall_poi: dict[str, float] = field(default_factory=dict)
    error: str | None = None


class HealthAuthority:
    enforce_ledger = True

    def __init__(
        self,
        grouping: GroupingParams,
        keypair: SigningKeyPair,
        rng: random.Random,
        registry_size_hint: int | None = None,
    ) -> None:
        self.grouping = grouping
        self.keypair = keypair
        self._rng = rng
        self.registry_size_hint = registry_size_hint
        self.used_infected_ids: set[str] = set()
        self.reuse_pool: set[str] = set()
        self.pending: set[str] = set()
        self.keys_held: dict[str, dict[int, bytes]] = {}
        self.outcomes: list[RoundOutcome] = []
        self.round_index = 0

    # Subclass hook: adversarial variants change what gets traced, never how.
    def _round_positives(self, new_positives: set[str]) -> set[str]:
        positives = set(new_positives) | self.pending
        self.pending = set()
        if self.enforce_ledger:
            repeated = positives & self.used_infected_ids
            if repeated:
                raise ComplianceError(
                    f"positives already traced: {sorted(repeated)[:3]}"
                )
        return positives

    def run_round(self, net, new_positives, day: int, now: float) -> RoundOutcome:
        positives = self._round_positives(set(new_positives))
        self.round_index += 1
        g = self.grouping
        rng = self._rng

        decoy = rng.random() < g.decoy_probability
        if decoy and positives:
            self.pending |= positives
        effective = set() if decoy else positives
        m = len(effective)
        deferred = len(positives) if decoy else 0

        try:
            l, n, k = self._draw_parameters(m)
            tx = new_transaction_id(rng)
            randoms = self._gather_randoms(net, tx, n, m, effective)
            request, infected_indices = self._build_groups(
                tx, effective, randoms, l, k
            )
        except RoundAborted as exc:
            outcome = RoundOutcome(
                day=day, sim_time=now, tx=None, m=m, n=0, k=0, l=0,
                decoy=decoy, deferred=deferred, error=str(exc),
            )
            self.outcomes.append(outcome)
            return outcome

        self.used_infected_ids |= effective
        self.reuse_pool |= effective
        self.reuse_pool |= set(randoms)

        outcome = RoundOutcome(
            day=day, sim_time=now, tx=tx, m=m, n=n, k=k, l=l,
            decoy=decoy, deferred=deferred,
            infected_indices=frozenset(infected_indices), request=request,
        )
        self.outcomes.append(outcome)

        reply_env = net.request(
            HA, LP, sign_envelope(self.keypair, HA, tx, encode_message(request))
        )
        reply = decode_message(reply_env.message_bytes)
        if not isinstance(reply, ContactTracingReply):
            code = reply.code if isinstance(reply, ErrorReply) else "bad-reply"
            outcome.error = f"lp-error: {code}"
            return outcome
        by_index = dict(reply.group_ciphertexts)
        if set(by_index) != set(range(k)):
            outcome.error = "lp-error: ciphertext indices do not cover groups"
            return outcome
        outcome.overall_poi = dict(reply.overall_poi_distribution)

        keys_env = net.request(
            HA,
            ITPA,
            sign_envelope(
                self.keypair,
                HA,
                tx,
                encode_message(
                    KeysRequestToItpa(
                        tx=tx,
                        total_groups=k,
                        infected_group_indices=frozenset(infected_indices),
                    )
                ),
            ),
        )
        keys_reply = decode_message(keys_env.message_bytes)
        if not isinstance(keys_reply, KeysReply) or keys_reply.error is not None:
            error = (
                keys_reply.error
                if isinstance(keys_reply, KeysReply)
                else getattr(keys_reply, "code", "bad-reply")
            )
            outcome.error = f"keys-error: {error}"
            return outcome
        keys = dict(keys_reply.entries)
        if set(keys) != set(infected_indices):
            outcome.error = "keys-error: released keys do not match declaration"
            return outcome
        self.keys_held[tx] = keys

        try:
            outcome.report = self._finalize(tx, sorted(infected_indices), keys, by_index)
        except EnvelopeError as exc:
            outcome.error = f"decrypt-error: {exc}"
        return outcome

    def _draw_parameters(self, m: int) -> tuple[int, int, int]:
        g = self.grouping
        rng = self._rng
        if m == 0:
            l = 0
        else:
            l_lo = max(g.l_infected_min, 1, math.ceil(m / g.group_size_max))
            l_hi = min(
                g.l_infected_max,
                m // g.group_size_min,
                g.k_groups_max // g.k_to_l_floor,
            )
            if l_hi < l_lo:
                raise RoundAborted(
                    "infected-partition-infeasible",
                    f"m={m} size bounds [{g.group_size_min},{g.group_size_max}] "
                    f"l range [{l_lo},{l_hi}]",
                )
            l = rng.randint(l_lo, l_hi)
        n_lo = max(g.n_random_min, g.n_to_m_floor * m)
        n = rng.randint(n_lo, max(g.n_random_max, n_lo))
        r_lo = math.ceil(n / g.group_size_max)
        r_hi = n // g.group_size_min
        k_lo = max(g.k_groups_min, g.k_to_l_floor * l, l + r_lo)
        k_hi = min(g.k_groups_max, l + r_hi)
        if k_hi < k_lo:
            if l + r_hi < k_lo:
                raise RoundAborted(
                    "random-partition-infeasible",
                    f"n={n} cannot fill {k_lo - l} groups of size "
                    f">= {g.group_size_min}",
                )
            k_hi = k_lo
        k = rng.randint(k_lo, k_hi)
        return l, n, k

    def _gather_randoms(
        self, net, tx: str, n: int, m: int, positives: set[str]
    ) -> list[str]:
        g = self.grouping
        rng = self._rng
        eligible = self.reuse_pool - positives
        n_pool = min(int(g.reuse_fraction * n), len(eligible))
        pool_picks = rng.sample(sorted(eligible), n_pool)
        n_fresh = n - n_pool

        ask = n_fresh + m + n_pool + IDP_ASK_MARGIN
        if self.registry_size_hint is not None:
            ask = min(ask, self.registry_size_hint)
        reply_env = net.request(
            HA,
            IDP,
            sign_envelope(
                self.keypair,
                HA,
                tx,
                encode_message(RandomIdsRequest(tx=tx, count=max(ask, n_fresh))),
            ),
        )
        reply = decode_message(reply_env.message_bytes)
        if not isinstance(reply, RandomIdsReply):
            code = reply.code if isinstance(reply, ErrorReply) else "bad-reply"
            raise RoundAborted("idp-error", code)
        taken = set(pool_picks)
        fresh: list[str] = []
        for candidate in reply.ids:
            if len(fresh) == n_fresh:
                break
            if candidate in positives or candidate in taken:
                continue
            taken.add(candidate)
            fresh.append(candidate)
        if len(fresh) < n_fresh:
            raise RoundAborted(
                "random-id-shortfall",
                f"needed {n_fresh} fresh ids, kept {len(fresh)} "
                f"of {len(reply.ids)} offered",
            )
        return pool_picks + fresh

    def _partition_sizes(self, total: int, parts: int, jitter: bool) -> list[int]:
        g = self.grouping
        rng = self._rng
        base = total // parts
        extra = total % parts
        sizes = [base + 1] * extra + [base] * (parts - extra)
        if jitter:
            for _ in range(2 * parts):
                i = rng.randrange(parts)
                j = rng.randrange(parts)
                if (
                    i != j
                    and sizes[i] > g.group_size_min
                    and sizes[j] < g.group_size_max
                ):
                    sizes[i] -= 1
                    sizes[j] += 1
        return sizes

    def _build_groups(
        self,
        tx: str,
        positives: set[str],
        randoms: list[str],
        l: int,
        k: int,
    ) -> tuple[ContactTracingRequest, set[int]]:
        rng = self._rng
        member_lists: list[tuple[bool, list[str]]] = []

        infected_members = sorted(positives)
        rng.shuffle(infected_members)
        if l:
            cursor = 0
            for size in self._partition_sizes(len(infected_members), l, jitter=False):
                member_lists.append(
                    (True, infected_members[cursor : cursor + size])
                )
                cursor += size

        random_members = list(randoms)
        rng.shuffle(random_members)
        cursor = 0
        for size in self._partition_sizes(len(random_members), k - l, jitter=True):
            member_lists.append((False, random_members[cursor : cursor + size]))
            cursor += size

        rng.shuffle(member_lists)
        groups = tuple(
            Group(group_index=i, member_ids=tuple(members))
            for i, (_, members) in enumerate(member_lists)
        )
        infected_indices = {
            i for i, (is_infected, _) in enumerate(member_lists) if is_infected
        }
        request = ContactTracingRequest(tx=tx, groups=groups)
        violations = validate_request(request)
        if violations:
            raise RoundAborted("internal-invalid-request", "; ".join(violations))
        return request, infected_indices

    def _finalize(
        self,
        tx: str,
        infected_indices: list[int],
        keys: dict[int, bytes],
        ciphertexts: dict[int, bytes],
    ) -> RiskContactReport:
        per_group: list[tuple[int, GroupResultPlain]] = []
        union: set[str] = set()
        for idx in infected_indices:
            plaintext = decrypt_group_result(keys[idx], tx, idx, ciphertexts[idx])
            result = decode_group_result(plaintext)
            per_group.append((idx, result))
            union |= result.risk_contacts
        return RiskContactReport(
            tx=tx,
            per_infected_group=tuple(per_group),
            all_risk_contacts=frozenset(union),
        )
