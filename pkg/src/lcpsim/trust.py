"""Trust graphs: who listens to whom, quorum policy, and pairwise overlap arithmetic.

Every safety condition is evaluated in exact integer arithmetic.  Margins are
kept in half-units (scaled by 2) so the ``n_j / 2`` term of the fork-safety
bound never needs floating point.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional


class InvalidUNLError(ValueError):
    pass


class TrustGraphError(ValueError):
    pass


@dataclass(frozen=True)
class QuorumPolicy:
    """Either ``ceil(ratio * n)`` or ``n - floor((n - 1) / k)``."""

    kind: str
    ratio: Fraction = Fraction(4, 5)
    k: int = 0

    def __post_init__(self):
        if self.kind == "fraction":
            if not (Fraction(1, 2) < self.ratio <= 1):
                raise ValueError(f"quorum ratio must lie in (1/2, 1], got {self.ratio}")
        elif self.kind == "floordiv":
            if self.k < 2:
                raise ValueError(f"floordiv quorum needs k >= 2, got {self.k}")
        else:
            raise ValueError(f"unknown quorum policy kind {self.kind!r}")

    @classmethod
    def fraction(cls, ratio=Fraction(4, 5)) -> "QuorumPolicy":
        return cls("fraction", ratio=Fraction(ratio))

    @classmethod
    def floor_div(cls, k: int) -> "QuorumPolicy":
        return cls("floordiv", k=k)

    def __call__(self, n: int) -> int:
        return quorum(n, self)

    def describe(self) -> str:
        if self.kind == "fraction":
            return f"ceil({self.ratio}*n)"
        return f"n-floor((n-1)/{self.k})"


DEFAULT_POLICY = QuorumPolicy.fraction()


def quorum(n: int, policy: QuorumPolicy = DEFAULT_POLICY) -> int:
    if n < 1:
        raise InvalidUNLError(f"UNL size must be positive, got {n}")
    if policy.kind == "fraction":
        r = policy.ratio
        return -((-r.numerator * n) // r.denominator)
    return n - (n - 1) // policy.k


@dataclass(frozen=True)
class TrustGraph:
    unls: tuple[frozenset, ...]
    policy: QuorumPolicy = DEFAULT_POLICY
    fault_budget: tuple[int, ...] = ()
    _quorums: tuple[int, ...] = field(default=(), repr=False, compare=False)
    _listeners: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    @classmethod
    def build(
        cls,
        unls: Mapping[int, Iterable[int]] | Iterable[Iterable[int]],
        policy: QuorumPolicy = DEFAULT_POLICY,
        fault_budget: Optional[Mapping[int, int]] = None,
    ) -> "TrustGraph":
        """Validate and freeze a trust graph.

        ``fault_budget`` overrides ``t_i`` per node; nodes without an override
        get the largest tolerated value ``n_i - q_i``.
        """
        if isinstance(unls, Mapping):
            ids = sorted(unls)
            if ids != list(range(len(ids))):
                raise TrustGraphError(f"node ids must be dense 0..N-1, got {ids}")
            raw = [unls[i] for i in ids]
        else:
            raw = list(unls)
        n_nodes = len(raw)
        if n_nodes == 0:
            raise TrustGraphError("trust graph has no nodes")
        frozen = []
        for i, members in enumerate(raw):
            members = frozenset(int(m) for m in members)
            if not members:
                raise InvalidUNLError(f"node {i} has an empty UNL")
            bad = sorted(m for m in members if not 0 <= m < n_nodes)
            if bad:
                raise TrustGraphError(f"node {i} trusts unknown nodes {bad}")
            frozen.append(members)
        quorums = tuple(quorum(len(u), policy) for u in frozen)
        overrides = dict(fault_budget or {})
        unknown = sorted(set(overrides) - set(range(n_nodes)))
        if unknown:
            raise TrustGraphError(f"fault budget given for unknown nodes {unknown}")
        budgets = []
        for i, u in enumerate(frozen):
            slack = len(u) - quorums[i]
            t = int(overrides.get(i, slack))
            if not 0 <= t <= slack:
                raise TrustGraphError(
                    f"node {i}: fault budget {t} outside [0, n_i - q_i = {slack}]"
                )
            budgets.append(t)
        listeners = defaultdict(list)
        for i, u in enumerate(frozen):
            for m in u:
                listeners[m].append(i)
        return cls(
            unls=tuple(frozen),
            policy=policy,
            fault_budget=tuple(budgets),
            _quorums=quorums,
            _listeners=tuple(tuple(sorted(listeners[j])) for j in range(n_nodes)),
        )

    def __len__(self) -> int:
        return len(self.unls)

    @property
    def nodes(self) -> range:
        return range(len(self.unls))

    def _check(self, i: int) -> None:
        if not 0 <= i < len(self.unls):
            raise TrustGraphError(f"unknown node id {i}")

    def unl(self, i: int) -> frozenset:
        self._check(i)
        return self.unls[i]

    def n(self, i: int) -> int:
        return len(self.unl(i))

    def q(self, i: int) -> int:
        self._check(i)
        return self._quorums[i]

    def t(self, i: int) -> int:
        self._check(i)
        return self.fault_budget[i]

    def trusts(self, i: int, j: int) -> bool:
        return j in self.unl(i)

    def listeners(self, j: int) -> tuple[int, ...]:
        """Nodes whose UNL contains ``j``, i.e. the recipients of j's broadcasts."""
        self._check(j)
        return self._listeners[j]


def overlap(g: TrustGraph, i: int, j: int) -> int:
    return len(g.unl(i) & g.unl(j))


def pair_fault_bound(g: TrustGraph, i: int, j: int) -> int:
    return min(g.t(i), g.t(j), overlap(g, i, j))


class Condition(enum.Enum):
    WHITEPAPER = "whitepaper"
    ARMKNECHT = "armknecht"
    SAME_SEQ_ACCOUNTABLE = "same-seq-accountable"
    SAME_SEQ_BYZANTINE = "same-seq-byzantine"
    FORK_SAFETY = "fork-safety"

    @classmethod
    def parse(cls, text: str) -> "Condition":
        key = text.strip().lower().replace("_", "-")
        aliases = {
            "forksafety": "fork-safety",
            "samesequaccountable": "same-seq-accountable",
            "sameseqaccountable": "same-seq-accountable",
            "sameseqbyzantine": "same-seq-byzantine",
        }
        key = aliases.get(key.replace("-", ""), key)
        for c in cls:
            if c.value == key:
                return c
        raise ValueError(f"unknown condition {text!r}; choose from {[c.value for c in cls]}")


@dataclass(frozen=True)
class PairCheck:
    i: int
    j: int
    condition: Condition
    overlap: int
    bound2: int  # right-hand side, doubled
    margin2: int  # 2*overlap - bound2

    @property
    def holds(self) -> bool:
        if self.condition is Condition.WHITEPAPER:
            return self.margin2 >= 0
        return self.margin2 > 0

    @property
    def margin(self) -> Fraction:
        return Fraction(self.margin2, 2)

    @property
    def bound(self) -> Fraction:
        return Fraction(self.bound2, 2)


def condition_bound2(
    condition: Condition, n_i: int, q_i: int, n_j: int, q_j: int, t_ij: int
) -> int:
    """Doubled right-hand side of ``condition`` for the ordered pair (i, j)."""
    slack_i, slack_j = n_i - q_i, n_j - q_j
    if condition is Condition.WHITEPAPER:
        return 2 * max(slack_i, slack_j)
    if condition is Condition.ARMKNECHT:
        return 4 * max(slack_i, slack_j)
    if condition is Condition.SAME_SEQ_ACCOUNTABLE:
        return 2 * (slack_i + slack_j)
    if condition is Condition.SAME_SEQ_BYZANTINE:
        return 2 * (slack_i + slack_j + t_ij)
    if condition is Condition.FORK_SAFETY:
        return n_j + 2 * (slack_i + t_ij)
    raise ValueError(condition)


def evaluate(
    condition: Condition,
    n_i: int,
    q_i: int,
    n_j: int,
    q_j: int,
    o: int,
    t_ij: int = 0,
    i: int = 0,
    j: int = 1,
) -> PairCheck:
    bound2 = condition_bound2(condition, n_i, q_i, n_j, q_j, t_ij)
    return PairCheck(i, j, condition, o, bound2, 2 * o - bound2)


def check_pair(g: TrustGraph, i: int, j: int, condition: Condition) -> PairCheck:
    return evaluate(
        condition,
        g.n(i), g.q(i), g.n(j), g.q(j),
        overlap(g, i, j),
        pair_fault_bound(g, i, j),
        i, j,
    )


def audit(g: TrustGraph, condition: Condition) -> list[PairCheck]:
    """All failing ordered pairs of distinct nodes, ascending by (i, j).

    Nodes sharing a UNL and fault budget are interchangeable, so each class
    pair is evaluated once and expanded.
    """
    classes: dict[tuple, list[int]] = defaultdict(list)
    for i in g.nodes:
        classes[(g.unls[i], g.fault_budget[i])].append(i)
    reps = [(members[0], members) for members in classes.values()]
    failing = []
    for a, members_a in reps:
        for b, members_b in reps:
            if members_a is members_b and len(members_a) < 2:
                continue
            probe_j = b if a != b else members_b[1]
            chk = check_pair(g, a, probe_j, condition)
            if chk.holds:
                continue
            for i in members_a:
                for j in members_b:
                    if i != j:
                        failing.append(PairCheck(i, j, condition, chk.overlap, chk.bound2, chk.margin2))
    failing.sort(key=lambda c: (c.i, c.j))
    return failing


def minimal_passing_overlap(
    condition: Condition, n_i: int, q_i: int, n_j: int, q_j: int, t: int = 0
) -> Optional[int]:
    """Smallest overlap satisfying ``condition`` for two UNLs of the given sizes.

    ``t`` is the per-node fault budget; the pair bound is ``min(t, t, O)``.
    """
    for o in range(0, min(n_i, n_j) + 1):
        if evaluate(condition, n_i, q_i, n_j, q_j, o, min(t, o)).holds:
            return o
    return None
