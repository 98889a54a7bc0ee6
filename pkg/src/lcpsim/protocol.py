"""Per-node consensus state machine: deliberation, validation, preferred branch.

A :class:`Node` never talks to the network directly.  Broadcasts are appended
to an outbox that the simulator drains; if the node trusts itself the message
is also received locally right away, which is how its own proposals and
validations end up in ``props`` and ``last_vals``.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Union

from .ledger import Ledger, LedgerStore

DEFAULT_THRESHOLDS = (Fraction(1, 2), Fraction(13, 20), Fraction(7, 10), Fraction(19, 20))


@dataclass(frozen=True)
class Proposal:
    txs: frozenset
    round: int
    prior: bytes
    proposer: int

    def to_dict(self) -> dict:
        return {
            "prior": self.prior.hex(),
            "round": self.round,
            "txs": sorted(self.txs),
        }


@dataclass(frozen=True)
class Validation:
    ledger: bytes
    seq: int
    validator: int

    def to_dict(self) -> dict:
        return {"ledger": self.ledger.hex(), "seq": self.seq}


Message = Union[Proposal, Validation]


@dataclass(frozen=True)
class ThresholdSchedule:
    steps: tuple[Fraction, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        steps = tuple(Fraction(s) for s in self.steps)
        if not steps:
            raise ValueError("threshold schedule needs at least one step")
        if any(b < a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"threshold schedule must be non-decreasing: {steps}")
        if any(not 0 <= s <= 1 for s in steps):
            raise ValueError(f"thresholds must lie in [0, 1]: {steps}")
        object.__setattr__(self, "steps", steps)

    def __call__(self, r: int) -> Fraction:
        return self.steps[min(r, len(self.steps) - 1)]


@dataclass
class StepResult:
    kind: str  # "switch", "consensus" or "update"
    messages: list
    ledger: Optional[Ledger] = None  # ledger built on consensus


class Node:
    """One honest peer's protocol state.

    ``unl`` and ``quorum`` come from the trust graph; ``store`` is the shared
    ledger DAG (ledgers are content-addressed, so sharing it only models
    ledger acquisition, never agreement).
    """

    def __init__(
        self,
        node_id: int,
        unl: Iterable[int],
        quorum: int,
        store: LedgerStore,
        schedule: ThresholdSchedule = ThresholdSchedule(),
        pending: Iterable = (),
        seed_genesis_votes: bool = True,
    ):
        self.id = node_id
        self.unl = frozenset(unl)
        self.n = len(self.unl)
        self.q = quorum
        self.store = store
        self.schedule = schedule

        g = store.genesis
        self.working: bytes = g.hash
        self.round = 0
        self.position: frozenset = frozenset()
        self.props: dict[int, Proposal] = {}
        self.prop_buffer: dict[tuple[bytes, int], Proposal] = {}
        self.last_vals: dict[int, Validation] = {}
        if seed_genesis_votes:
            # every peer implicitly stands behind genesis until heard from
            self.last_vals = {j: Validation(g.hash, g.seq, j) for j in sorted(self.unl)}
        self.val_counts: dict[bytes, set[int]] = defaultdict(set)
        self.fully_validated: bytes = g.hash
        self.fv_seq = 1
        self.s_max = 0
        self.pending: set[str] = {str(x) for x in pending}

        self.outbox: list[Message] = []
        self._pref_cache: tuple = (None, None)
        self._lv_version = 0

    # -- plumbing ---------------------------------------------------------

    def _broadcast(self, msg: Message) -> None:
        self.outbox.append(msg)
        if self.id in self.unl:
            self.receive(msg)

    def drain(self) -> list[Message]:
        out, self.outbox = self.outbox, []
        return out

    def receive(self, msg: Message) -> bool:
        """Route an incoming message; True if it changed the fully validated tip."""
        if isinstance(msg, Proposal):
            self.on_proposal(msg)
            return False
        return self.on_validation(msg)

    def working_ledger(self) -> Ledger:
        return self.store.get(self.working)

    # -- deliberation -----------------------------------------------------

    def start(self, ledger) -> Proposal:
        ledger = self.store.get(ledger)
        old = self.working
        if old != ledger.hash:
            for j, p in self.props.items():
                if j != self.id:
                    self._buffer(p)
        self.working = ledger.hash
        self.round = 0
        self.position = frozenset(self.pending - self.store.included_txs(ledger.hash))
        self.props = {}
        for key in [k for k in self.prop_buffer if k[0] == ledger.hash]:
            p = self.prop_buffer.pop(key)
            if key[1] != self.id:
                self.props[key[1]] = p
        floor = self.fv_seq
        for key in [k for k in self.prop_buffer if self._seq_of(k[0]) < floor]:
            del self.prop_buffer[key]
        p = Proposal(self.position, 0, self.working, self.id)
        self._broadcast(p)
        return p

    def _seq_of(self, h: bytes) -> int:
        return self.store.get(h).seq

    def _buffer(self, p: Proposal) -> None:
        key = (p.prior, p.proposer)
        cur = self.prop_buffer.get(key)
        if cur is None or p.round > cur.round:
            self.prop_buffer[key] = p

    def on_proposal(self, p: Proposal) -> None:
        if p.proposer not in self.unl:
            return
        # transactions flood between trusted peers
        self.pending.update(p.txs)
        if p.prior == self.working:
            cur = self.props.get(p.proposer)
            if cur is None or p.round > cur.round:
                self.props[p.proposer] = p
        else:
            self._buffer(p)

    def support(self) -> Counter:
        counts: Counter = Counter()
        for p in self.props.values():
            counts.update(p.txs)
        return counts

    def update_position(self) -> Proposal:
        # Inclusive comparison: a transaction exactly at the threshold is kept.
        tau = self.schedule(self.round) * self.n
        self.position = frozenset(x for x, c in self.support().items() if c >= tau)
        self.round += 1
        p = Proposal(self.position, self.round, self.working, self.id)
        self._broadcast(p)
        return p

    def check_consensus(self) -> bool:
        agreeing = sum(1 for p in self.props.values() if p.txs == self.position)
        return agreeing >= self.q

    def deliberation_step(self) -> StepResult:
        preferred = self.preferred_ledger()
        if preferred.hash != self.working:
            self.start(preferred)
            return StepResult("switch", self.drain(), preferred)
        self.update_position()
        if not self.check_consensus():
            return StepResult("update", self.drain())
        built = self.store.apply(self.working, self.position)
        self.working = built.hash
        if built.seq > self.s_max:
            self.s_max = built.seq
            self._broadcast(Validation(built.hash, built.seq, self.id))
        self.start(built)
        return StepResult("consensus", self.drain(), built)

    # -- validation -------------------------------------------------------

    def on_validation(self, v: Validation) -> bool:
        j = v.validator
        if j not in self.unl:
            return False
        cur = self.last_vals.get(j)
        if cur is None or v.seq >= cur.seq:
            if cur != v:
                self.last_vals[j] = v
                self._lv_version += 1
        voters = self.val_counts[v.ledger]
        voters.add(j)
        if len(voters) >= self.q and v.seq > self.fv_seq:
            self.fully_validated = v.ledger
            self.fv_seq = v.seq
            return True
        return False

    # -- preferred branch -------------------------------------------------

    def tip_support(self, ledger) -> int:
        h = self.store.get(ledger).hash
        return sum(1 for v in self.last_vals.values() if v.ledger == h)

    def branch_support(self, ledger) -> int:
        ledger = self.store.get(ledger)
        k = ledger.seq - 1
        total = 0
        for v in self.last_vals.values():
            if v.seq > ledger.seq:
                total += self.store.chain(v.ledger)[k] == ledger.hash
            elif v.ledger == ledger.hash:
                total += 1
        return total

    def uncommitted(self, seq: int) -> int:
        """Trusted peers whose latest validation sits below ``max(seq, s_max)``.

        ``s_max`` is the highest sequence this node has itself validated (0 if
        it never has).
        """
        bar = max(seq, self.s_max)
        return sum(1 for v in self.last_vals.values() if v.seq < bar)

    def preferred_ledger(self) -> Ledger:
        key = (self._lv_version, self.s_max, self.working)
        if self._pref_cache[0] == key:
            return self._pref_cache[1]
        result = self._preferred()
        self._pref_cache = (key, result)
        return result

    def _preferred(self) -> Ledger:
        store = self.store
        working = store.get(self.working)
        votes = list(self.last_vals.values())
        if not votes:
            return working
        total = len(votes)
        bar_counts = Counter(v.seq for v in votes)

        def uncommitted(seq: int) -> int:
            bar = max(seq, self.s_max)
            return sum(c for s, c in bar_counts.items() if s < bar)

        # The walk starts at genesis.  Down to the deepest common ancestor
        # every ledger has one child carrying all ``total`` votes, so the walk
        # advances from seq s exactly while total > uncommitted(s + 1).
        base = store.common_ancestor(v.ledger for v in votes)
        base_chain = store.chain(base.hash)
        stop = None
        for s in range(1, base.seq):
            if not total > uncommitted(s + 1):
                stop = s
                break
        if stop is not None:
            current = store.get(base_chain[stop - 1])
        else:
            current = base
            branch: Counter = Counter()
            children: dict[bytes, set[bytes]] = defaultdict(set)
            k0 = base.seq - 1
            for v in votes:
                chain = store.chain(v.ledger)
                prev = chain[k0]
                for h in chain[k0 + 1:]:
                    branch[h] += 1
                    children[prev].add(h)
                    prev = h
            while children.get(current.hash):
                ranked = sorted(children[current.hash], key=lambda h: (branch[h], h), reverse=True)
                delta = branch[ranked[0]]
                if len(ranked) > 1:
                    delta = delta - branch[ranked[1]] + (1 if ranked[0] > ranked[1] else 0)
                if delta > uncommitted(current.seq + 1):
                    current = store.get(ranked[0])
                else:
                    break
        if store.is_ancestor(current.hash, working.hash):
            return working
        return current

    def annotations(self) -> dict[bytes, tuple[int, int, int]]:
        """(tip, branch, uncommitted-at-own-seq) for every ledger on a validated chain."""
        seen: set[bytes] = set()
        for v in self.last_vals.values():
            seen.update(self.store.chain(v.ledger))
        out = {}
        for h in seen:
            led = self.store.get(h)
            out[h] = (self.tip_support(led), self.branch_support(led), self.uncommitted(led.seq))
        return out
