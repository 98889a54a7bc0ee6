"""Deterministic discrete-event harness.

Time is an integer tick.  Every honest broadcast fans out to the sender's
listeners; the adversary policy decides when each copy arrives.  A tick runs
in a fixed order:

1. deliver every event due now, sorted by (recipient, sender, insertion no.);
2. apply scripted transaction submissions;
3. let Byzantine puppets act;
4. run ``deliberation_step`` on every honest node scheduled this tick, in
   ascending id order.

Tick 0 is initialisation: seeded validations are broadcast and every honest
node starts deliberating on its initial working ledger.
"""

from __future__ import annotations

import copy
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .ledger import LedgerStore
from .protocol import Message, Node, Proposal, ThresholdSchedule, Validation
from .trust import TrustGraph


class ScenarioError(ValueError):
    pass


class ProtocolViolation(AssertionError):
    pass


def message_kind(msg: Message) -> str:
    return "proposal" if isinstance(msg, Proposal) else "validation"


# -- adversary --------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    """Scripted disposition for matching messages; unset fields match anything.

    ``sent_from``/``sent_until`` bound the send tick as a half-open window.
    """

    action: str  # "delay" or "drop"
    delay: int = 1
    kind: Optional[str] = None
    round: Optional[int] = None
    senders: Optional[frozenset] = None
    recipients: Optional[frozenset] = None
    sent_from: Optional[int] = None
    sent_until: Optional[int] = None

    def __post_init__(self):
        if self.action not in ("delay", "drop"):
            raise ScenarioError(f"rule action must be 'delay' or 'drop', got {self.action!r}")
        if self.action == "delay" and self.delay < 1:
            raise ScenarioError(f"rule delay must be >= 1, got {self.delay}")
        if self.kind not in (None, "proposal", "validation"):
            raise ScenarioError(f"rule kind must be 'proposal' or 'validation', got {self.kind!r}")

    def matches(self, sender: int, recipient: int, msg: Message, now: int) -> bool:
        if self.kind is not None and message_kind(msg) != self.kind:
            return False
        if self.round is not None and (not isinstance(msg, Proposal) or msg.round != self.round):
            return False
        if self.senders is not None and sender not in self.senders:
            return False
        if self.recipients is not None and recipient not in self.recipients:
            return False
        if self.sent_from is not None and now < self.sent_from:
            return False
        if self.sent_until is not None and now >= self.sent_until:
            return False
        return True

    def disposition(self) -> tuple:
        return (self.action, self.delay if self.action == "delay" else None)


@dataclass(frozen=True)
class Partition:
    groups: tuple[frozenset, ...]
    start: int
    until: int

    def __post_init__(self):
        if self.until <= self.start:
            raise ScenarioError(f"partition window [{self.start}, {self.until}) is empty")
        seen: set = set()
        for g in self.groups:
            if seen & g:
                raise ScenarioError(f"partition groups overlap on {sorted(seen & g)}")
            seen |= g

    def separates(self, a: int, b: int) -> bool:
        ga = gb = None
        for k, g in enumerate(self.groups):
            if a in g:
                ga = k
            if b in g:
                gb = k
        return ga is not None and gb is not None and ga != gb


@dataclass(frozen=True)
class Injection:
    """A message a Byzantine puppet sends at ``tick``.

    ``recipients=None`` means a broadcast to the sender's listeners.
    """

    tick: int
    message: Message
    recipients: Optional[frozenset] = None

    @property
    def sender(self) -> int:
        m = self.message
        return m.proposer if isinstance(m, Proposal) else m.validator


@dataclass(frozen=True)
class AdversaryPolicy:
    kind: str = "civil"  # civil | scripted | seeded
    delay: int = 1  # civil bound, scripted default, seeded max
    rules: tuple[Rule, ...] = ()
    partitions: tuple[Partition, ...] = ()
    injections: tuple[Injection, ...] = ()
    byzantine: frozenset = frozenset()
    accountability: bool = False
    drop_rate: float = 0.0
    partition_count: int = 0
    byzantine_rate: float = 0.5
    civil_after: Optional[int] = None  # switch to Civil(delay) from this tick on

    def __post_init__(self):
        if self.kind not in ("civil", "scripted", "seeded"):
            raise ScenarioError(f"unknown adversary kind {self.kind!r}")
        if self.delay < 1:
            raise ScenarioError(f"delay bound must be >= 1, got {self.delay}")
        if not 0 <= self.drop_rate <= 1:
            raise ScenarioError(f"drop_rate must lie in [0, 1], got {self.drop_rate}")
        if self.kind != "scripted" and (self.rules or self.injections):
            raise ScenarioError("rules and injections are only valid for scripted policies")


def civil(delay: int = 1) -> AdversaryPolicy:
    return AdversaryPolicy("civil", delay=delay)


# -- scenario ---------------------------------------------------------------


@dataclass(frozen=True)
class LedgerSpec:
    name: str
    parent: str
    txs: tuple[str, ...] = ()


@dataclass
class Scenario:
    graph: TrustGraph
    policy: AdversaryPolicy = field(default_factory=AdversaryPolicy)
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    initial_pending: dict = field(default_factory=dict)
    max_ticks: int = 50
    name: str = "scenario"
    seed: int = 0
    ledgers: tuple[LedgerSpec, ...] = ()
    validated: dict = field(default_factory=dict)  # node -> ledger name
    working: dict = field(default_factory=dict)  # node -> ledger name
    submissions: tuple = ()  # (tick, node, tx)
    update_interval: int = 1
    offsets: dict = field(default_factory=dict)
    open_phase: int = 0  # scheduled updates a node sits out after building a ledger
    probe_ticks: int = 0
    perspective: tuple = ()  # nodes whose annotations go into the report
    stop_on_fork: bool = False
    stop_at_seq: Optional[int] = None  # stop once every honest node fully validated this seq

    @property
    def honest(self) -> tuple[int, ...]:
        return tuple(i for i in self.graph.nodes if i not in self.policy.byzantine)

    def validate(self) -> None:
        g, pol = self.graph, self.policy
        if self.max_ticks < 1:
            raise ScenarioError(f"max_ticks must be positive, got {self.max_ticks}")
        if self.update_interval < 1:
            raise ScenarioError(f"update_interval must be positive, got {self.update_interval}")
        if self.open_phase < 0:
            raise ScenarioError(f"open_phase must be non-negative, got {self.open_phase}")
        bad = sorted(b for b in pol.byzantine if not 0 <= b < len(g))
        if bad:
            raise ScenarioError(f"byzantine ids {bad} are not nodes")
        for i in self.honest:
            k = len(pol.byzantine & g.unl(i))
            if k > g.t(i):
                raise ScenarioError(
                    f"node {i}: {k} byzantine UNL members exceed fault budget t_i={g.t(i)}"
                )
        names = {"genesis"}
        for spec in self.ledgers:
            if spec.name in names:
                raise ScenarioError(f"ledger {spec.name!r} defined twice")
            if spec.parent not in names:
                raise ScenarioError(f"ledger {spec.name!r}: unknown parent {spec.parent!r}")
            names.add(spec.name)
        for label, table in (("validated", self.validated), ("working", self.working)):
            for node, lname in table.items():
                if not 0 <= node < len(g):
                    raise ScenarioError(f"{label}: unknown node {node}")
                if lname not in names:
                    raise ScenarioError(f"{label}: node {node} names unknown ledger {lname!r}")
        for tick, node, _tx in self.submissions:
            if not 0 <= node < len(g):
                raise ScenarioError(f"submission to unknown node {node}")
        self._check_rules()
        if pol.accountability:
            self._check_accountable_injections()

    def _check_rules(self) -> None:
        rules = self.policy.rules
        for a_idx, a in enumerate(rules):
            for b in rules[a_idx + 1:]:
                if a.disposition() != b.disposition() and _rules_overlap(a, b):
                    raise ScenarioError(f"contradictory overlapping rules: {a} vs {b}")

    def _check_accountable_injections(self) -> None:
        slots: dict = {}
        store = self.build_store()
        for inj in self.policy.injections:
            if inj.recipients is not None:
                raise ScenarioError(
                    f"accountability forbids targeted sends (node {inj.sender} at tick {inj.tick})"
                )
            key = _slot(inj.message, lambda h: store.get(h).seq)
            prev = slots.setdefault(key, inj.message)
            if prev != inj.message:
                raise ScenarioError(f"accountability violation: node {inj.sender} equivocates on {key}")

    def build_store(self) -> LedgerStore:
        store = LedgerStore()
        by_name = {"genesis": store.genesis}
        for spec in self.ledgers:
            led = store.apply(by_name[spec.parent], spec.txs)
            by_name[spec.name] = led
            store.name(led, spec.name)
        return store

    def ledger_hash(self, name: str) -> bytes:
        store = self.build_store()
        for h, label in store.names.items():
            if label == name:
                return h
        raise ScenarioError(f"unknown ledger {name!r}")


def _rules_overlap(a: Rule, b: Rule) -> bool:
    if a.kind and b.kind and a.kind != b.kind:
        return False
    if a.round is not None and b.round is not None and a.round != b.round:
        return False
    for sa, sb in ((a.senders, b.senders), (a.recipients, b.recipients)):
        if sa is not None and sb is not None and not sa & sb:
            return False
    lo = max(x for x in (a.sent_from, b.sent_from, -(10**9)) if x is not None)
    hi = min(x for x in (a.sent_until, b.sent_until, 10**9) if x is not None)
    return lo < hi


def _slot(msg: Message, seq_of) -> tuple:
    if isinstance(msg, Validation):
        return (msg.validator, "validation", msg.seq)
    return (msg.proposer, "proposal", seq_of(msg.prior), msg.round)


# -- report -----------------------------------------------------------------


@dataclass
class NodeFinal:
    fully_validated: bytes
    fv_seq: int
    s_max: int
    working: bytes
    preferred: bytes


@dataclass
class RunReport:
    scenario: str
    seed: int
    ticks: int
    honest: tuple[int, ...]
    trace: list
    final: dict
    full_validations: dict  # node -> [(tick, digest)]
    validations: dict  # node -> [(tick, digest, seq)] emitted by honest nodes
    annotations: dict = field(default_factory=dict)
    fork: object = None
    stuck: object = None


# -- engine -----------------------------------------------------------------


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        scenario.validate()
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.graph = scenario.graph
        self.policy = scenario.policy
        self.max_ticks = scenario.max_ticks
        self.store = scenario.build_store()
        self.byzantine = frozenset(scenario.policy.byzantine)
        self.silenced = False
        self.now = 0
        self._queue: dict[int, list] = defaultdict(list)
        self._counter = 0
        self.trace: list[dict] = []
        self.full_validations: dict[int, list] = {i: [] for i in scenario.honest}
        self.validations: dict[int, list] = {i: [] for i in scenario.honest}
        self._byz_slots: dict = {}
        self._byz_count = 0
        self._submissions = defaultdict(list)
        for tick, node, tx in scenario.submissions:
            self._submissions[tick].append((node, str(tx)))
        self._injections = defaultdict(list)
        for inj in scenario.policy.injections:
            self._injections[inj.tick].append(inj)
        self.partitions = list(scenario.policy.partitions)
        if self.policy.kind == "seeded":
            self.partitions.extend(self._random_partitions())

        self.nodes: dict[int, Node] = {}
        for i in scenario.honest:
            self.nodes[i] = Node(
                i,
                self.graph.unl(i),
                self.graph.q(i),
                self.store,
                scenario.schedule,
                scenario.initial_pending.get(i, ()),
            )
        self._resting: dict[int, int] = {i: 0 for i in self.nodes}
        self.started = False

    # -- adversary decisions ----------------------------------------------

    def _civil_now(self) -> bool:
        ca = self.policy.civil_after
        return self.policy.kind == "civil" or (ca is not None and self.now >= ca)

    def _random_partitions(self) -> list[Partition]:
        out = []
        rng = random.Random(f"partitions/{self.seed}")
        ids = list(self.graph.nodes)
        horizon = self.policy.civil_after or self.max_ticks
        for _ in range(self.policy.partition_count):
            rng.shuffle(ids)
            cut = rng.randint(1, len(ids) - 1) if len(ids) > 1 else 1
            start = rng.randrange(0, max(1, horizon))
            until = min(horizon, start + rng.randint(1, 3 * self.policy.delay + 2))
            if until <= start:
                continue
            out.append(Partition((frozenset(ids[:cut]), frozenset(ids[cut:])), start, until))
        return out

    def _deliver_at(self, sender: int, recipient: int, msg: Message) -> int:
        pol, now = self.policy, self.now
        if self._civil_now():
            at = now + (pol.delay if pol.delay == 1 else self.rng.randint(1, pol.delay))
        elif pol.kind == "scripted":
            at = now + pol.delay
            for rule in pol.rules:
                if rule.matches(sender, recipient, msg, now):
                    at = self.max_ticks if rule.action == "drop" else now + rule.delay
                    break
        else:  # seeded
            if pol.drop_rate and self.rng.random() < pol.drop_rate:
                at = self.max_ticks
            else:
                at = now + self.rng.randint(1, pol.delay)
        for part in self.partitions:
            if part.start <= at < part.until and part.separates(sender, recipient):
                at = part.until
        return at

    def _send(self, sender: int, recipient: int, msg: Message) -> None:
        # drops land at max_ticks: still queued, so a later probe can pull them in
        at = self._deliver_at(sender, recipient, msg)
        self._counter += 1
        self._queue[at].append((recipient, sender, self._counter, msg))

    def _fanout(self, sender: int, msg: Message, recipients: Iterable[int] = None) -> None:
        targets = self.graph.listeners(sender) if recipients is None else sorted(recipients)
        if self.policy.delay == 1 and not self.partitions and self._civil_now():
            # fast path: every copy lands next tick
            bucket = self._queue[self.now + 1]
            n = self._counter
            for r in targets:
                if r != sender:
                    n += 1
                    bucket.append((r, sender, n, msg))
            self._counter = n
            return
        for r in targets:
            if r == sender:
                continue  # self-delivery already happened inside the node
            self._send(sender, r, msg)

    def inject(self, msg: Message, recipients: Optional[Iterable[int]] = None, at: Optional[int] = None) -> None:
        """Queue a message directly, bypassing the adversary (used by scripts and tests)."""
        sender = msg.proposer if isinstance(msg, Proposal) else msg.validator
        targets = self.graph.listeners(sender) if recipients is None else sorted(recipients)
        when = self.now if at is None else at
        for r in targets:
            self._counter += 1
            self._queue[when].append((r, sender, self._counter, msg))

    def partition(self, groups: Iterable[Iterable[int]], start: int, until: int) -> None:
        self.partitions.append(Partition(tuple(frozenset(g) for g in groups), start, until))

    # -- tracing ------------------------------------------------------------

    def _record(self, node: int, kind: str, payload: dict, **extra) -> None:
        rec = {"tick": self.now, "node": node, "kind": kind, "payload": payload}
        rec.update(extra)
        self.trace.append(rec)

    def _emit(self, node: Node, messages: list) -> None:
        for msg in messages:
            if isinstance(msg, Validation):
                hist = self.validations[node.id]
                if hist and msg.seq <= hist[-1][2]:
                    raise ProtocolViolation(
                        f"node {node.id} validated seq {msg.seq} after seq {hist[-1][2]}"
                    )
                hist.append((self.now, msg.ledger, msg.seq))
                self._record(node.id, "validate", msg.to_dict())
            else:
                self._record(node.id, "propose", msg.to_dict())
            self._fanout(node.id, msg)

    def _note_full(self, node: Node) -> None:
        hist = self.full_validations[node.id]
        last = hist[-1][1] if hist else self.store.genesis.hash
        if last != node.fully_validated:
            hist.append((self.now, node.fully_validated))
            self._record(node.id, "fully-validate", {"ledger": node.fully_validated.hex(), "seq": node.fv_seq})

    # -- execution ------------------------------------------------------------

    def _initialise(self) -> None:
        sc = self.scenario
        for i in sc.honest:
            node = self.nodes[i]
            name = sc.validated.get(i)
            if name is not None:
                led = self.store.get(sc.ledger_hash(name)) if name != "genesis" else self.store.genesis
                node.s_max = led.seq
                node.working = led.hash
                node._broadcast(Validation(led.hash, led.seq, i))
        for i in sc.honest:
            node = self.nodes[i]
            wname = sc.working.get(i)
            if wname is not None:
                node.working = self.store.get(sc.ledger_hash(wname)).hash if wname != "genesis" else self.store.genesis.hash
            self._emit(node, node.drain())
        for i in sc.honest:
            node = self.nodes[i]
            node.start(node.working)
            self._emit(node, node.drain())
            self._note_full(node)
        self.started = True

    def _deliver_due(self) -> None:
        batch = self._queue.pop(self.now, None)
        if not batch:
            return
        batch.sort()  # (recipient, sender, insertion no.) is unique, so messages never compare
        nodes = self.nodes
        changed = set()
        for recipient, _sender, _n, msg in batch:
            node = nodes.get(recipient)
            if node is None:
                continue  # Byzantine puppets ignore their inbox
            if node.receive(msg):
                changed.add(recipient)
        for i in sorted(changed):
            self._note_full(nodes[i])

    def _scheduled(self, i: int) -> bool:
        if self.now < 1:
            return False
        off = self.scenario.offsets.get(i, 0)
        return (self.now - off) % self.scenario.update_interval == 0

    def step(self) -> None:
        if not self.started:
            self._initialise()
        else:
            self._deliver_due()
            for node_id, tx in self._submissions.get(self.now, ()):
                if node_id in self.nodes:
                    self.nodes[node_id].pending.add(tx)
            if not self.silenced:
                self._byzantine_actions()
            for i in sorted(self.nodes):
                if not self._scheduled(i):
                    continue
                if self._resting[i]:
                    self._resting[i] -= 1
                    continue
                node = self.nodes[i]
                before = node.working
                result = node.deliberation_step()
                if result.kind == "switch":
                    self._record(i, "switch-branch", {"from": before.hex(), "to": node.working.hex()})
                elif result.kind == "consensus":
                    self._resting[i] = self.scenario.open_phase
                self._emit(node, result.messages)
                if node.outbox:
                    self._emit(node, node.drain())
                self._note_full(node)
        self.now += 1

    def _done(self) -> bool:
        sc = self.scenario
        if sc.stop_at_seq is not None and all(n.fv_seq >= sc.stop_at_seq for n in self.nodes.values()):
            return True
        if sc.stop_on_fork:
            tips = [self.nodes[i].fully_validated for i in sorted(self.nodes)]
            for a in range(len(tips)):
                for b in range(a + 1, len(tips)):
                    if self.store.contradicts(tips[a], tips[b]):
                        return True
        return False

    def run_until(self, end: int) -> None:
        while self.now < end:
            self.step()
            if self._done():
                break

    def snapshot(self) -> "Simulation":
        return copy.deepcopy(self)

    # -- Byzantine puppets ----------------------------------------------------

    def _byzantine_actions(self) -> None:
        for inj in self._injections.get(self.now, ()):
            self._byzantine_send(inj.message, inj.recipients, scripted=True)
        if self.policy.kind != "seeded" or self._civil_now() or not self.byzantine:
            return
        rng = self.rng
        for b in sorted(self.byzantine):
            if rng.random() >= self.policy.byzantine_rate:
                continue
            if rng.random() < 0.6:
                self._byzantine_validate(b)
            else:
                self._byzantine_propose(b)

    def _recent_ledgers(self) -> list:
        top = max(led.seq for led in self.store)
        recent = [led for led in self.store if led.seq >= top - 1]
        recent.sort(key=lambda led: (led.seq, led.hash))
        return recent

    def _forge(self, parent) -> object:
        self._byz_count += 1
        return self.store.apply(parent, [f"forged-{self._byz_count}"])

    def _byzantine_validate(self, b: int) -> None:
        rng = self.rng
        recent = self._recent_ledgers()
        base = rng.choice(recent)
        options = [base]
        if base.parent is not None:
            options.append(self._forge(base.parent))
        siblings = sorted(self.store.children.get(base.parent, ()) if base.parent else ())
        options.extend(self.store.get(h) for h in siblings if h != base.hash)
        seq = base.seq
        if self.policy.accountability:
            key = (b, "validation", seq)
            if key in self._byz_slots:
                return
            choice = rng.choice(options)
            msg = Validation(choice.hash, seq, b)
            self._byz_slots[key] = msg
            self._byzantine_send(msg, None)
            return
        for r in self.graph.listeners(b):
            choice = rng.choice(options)
            self._byzantine_send(Validation(choice.hash, seq, b), frozenset([r]))

    def _byzantine_propose(self, b: int) -> None:
        rng = self.rng
        prior = rng.choice(self._recent_ledgers())
        rnd = rng.randint(0, 8)
        pool = sorted(set().union(*(n.pending for n in self.nodes.values())) | {f"bogus-{b}"})

        def random_set() -> frozenset:
            return frozenset(x for x in pool if rng.random() < 0.5)

        if self.policy.accountability:
            key = (b, "proposal", prior.seq, rnd)
            if key in self._byz_slots:
                return
            msg = Proposal(random_set(), rnd, prior.hash, b)
            self._byz_slots[key] = msg
            self._byzantine_send(msg, None)
            return
        for r in self.graph.listeners(b):
            self._byzantine_send(Proposal(random_set(), rnd, prior.hash, b), frozenset([r]))

    def _byzantine_send(self, msg: Message, recipients: Optional[frozenset], scripted: bool = False) -> None:
        sender = msg.proposer if isinstance(msg, Proposal) else msg.validator
        targets = self.graph.listeners(sender) if recipients is None else sorted(recipients)
        kind = "propose" if isinstance(msg, Proposal) else "validate"
        self._record(sender, kind, msg.to_dict(), byzantine=True, recipients=list(targets))
        for r in targets:
            self._send(sender, r, msg)

    # -- probing ----------------------------------------------------------------

    def civilize(self, delay: int = 1) -> None:
        """Switch to Civil(delay) with Byzantine puppets silenced.

        Messages queued beyond ``now + delay`` (drops included) are pulled in,
        since channels are reliable once the adversary stops interfering.
        """
        self.policy = civil(delay)
        self.partitions = []
        self.silenced = True
        self._injections = defaultdict(list)
        limit = self.now + delay
        late = sorted(t for t in self._queue if t > limit)
        for t in late:
            self._queue[limit].extend(self._queue.pop(t))

    def final_state(self) -> dict:
        out = {}
        for i in sorted(self.nodes):
            n = self.nodes[i]
            out[i] = NodeFinal(n.fully_validated, n.fv_seq, n.s_max, n.working, n.preferred_ledger().hash)
        return out

    def report(self) -> RunReport:
        annotations = {}
        for i in self.scenario.perspective:
            if i in self.nodes:
                annotations[i] = self.nodes[i].annotations()
        return RunReport(
            scenario=self.scenario.name,
            seed=self.seed,
            ticks=self.now,
            honest=tuple(sorted(self.nodes)),
            trace=self.trace,
            final=self.final_state(),
            full_validations=self.full_validations,
            validations=self.validations,
            annotations=annotations,
        )


def run(scenario: Scenario, seed: Optional[int] = None, probe_ticks: Optional[int] = None) -> tuple[RunReport, Simulation]:
    """Run a scenario to ``max_ticks`` and attach fork/stuck verdicts.

    The stuck probe runs only when ``probe_ticks`` (or the scenario's own
    ``probe_ticks``) is positive.
    """
    from .analysis import detect_fork, detect_stuck

    sim = Simulation(scenario, seed)
    sim.run_until(scenario.max_ticks)
    report = sim.report()
    report.fork = detect_fork(report, sim.store)
    probe = scenario.probe_ticks if probe_ticks is None else probe_ticks
    if probe and probe > 0:
        report.stuck = detect_stuck(sim, probe)
    return report, sim
