"""Builders for the randomized suites and the oracle/audit topologies."""

from __future__ import annotations

import random
from .sim import AdversaryPolicy, Scenario, civil
from .trust import Condition, QuorumPolicy, TrustGraph, audit


def pair_graph(n_i: int, n_j: int, o: int, t: int = 0, policy: QuorumPolicy = QuorumPolicy.fraction()) -> TrustGraph:
    """Two observers (ids 0 and 1) whose UNLs overlap in exactly ``o`` members.

    Members are ids 2.. and trust only themselves; the observers sit outside
    both UNLs so the oracle universe is just the members.
    """
    if not 0 <= o <= min(n_i, n_j):
        raise ValueError(f"overlap {o} impossible for UNL sizes {n_i}, {n_j}")
    members = list(range(2, 2 + n_i + n_j - o))
    a, c, b = members[: n_i - o], members[n_i - o : n_i], members[n_i:]
    unls = {0: a + c, 1: c + b}
    for x in members:
        unls[x] = [x]
    return TrustGraph.build(unls, policy, {0: t, 1: t})


def pairwise_audit_text(o: int, n: int = 100, t: int = 20) -> str:
    """Scenario text: nodes 0..n-1 trust X = 0..n-1, nodes n..2n-1 trust Y, |X ∩ Y| = o."""
    return (
        f"# {2 * n} nodes, two UNLs of size {n} overlapping in {o} members\n"
        f"name: pairwise_o{o}\n"
        "nodes:\n"
        f"  - {{id: \"0-{n - 1}\", unl: \"0-{n - 1}\", fault_budget: {t}}}\n"
        f"  - {{id: \"{n}-{2 * n - 1}\", unl: \"{n - o}-{2 * n - 1 - o}\", fault_budget: {t}}}\n"
    )


def random_fork_safe_graph(rng: random.Random, min_nodes: int = 6, max_nodes: int = 12, tries: int = 10_000):
    """A random graph whose every ordered pair passes the fork-safety condition.

    UNLs are large random subsets of the network (self-membership is random
    too) and fault budgets are drawn in ``[0, n_i - q_i]``; candidates are
    rejected until the audit comes back clean.
    """
    for _ in range(tries):
        n = rng.randint(min_nodes, max_nodes)
        everyone = list(range(n))
        unls = {}
        for i in everyone:
            # dense UNLs: fork safety at this size leaves little room for gaps
            size = rng.choice((n, n, n - 1, n - 2))
            unls[i] = sorted(rng.sample(everyone, size))
        probe = TrustGraph.build(unls)
        if rng.random() < 0.75:
            budgets = {i: probe.n(i) - probe.q(i) for i in everyone}
        else:
            budgets = {i: rng.randint(0, probe.n(i) - probe.q(i)) for i in everyone}
        g = TrustGraph.build(unls, fault_budget=budgets)
        if not audit(g, Condition.FORK_SAFETY):
            return g
    raise RuntimeError("no fork-safe graph found")


def random_byzantine_set(rng: random.Random, g: TrustGraph) -> frozenset:
    """A random Byzantine set that every remaining honest node can tolerate."""
    order = list(g.nodes)
    rng.shuffle(order)
    byz: set[int] = set()
    for cand in order:
        if byz and rng.random() < 0.5:
            continue
        trial = byz | {cand}
        if all(len(trial & g.unl(i)) <= g.t(i) for i in g.nodes if i not in trial):
            byz = trial
        if len(byz) >= len(order) // 3:
            break
    return frozenset(byz)


def random_submissions(rng: random.Random, nodes, horizon: int, count: int, prefix: str = "tx") -> tuple:
    nodes = list(nodes)
    return tuple(
        sorted((rng.randrange(horizon), rng.choice(nodes), f"{prefix}{k}") for k in range(count))
    )


def safety_scenario(graph: TrustGraph, byzantine: frozenset, seed: int, max_ticks: int = 60) -> Scenario:
    """One randomized adversarial run on a fork-safe graph."""
    rng = random.Random(f"safety/{seed}")
    honest = [i for i in graph.nodes if i not in byzantine]
    interval = rng.choice((1, 1, 2))
    policy = AdversaryPolicy(
        kind="seeded",
        delay=rng.randint(1, 4),
        byzantine=byzantine,
        accountability=rng.random() < 0.3,
        drop_rate=rng.choice((0.0, 0.05, 0.15)),
        partition_count=rng.randint(0, 3),
        byzantine_rate=rng.choice((0.3, 0.7, 1.0)),
    )
    pending = {i: frozenset(rng.sample(["a", "b", "c", "d"], rng.randint(0, 3))) for i in honest}
    return Scenario(
        graph=graph,
        policy=policy,
        initial_pending=pending,
        max_ticks=max_ticks,
        name="safety_random",
        seed=seed,
        submissions=random_submissions(rng, honest, max_ticks, rng.randint(0, 12)),
        update_interval=interval,
        offsets={i: rng.randrange(interval) for i in honest},
    )


def leaves_graph(core: int, leaves: list[list[int]], k: int = 5) -> TrustGraph:
    """Core ``0..core-1`` trusting itself; leaf ``core + m`` trusts itself plus ``leaves[m]``."""
    unls = {i: list(range(core)) for i in range(core)}
    for m, members in enumerate(leaves):
        unls[core + m] = sorted(set(members) | {core + m})
    return TrustGraph.build(unls, QuorumPolicy.floor_div(k))


def random_leaves_graph(rng: random.Random, k: int = 5, max_leaves: int = 10) -> TrustGraph:
    """Core of size k..3k plus 0..max_leaves leaves, each trusting >= q_i core nodes."""
    core = rng.randint(k, 3 * k)
    policy = QuorumPolicy.floor_div(k)
    leaves = []
    for _ in range(rng.randint(0, max_leaves)):
        # |N'| must reach the leaf's own quorum over |N'| + 1 members
        sizes = [s for s in range(1, core + 1) if s >= policy(s + 1)]
        size = rng.choice(sizes)
        leaves.append(sorted(rng.sample(range(core), size)))
    return leaves_graph(core, leaves, k)


def liveness_scenario(graph: TrustGraph, seed: int, rounds: int = 60, open_phase: int = 0) -> Scenario:
    """Civil run with random per-message delays in ``[1, D]`` and random submissions.

    Nodes update in lockstep every ``D`` ticks, so every message sent at one
    update has arrived by the next one: the synchronous-rounds setting.
    """
    rng = random.Random(f"liveness/{seed}")
    delay = rng.randint(1, 3)
    max_ticks = rounds * delay
    nodes = list(graph.nodes)
    pending = {i: frozenset(rng.sample(["a", "b", "c"], rng.randint(0, 2))) for i in nodes}
    return Scenario(
        graph=graph,
        policy=civil(delay),
        initial_pending=pending,
        max_ticks=max_ticks,
        name="liveness_random",
        seed=seed,
        submissions=random_submissions(rng, nodes, max_ticks, rng.randint(5, 25)),
        update_interval=delay,
        open_phase=open_phase,
        probe_ticks=40,
    )
