"""Verdicts over finished runs, plus exhaustive oracles for the overlap bounds.

The oracles model a single validation round: every honest node votes for one
of two conflicting ledgers, Byzantine nodes vote however helps the adversary,
and we ask whether two designated honest observers can both reach quorum on
different ledgers.  They are deliberately written as brute force over vote
assignments, independent of the closed-form conditions in :mod:`lcpsim.trust`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ledger import LedgerStore
from .trust import TrustGraph

DEFAULT_ORACLE_LIMIT = 12


@dataclass(frozen=True)
class ForkWitness:
    nodes: tuple[int, int]
    ledgers: tuple[bytes, bytes]
    seqs: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "ledgers": [h.hex() for h in self.ledgers],
            "seqs": list(self.seqs),
        }


@dataclass
class StuckEvidence:
    probe_ticks: int
    stuck_nodes: list
    last_full_validation_tick: dict
    pinned: dict = field(default_factory=dict)  # node -> working/preferred digests and seqs

    def to_dict(self) -> dict:
        return {
            "probe_ticks": self.probe_ticks,
            "stuck_nodes": list(self.stuck_nodes),
            "last_full_validation_tick": {str(k): v for k, v in self.last_full_validation_tick.items()},
            "pinned": {str(k): v for k, v in self.pinned.items()},
        }


# -- fork / stuck -------------------------------------------------------------


def detect_fork(report, store: LedgerStore) -> Optional[ForkWitness]:
    """First pair of contradictory full validations among honest nodes, if any.

    Full validation is ancestor-closed, so once every node's own history is a
    chain it suffices to compare the final tips pairwise.
    """
    genesis = store.genesis.hash
    tips = {}
    for i in sorted(report.full_validations):
        prev = genesis
        for _tick, h in report.full_validations[i]:
            if not store.is_ancestor_or_equal(prev, h):
                return ForkWitness((i, i), (prev, h), (store.get(prev).seq, store.get(h).seq))
            prev = h
        tips[i] = prev
    ids = sorted(tips)
    for a_idx, a in enumerate(ids):
        for b in ids[a_idx + 1:]:
            ta, tb = tips[a], tips[b]
            if store.contradicts(ta, tb):
                return ForkWitness((a, b), (ta, tb), (store.get(ta).seq, store.get(tb).seq))
    return None


def detect_stuck(world, probe_ticks: int) -> Optional[StuckEvidence]:
    """Continue a copy of ``world`` under Civil(1) with Byzantine nodes silent.

    Reports the honest nodes that record no new full validation during the
    probe.  ``world`` itself is left untouched.
    """
    if probe_ticks <= 0:
        raise ValueError(f"probe_ticks must be positive, got {probe_ticks}")
    trace = world.trace
    world.trace = []  # keep the copy cheap; the probe's own trace is discarded
    try:
        probe = world.snapshot()
    finally:
        world.trace = trace
    probe.civilize(1)
    before = {i: len(h) for i, h in probe.full_validations.items()}
    end = probe.now + probe_ticks
    probe.max_ticks = end
    while probe.now < end:
        probe.step()
    stuck = [i for i in sorted(probe.nodes) if len(probe.full_validations[i]) == before[i]]
    if not stuck:
        return None
    last = {}
    for i in sorted(probe.nodes):
        hist = probe.full_validations[i]
        last[i] = hist[-1][0] if hist else None
    pinned = {}
    for i in stuck:
        node = probe.nodes[i]
        w, p = probe.store.get(node.working), node.preferred_ledger()
        pinned[i] = {"working": w.hex, "working_seq": w.seq, "preferred": p.hex, "preferred_seq": p.seq}
    return StuckEvidence(probe_ticks, stuck, last, pinned)


def rounds_without_full_validation(report, store: LedgerStore, horizon: int = 0) -> list[int]:
    """Sequence numbers some honest node validated but no honest node fully validated.

    Validations emitted in the last ``horizon`` ticks are ignored: they may
    simply not have been delivered before the run ended.
    """
    cutoff = report.ticks - horizon
    validated = {seq for hist in report.validations.values() for t, _h, seq in hist if t <= cutoff}
    full = {store.get(h).seq for hist in report.full_validations.values() for _t, h in hist}
    return sorted(validated - full)


def sync_tick(report, store: LedgerStore) -> Optional[int]:
    """First tick by which every honest node has fully validated past genesis."""
    firsts = []
    for hist in report.full_validations.values():
        first = next((t for t, h in hist if store.get(h).seq > 1), None)
        if first is None:
            return None
        firsts.append(first)
    return max(firsts, default=None)


def skipped_after_sync(report, store: LedgerStore) -> Optional[dict]:
    """Per node, the sequence numbers it jumped over after synchronisation.

    From :func:`sync_tick` on, a node that fully validates every consensus
    round records consecutive sequence numbers.  Returns ``None`` if the
    network never synchronised.
    """
    t0 = sync_tick(report, store)
    if t0 is None:
        return None
    out = {}
    for i, hist in sorted(report.full_validations.items()):
        seqs = [store.get(h).seq for t, h in hist if t >= t0]
        missed = [s for a, b in zip(seqs, seqs[1:]) for s in range(a + 1, b)]
        if missed:
            out[i] = missed
    return out


@dataclass(frozen=True)
class StabilityViolation:
    trigger_tick: int
    ledger: bytes
    node: int
    tick: int
    validated: bytes


def branch_stability_violations(report, store: LedgerStore, graph: TrustGraph, strict: bool = False) -> list:
    """Watch for honest validations that leave a branch a majority already holds.

    The trigger for ledger ``L`` fires once, for every honest node ``i``,
    strictly more than ``n_i / 2`` honest members of ``UNL_i`` have emitted a
    validation for ``L``.  After that, a violation is a validation by an
    honest node that had itself validated ``L`` for a later ledger that does
    not descend from ``L``.

    With ``strict=True`` every honest node is watched and any non-descendant
    with ``seq >= seq(L)`` counts, which is stronger than message delays allow
    (a node that has not yet heard of ``L`` can still build a sibling).
    """
    honest = set(report.honest)
    unls = {i: graph.unl(i) & honest for i in honest}
    events = sorted(
        (t, node, k, h, seq)
        for node, hist in report.validations.items()
        for k, (t, h, seq) in enumerate(hist)
    )
    emitted: dict[bytes, set] = {}
    triggers: list[tuple[int, bytes, int]] = []
    triggered: set = set()
    out = []
    for t, node, _k, h, seq in events:
        for t0, L, s0 in triggers:
            if store.is_ancestor_or_equal(L, h):
                continue
            if strict:
                bad = seq >= s0
            else:
                bad = seq > s0 and node in emitted[L]
            if bad:
                out.append(StabilityViolation(t0, L, node, t, h))
        emitted.setdefault(h, set()).add(node)
        if h not in triggered:
            voters = emitted[h]
            if all(2 * len(voters & unls[i]) > graph.n(i) for i in honest):
                triggered.add(h)
                triggers.append((t, h, seq))
    return out


# -- closed forms -----------------------------------------------------------------


def lemma1_bounds(n_i: int, n_j: int, o: int, t_ij: int, m: int) -> dict:
    """Least honest L-validators ``j`` must hear from, and most contrary votes it can see.

    Given that ``i`` saw ``m`` validations for ``L``.  Both values are clamped
    into ``[0, n_j]``.
    """
    if not (0 <= o <= min(n_i, n_j) and 0 <= m <= n_i and 0 <= t_ij <= o):
        raise ValueError(f"infeasible parameters n_i={n_i} n_j={n_j} O={o} t={t_ij} m={m}")
    min_honest = max(0, o + m - n_i - t_ij)
    return {"min_honest_j": min_honest, "max_contra_j": n_j - min_honest}


# -- exhaustive search ----------------------------------------------------------


def _all_masks(width: int) -> np.ndarray:
    return np.arange(1 << width, dtype=np.uint32)


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a).astype(np.int16)


def lemma1_search(n_i: int, n_j: int, o: int, t: int, m: int) -> dict:
    """Exhaustively attain the :func:`lemma1_bounds` quantities on a two-UNL layout.

    Nodes split into ``A`` (only in ``UNL_i``), ``C`` (the overlap) and ``B``
    (only in ``UNL_j``); both observers allow ``t`` Byzantine members.  Every
    honest vote pattern over ``A ∪ C`` and every Byzantine vote towards ``i``
    is enumerated, for every Byzantine placement up to relabelling inside a
    region.  Returns the least number of honest ``UNL_j`` members voting
    ``L`` and the most votes ``j`` can see against ``L``, over all worlds in
    which ``i`` sees at least ``m`` votes for ``L``.
    """
    if not (0 <= o <= min(n_i, n_j) and 0 <= m <= n_i and 0 <= t):
        raise ValueError(f"infeasible parameters n_i={n_i} n_j={n_j} O={o} t={t} m={m}")
    a_size, b_size = n_i - o, n_j - o
    best_honest, best_contra = None, None
    for ba in range(min(t, a_size) + 1):
        for bc in range(min(t - ba, o) + 1):
            for bb in range(min(t - bc, b_size) + 1):
                ha, hc = a_size - ba, o - bc
                # honest bits: first ha are A, next hc are C (B votes never reach i)
                masks = _all_masks(ha + hc)
                c_bits = np.uint32(((1 << hc) - 1) << ha)
                seen_i_honest = _popcount(masks)
                honest_j_l = _popcount(masks & c_bits)
                # Byzantine members of UNL_i tell i "L" or not, independently
                for byz_l in range(ba + bc + 1):
                    ok = seen_i_honest + byz_l >= m
                    if not ok.any():
                        continue
                    lo = int(honest_j_l[ok].min())
                    # j hears against L from honest non-L voters and all of its Byzantine members
                    contra = n_j - lo
                    if best_honest is None or lo < best_honest:
                        best_honest = lo
                    if best_contra is None or contra > best_contra:
                        best_contra = contra
    return {"min_honest_j": best_honest, "max_contra_j": best_contra}


def brute_force_fork_search(
    g: TrustGraph,
    i: int,
    j: int,
    accountability: bool,
    limit: int = DEFAULT_ORACLE_LIMIT,
) -> Optional[dict]:
    """Find a one-round vote assignment letting ``i`` and ``j`` commit different ledgers.

    ``i`` must reach ``q_i`` votes for ``L`` and ``j`` must reach ``q_j``
    votes for ``L'``.  Byzantine sets are drawn from ``UNL_i ∪ UNL_j``
    (never ``i`` or ``j``) within both fault budgets, enumerated up to
    relabelling among nodes with the same membership.  Honest votes range
    over every assignment.  Without accountability a Byzantine node may tell
    ``i`` and ``j`` different things; with it, one vote serves both.
    """
    ui, uj = g.unl(i), g.unl(j)
    universe = sorted(ui | uj)
    if len(universe) > limit:
        raise ValueError(f"universe of {len(universe)} nodes exceeds the oracle limit {limit}")
    q_i, q_j = g.q(i), g.q(j)
    candidates = [x for x in universe if x not in (i, j)]
    regions: dict[tuple[bool, bool], list[int]] = {}
    for x in candidates:
        regions.setdefault((x in ui, x in uj), []).append(x)
    keys = sorted(regions)
    for counts in itertools.product(*(range(len(regions[k]) + 1) for k in keys)):
        byz = [x for k, c in zip(keys, counts) for x in regions[k][:c]]
        if sum(1 for x in byz if x in ui) > g.t(i) or sum(1 for x in byz if x in uj) > g.t(j):
            continue
        found = _search_placement(universe, byz, ui, uj, q_i, q_j, accountability)
        if found is not None:
            return found
    return None


def _search_placement(universe, byz, ui, uj, q_i, q_j, accountability) -> Optional[dict]:
    byz_set = set(byz)
    honest = [x for x in universe if x not in byz_set]
    bit_i = sum(1 << k for k, x in enumerate(honest) if x in ui)
    bit_j = sum(1 << k for k, x in enumerate(honest) if x in uj)
    n_hj = sum(1 for x in honest if x in uj)
    masks = _all_masks(len(honest))  # bit set = votes L
    votes_i = _popcount(masks & np.uint32(bit_i))
    votes_j = n_hj - _popcount(masks & np.uint32(bit_j))
    if accountability:
        patterns = [tuple((v, v) for v in combo) for combo in itertools.product("LM", repeat=len(byz))]
    else:
        pairs = list(itertools.product("LM", repeat=2))
        patterns = list(itertools.product(pairs, repeat=len(byz)))
    for pattern in patterns:
        extra_i = sum(1 for x, (to_i, _) in zip(byz, pattern) if x in ui and to_i == "L")
        extra_j = sum(1 for x, (_, to_j) in zip(byz, pattern) if x in uj and to_j == "M")
        hit = np.flatnonzero((votes_i + extra_i >= q_i) & (votes_j + extra_j >= q_j))
        if hit.size:
            a = int(masks[hit[0]])
            return {
                "byzantine": list(byz),
                "honest_votes": {x: ("L" if a >> k & 1 else "L'") for k, x in enumerate(honest)},
                "byzantine_votes": {
                    x: ("L" if ti == "L" else "L'", "L" if tj == "L" else "L'")
                    for x, (ti, tj) in zip(byz, pattern)
                },
            }
    return None
