"""Independent reference computations used to cross-check the package.

Nothing here imports the code under test except plain data containers; each
function recomputes its answer from first principles, slowly and literally.
"""

from __future__ import annotations

import functools
import hashlib
from fractions import Fraction


def quorum_fraction(n: int, ratio: Fraction = Fraction(4, 5)) -> int:
    """Smallest q with q >= ratio * n, found by counting up."""
    q = 0
    while q < ratio * n:
        q += 1
    return q


def quorum_floordiv(n: int, k: int) -> int:
    """n minus the largest m with m * k <= n - 1."""
    m = 0
    while (m + 1) * k <= n - 1:
        m += 1
    return n - m


def ledger_hash(parent: bytes | None, seq: int, txs) -> bytes:
    """Re-derive a ledger digest from the documented byte layout."""
    parts = [b"lcpsim/ledger/v1\x00"]
    parts.append(b"\x00" if parent is None else b"\x01" + parent)
    parts.append(seq.to_bytes(8, "big"))
    ordered = sorted({str(t).encode("utf-8") for t in txs})
    parts.append(len(ordered).to_bytes(4, "big"))
    for raw in ordered:
        parts.append(len(raw).to_bytes(4, "big") + raw)
    return hashlib.sha256(b"".join(parts)).digest()


GENESIS_HASH = ledger_hash(None, 1, ())


def holds(condition: str, n_i, q_i, n_j, q_j, o, t_ij=0) -> bool:
    """Overlap conditions written directly as rational inequalities."""
    s_i, s_j = n_i - q_i, n_j - q_j
    if condition == "whitepaper":
        return o >= max(s_i, s_j)
    if condition == "armknecht":
        return o > 2 * max(s_i, s_j)
    if condition == "same-seq-accountable":
        return o > s_i + s_j
    if condition == "same-seq-byzantine":
        return o > s_i + s_j + t_ij
    if condition == "fork-safety":
        return o > Fraction(n_j, 2) + s_i + t_ij
    raise ValueError(condition)


def lemma1(n_i, n_j, o, t, m) -> tuple[int, int]:
    """Closed forms: least honest L-voters j hears, most contrary votes j sees."""
    least = max(0, o + m - n_i - t)
    most = min(n_j, n_i + n_j - o - m + t)
    return least, most


# -- preferred branch, literally --------------------------------------------


class Tree:
    """Parent-pointer view of a set of ledgers: hash -> (parent, seq)."""

    def __init__(self, store):
        self.parent = {led.hash: led.parent for led in store}
        self.seq = {led.hash: led.seq for led in store}

    def ancestors(self, h) -> list:
        out = []
        p = self.parent[h]
        while p is not None:
            out.append(p)
            p = self.parent[p]
        return out


def preferred_literal(store, votes, s_max: int, working: bytes) -> bytes:
    """The fork-choice walk done the long way.

    ``votes`` is a list of validated digests, one per trusted peer.  The walk
    starts at genesis; ``children`` are the ledgers lying on some voter's
    chain; branch support and uncommitted counts are recomputed from their
    definitions at every step.
    """
    if not votes:
        return working
    tree = Tree(store)
    chains = {v: [v] + tree.ancestors(v) for v in votes}
    on_chain = set().union(*chains.values())

    def branch(h):
        return sum(1 for v in votes if h in chains[v])

    def uncommitted(s):
        bar = max(s, s_max)
        return sum(1 for v in votes if tree.seq[v] < bar)

    def compare(a, b):
        if branch(a) != branch(b):
            return branch(b) - branch(a)
        return -1 if a > b else 1  # the higher hash sorts first

    cur = GENESIS_HASH
    while True:
        kids = sorted((h for h in on_chain if tree.parent[h] == cur), key=functools.cmp_to_key(compare))
        if not kids:
            break
        delta = branch(kids[0])
        if len(kids) > 1:
            delta = delta - branch(kids[1]) + (1 if kids[0] > kids[1] else 0)
        if delta > uncommitted(tree.seq[cur] + 1):
            cur = kids[0]
        else:
            break
    if cur in tree.ancestors(working):
        return working
    return cur
