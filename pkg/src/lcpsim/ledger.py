"""Content-addressed ledger DAG.

A ledger is identified by a SHA-256 digest over a canonical encoding of its
parent digest, sequence number and sorted transaction ids.  Transactions carry
no payload; only their identity matters to consensus.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

LEDGER_TAG = b"lcpsim/ledger/v1\x00"


class LedgerError(KeyError):
    pass


class HashCollisionError(RuntimeError):
    pass


def canonical_txs(txs: Iterable) -> tuple[str, ...]:
    # str order is code-point order, which matches UTF-8 byte order.
    return tuple(sorted({str(x) for x in txs}))


def ledger_digest(parent: Optional[bytes], seq: int, txs: tuple[str, ...]) -> bytes:
    h = hashlib.sha256(LEDGER_TAG)
    if parent is None:
        h.update(b"\x00")
    else:
        h.update(b"\x01" + parent)
    h.update(struct.pack(">Q", seq))
    h.update(struct.pack(">I", len(txs)))
    for tx in txs:
        raw = tx.encode("utf-8")
        h.update(struct.pack(">I", len(raw)) + raw)
    return h.digest()


@dataclass(frozen=True)
class Ledger:
    hash: bytes
    parent: Optional[bytes]
    seq: int
    txs: tuple[str, ...]

    @property
    def hex(self) -> str:
        return self.hash.hex()

    def short(self) -> str:
        return self.hash.hex()[:8]

    def to_dict(self) -> dict:
        return {
            "hash": self.hash.hex(),
            "parent": self.parent.hex() if self.parent is not None else None,
            "seq": self.seq,
            "txs": list(self.txs),
        }


def genesis() -> Ledger:
    return Ledger(ledger_digest(None, 1, ()), None, 1, ())


GENESIS = genesis()


def phi(a: Ledger, b: Ledger) -> int:
    """1 if ``a`` hashes strictly above ``b`` (unsigned byte order), else 0."""
    return 1 if a.hash > b.hash else 0


class LedgerStore:
    """Append-only ledger DAG closed under parents.

    Every stored ledger caches its chain of digests from genesis, which makes
    ancestry queries a single index lookup.
    """

    def __init__(self):
        self.ledgers: dict[bytes, Ledger] = {GENESIS.hash: GENESIS}
        self.children: dict[bytes, set[bytes]] = {GENESIS.hash: set()}
        self._chain: dict[bytes, tuple[bytes, ...]] = {GENESIS.hash: (GENESIS.hash,)}
        self._included: dict[bytes, frozenset] = {GENESIS.hash: frozenset()}
        self.names: dict[bytes, str] = {GENESIS.hash: "genesis"}

    @property
    def genesis(self) -> Ledger:
        return GENESIS

    def __contains__(self, h) -> bool:
        return _digest(h) in self.ledgers

    def __len__(self) -> int:
        return len(self.ledgers)

    def __iter__(self):
        return iter(self.ledgers.values())

    def get(self, h) -> Ledger:
        try:
            return self.ledgers[_digest(h)]
        except KeyError:
            raise LedgerError(f"unknown ledger {_show(h)}") from None

    def apply(self, parent, txs: Iterable = ()) -> Ledger:
        parent = self.get(parent)
        canon = canonical_txs(txs)
        digest = ledger_digest(parent.hash, parent.seq + 1, canon)
        existing = self.ledgers.get(digest)
        if existing is not None:
            if existing.parent != parent.hash or existing.txs != canon:
                raise HashCollisionError(f"digest collision at {digest.hex()}")
            return existing
        ledger = Ledger(digest, parent.hash, parent.seq + 1, canon)
        self.ledgers[digest] = ledger
        self.children[digest] = set()
        self.children[parent.hash].add(digest)
        self._chain[digest] = self._chain[parent.hash] + (digest,)
        self._included[digest] = self._included[parent.hash] | set(canon)
        return ledger

    def name(self, h, label: str) -> None:
        self.names[self.get(h).hash] = label

    def label(self, h) -> str:
        h = _digest(h)
        return self.names.get(h, h.hex()[:8])

    def chain(self, h) -> tuple[bytes, ...]:
        """Digests from genesis down to ``h`` inclusive; index ``k`` has seq ``k+1``."""
        try:
            return self._chain[_digest(h)]
        except KeyError:
            raise LedgerError(f"unknown ledger {_show(h)}") from None

    def included_txs(self, h) -> frozenset:
        """Every transaction applied on the path from genesis to ``h``."""
        return self._included[self.get(h).hash]

    def ancestor_at(self, h, seq: int) -> Ledger:
        chain = self.chain(h)
        if not 1 <= seq <= len(chain):
            raise LedgerError(f"no ancestor of {_show(h)} at seq {seq}")
        return self.ledgers[chain[seq - 1]]

    def is_ancestor(self, a, b) -> bool:
        a, b = self.get(a), self.get(b)
        if a.seq >= b.seq:
            return False
        return self._chain[b.hash][a.seq - 1] == a.hash

    def is_ancestor_or_equal(self, a, b) -> bool:
        a, b = _digest(a), _digest(b)
        return a == b or self.is_ancestor(a, b)

    def contradicts(self, a, b) -> bool:
        """Neither ledger is an ancestor-or-equal of the other."""
        return not (self.is_ancestor_or_equal(a, b) or self.is_ancestor_or_equal(b, a))

    def common_ancestor(self, ledgers: Iterable) -> Ledger:
        """Deepest ledger that is an ancestor-or-equal of every input."""
        chains = [self.chain(x) for x in ledgers]
        if not chains:
            raise ValueError("common_ancestor of an empty set")
        best = chains[0]
        for other in chains[1:]:
            lo, hi = 0, min(len(best), len(other))
            # chains agree on a prefix; binary search its length
            while lo < hi:
                mid = (lo + hi + 1) // 2
                if best[mid - 1] == other[mid - 1]:
                    lo = mid
                else:
                    hi = mid - 1
            best = best[:lo]
        return self.ledgers[best[-1]]


def is_ancestor(store: LedgerStore, a, b) -> bool:
    return store.is_ancestor(a, b)


def common_ancestor(store: LedgerStore, ledgers: Iterable) -> Ledger:
    return store.common_ancestor(ledgers)


def _digest(h) -> bytes:
    if isinstance(h, Ledger):
        return h.hash
    if isinstance(h, str):
        return bytes.fromhex(h)
    return h


def _show(h) -> str:
    try:
        return _digest(h).hex()[:8]
    except (ValueError, TypeError):
        return repr(h)
