import json
from pathlib import Path

import pytest

from lcpsim.ledger import (
    GENESIS,
    Ledger,
    LedgerError,
    LedgerStore,
    common_ancestor,
    genesis,
    is_ancestor,
    phi,
)

import oracles

GOLDEN = json.loads((Path(__file__).parent / "golden" / "ledger_hashes.json").read_text())


@pytest.fixture
def fig4():
    """genesis - A - B - D - E and A - C - F."""
    s = LedgerStore()
    a = s.apply(GENESIS, ["a"])
    b = s.apply(a, ["b"])
    c = s.apply(a, ["c"])
    d = s.apply(b, ["d"])
    e = s.apply(d, ["e"])
    f = s.apply(c, ["f"])
    return s, dict(A=a, B=b, C=c, D=d, E=e, F=f)


def test_genesis():
    assert genesis().seq == 1
    assert genesis().parent is None
    assert genesis().hash == genesis().hash == GENESIS.hash


def test_golden_hashes():
    s = LedgerStore()
    empty = s.apply(GENESIS, [])
    both = s.apply(GENESIS, ["x1", "x0"])
    one = s.apply(GENESIS, ["x0"])
    deep = s.apply(both, ["z", "é", "a"])
    assert GENESIS.hex == GOLDEN["genesis"]
    assert empty.hex == GOLDEN["genesis+{}"]
    assert both.hex == GOLDEN["genesis+{x0,x1}"]
    assert one.hex == GOLDEN["genesis+{x0}"]
    assert deep.hex == GOLDEN["genesis+{x0,x1}+{a,z,é}"]


def test_hash_matches_independent_encoding():
    s = LedgerStore()
    led = s.apply(GENESIS, ["tx-9", "tx-10", "ü"])
    assert led.hash == oracles.ledger_hash(GENESIS.hash, 2, ["tx-9", "tx-10", "ü"])
    assert GENESIS.hash == oracles.GENESIS_HASH


def test_apply_examples():
    s = LedgerStore()
    empty = s.apply(GENESIS, set())
    assert empty.seq == 2 and empty.txs == ()
    assert s.apply(GENESIS, {"x1", "x0"}).hash == s.apply(GENESIS, {"x0", "x1"}).hash
    a, b = s.apply(GENESIS, {"x0"}), s.apply(GENESIS, {"x0", "x1"})
    assert a.hash != b.hash and a.seq == b.seq == 2


def test_apply_is_idempotent_and_sorts():
    s = LedgerStore()
    first = s.apply(GENESIS, ["b", "a", "a"])
    assert first.txs == ("a", "b")
    n = len(s)
    assert s.apply(GENESIS, ["a", "b"]) is first
    assert len(s) == n


def test_apply_unknown_parent():
    s = LedgerStore()
    stranger = Ledger(b"\x01" * 32, GENESIS.hash, 2, ())
    with pytest.raises(LedgerError):
        s.apply(stranger, ["x"])


def test_is_ancestor(fig4):
    s, L = fig4
    assert is_ancestor(s, GENESIS, L["E"])
    assert not is_ancestor(s, L["E"], L["E"])
    assert is_ancestor(s, L["B"], L["E"])
    assert not is_ancestor(s, L["C"], L["E"])
    assert not is_ancestor(s, L["E"], L["B"])


def test_is_ancestor_unknown():
    s = LedgerStore()
    with pytest.raises(LedgerError):
        s.is_ancestor(GENESIS, b"\x00" * 32)


def test_common_ancestor(fig4):
    s, L = fig4
    assert common_ancestor(s, [L["D"]]) == L["D"]
    assert common_ancestor(s, [L["F"], L["E"], L["D"], L["B"]]) == L["A"]
    assert common_ancestor(s, [L["E"], L["D"]]) == L["D"]
    with pytest.raises(ValueError):
        common_ancestor(s, [])


def test_contradicts(fig4):
    s, L = fig4
    assert s.contradicts(L["E"], L["F"])
    assert s.contradicts(L["B"], L["C"])
    assert not s.contradicts(L["A"], L["E"])
    assert not s.contradicts(L["E"], L["E"])


def test_chain_and_ancestor_at(fig4):
    s, L = fig4
    chain = s.chain(L["E"])
    assert [s.get(h).seq for h in chain] == [1, 2, 3, 4, 5]
    assert s.ancestor_at(L["E"], 3) == L["B"]
    assert s.included_txs(L["F"]) == {"a", "c", "f"}
    with pytest.raises(LedgerError):
        s.ancestor_at(L["E"], 6)


def test_children_index(fig4):
    s, L = fig4
    assert s.children[L["A"].hash] == {L["B"].hash, L["C"].hash}
    for led in s:
        if led.parent is not None:
            assert led.hash in s.children[led.parent]


def test_lookup_by_hex_and_labels(fig4):
    s, L = fig4
    assert s.get(L["C"].hex) == L["C"]
    assert L["C"].hex in s
    s.name(L["C"], "LC")
    assert s.label(L["C"]) == "LC"
    assert s.label(L["F"]) == L["F"].hex[:8]


def test_phi():
    a = Ledger(bytes([2]) + bytes(31), None, 1, ())
    b = Ledger(bytes([1]) + bytes(31), None, 1, ())
    assert phi(a, b) == 1 and phi(b, a) == 0
    assert phi(a, a) == 0


def test_ledger_to_dict(fig4):
    s, L = fig4
    d = L["F"].to_dict()
    assert d == {"hash": L["F"].hex, "parent": L["C"].hex, "seq": 4, "txs": ["f"]}
