import dataclasses

import pytest

from lcpsim.ledger import GENESIS
from lcpsim.protocol import Proposal, Validation
from lcpsim.scenario import dumps_report
from lcpsim.sim import (
    AdversaryPolicy,
    Injection,
    Rule,
    Scenario,
    ScenarioError,
    Simulation,
    civil,
    run,
)
from lcpsim.trust import TrustGraph


def shared(n, **kw):
    return TrustGraph.build({i: range(n) for i in range(n)}, **kw)


def civil_scenario(n=5, ticks=12, **kw):
    return Scenario(
        graph=shared(n),
        initial_pending={i: frozenset({"t"}) for i in range(n)},
        max_ticks=ticks,
        **kw,
    )


# -- determinism / civil runs ----------------------------------------------------


def test_same_seed_same_report():
    sc = Scenario(
        graph=shared(6),
        policy=AdversaryPolicy("seeded", delay=3, drop_rate=0.2, partition_count=2),
        initial_pending={i: frozenset({f"x{i % 3}"}) for i in range(6)},
        max_ticks=40,
        seed=11,
    )
    a, sim_a = run(sc)
    b, sim_b = run(sc)
    assert dumps_report(a, sim_a.store) == dumps_report(b, sim_b.store)
    c, sim_c = run(sc, seed=12)
    assert dumps_report(a, sim_a.store) != dumps_report(c, sim_c.store)


def test_civil_shared_unl_validates_every_round():
    report, sim = run(civil_scenario())
    histories = {i: [h for _t, h in hist] for i, hist in report.full_validations.items()}
    first = histories[0]
    assert len(first) >= 5
    assert all(h == first for h in histories.values())
    seqs = [sim.store.get(h).seq for h in first]
    assert seqs == list(range(2, 2 + len(seqs)))
    assert report.fork is None


def test_validations_strictly_increase_per_node():
    sc = Scenario(
        graph=shared(7),
        policy=AdversaryPolicy("seeded", delay=4, drop_rate=0.3, partition_count=3),
        initial_pending={i: frozenset({"a", "b"} if i % 2 else {"a"}) for i in range(7)},
        max_ticks=60,
        seed=5,
    )
    report, _ = run(sc)
    for hist in report.validations.values():
        seqs = [seq for _t, _h, seq in hist]
        assert seqs == sorted(set(seqs))


def test_trace_is_ordered():
    report, _ = run(civil_scenario())
    ticks = [r["tick"] for r in report.trace]
    assert ticks == sorted(ticks)
    assert {r["kind"] for r in report.trace} >= {"propose", "validate", "fully-validate"}


# -- step / inject / partition ---------------------------------------------------------


def test_empty_queue_step_only_advances_time():
    sc = Scenario(graph=shared(3), max_ticks=10, update_interval=100)
    sim = Simulation(sc)
    sim.step()  # initialisation broadcasts
    sim.run_until(4)
    sim._queue.clear()
    before = len(sim.trace)
    sim.step()
    assert sim.now == 5 and len(sim.trace) == before


def test_partition_holds_messages_until_it_heals():
    sc = civil_scenario(n=4, ticks=20)
    sim = Simulation(sc)
    sim.partition([[0, 1], [2, 3]], 0, 6)
    sim.run_until(5)
    n0 = sim.nodes[0]
    assert set(n0.props) <= {0, 1}
    assert all(n0.last_vals[j].ledger == GENESIS.hash for j in (2, 3))
    sim.run_until(20)
    assert sim.nodes[0].fv_seq > 1


def test_drops_are_queued_until_the_horizon():
    rules = (Rule("drop", kind="proposal", senders=frozenset({3}), recipients=frozenset({0})),)
    sc = Scenario(graph=shared(4), policy=AdversaryPolicy("scripted", rules=rules), max_ticks=8)
    sim = Simulation(sc)
    sim.run_until(8)
    parked = [m for (r, s, _n, m) in sim._queue[8] if r == 0 and s == 3 and isinstance(m, Proposal)]
    assert len(parked) >= 5  # every proposal 3 -> 0, none destroyed
    assert 3 not in sim.nodes[0].props
    assert sim.nodes[0].last_vals[3].seq > 1  # validations are untouched


def test_inject_forged_validation_to_one_recipient():
    g = shared(5)
    sc = Scenario(graph=g, policy=AdversaryPolicy("scripted", byzantine=frozenset({4})), max_ticks=5)
    sim = Simulation(sc)
    forged = sim.store.apply(GENESIS, ["forged"])
    sim.step()
    sim.inject(Validation(forged.hash, 2, 4), recipients=[0])
    sim.step()
    assert sim.nodes[0].last_vals[4].ledger == forged.hash
    assert sim.nodes[1].last_vals[4].ledger == GENESIS.hash


def test_scripted_injection_reaches_listeners():
    g = shared(5)
    msg = Validation(GENESIS.hash, 1, 4)
    pol = AdversaryPolicy("scripted", byzantine=frozenset({4}), injections=(Injection(2, msg),))
    report, sim = run(Scenario(graph=g, policy=pol, max_ticks=5))
    sent = [r for r in report.trace if r.get("byzantine")]
    assert len(sent) == 1 and sent[0]["recipients"] == [0, 1, 2, 3, 4]


def test_update_interval_and_offsets():
    sc = civil_scenario(n=2, ticks=9, update_interval=3, offsets={1: 1})
    report, _ = run(sc)
    steps = {}
    for r in report.trace:
        if r["kind"] == "propose" and r["tick"] > 0:
            steps.setdefault(r["node"], set()).add(r["tick"])
    assert steps[0] <= {3, 6}
    assert steps[1] <= {1, 4, 7}


def test_open_phase_skips_one_update_after_consensus():
    sc = civil_scenario(n=3, ticks=10, open_phase=1)
    report, _ = run(sc)
    ticks = [t for t, _h, _s in report.validations[0]]
    assert ticks == [1, 3, 5, 7, 9]


def test_stop_at_seq():
    report, sim = run(civil_scenario(ticks=50, stop_at_seq=4))
    assert all(n.fv_seq >= 4 for n in sim.nodes.values())
    assert report.ticks < 50


def test_civilize_pulls_late_messages_in():
    rules = (Rule("drop"),)
    sc = Scenario(graph=shared(3), policy=AdversaryPolicy("scripted", rules=rules), max_ticks=30)
    sim = Simulation(sc)
    sim.run_until(5)
    assert all(n.fv_seq == 1 for n in sim.nodes.values())
    sim.civilize(1)
    sim.max_ticks = 15
    sim.run_until(15)
    assert all(n.fv_seq > 1 for n in sim.nodes.values())


# -- Byzantine behaviour ----------------------------------------------------------------


def byzantine_run(accountability, seed):
    g = shared(6)  # q = 5, t = 1
    pol = AdversaryPolicy(
        "seeded", delay=2, byzantine=frozenset({5}), accountability=accountability, byzantine_rate=1.0
    )
    sc = Scenario(graph=g, policy=pol, initial_pending={i: frozenset({"a"}) for i in range(5)}, max_ticks=30, seed=seed)
    return run(sc)


def test_accountable_byzantine_sends_one_message_per_slot():
    report, sim = byzantine_run(True, 3)
    slots = {}
    for r in report.trace:
        if not r.get("byzantine"):
            continue
        p = r["payload"]
        if r["kind"] == "validate":
            key = ("v", p["seq"])
        else:
            key = ("p", sim.store.get(p["prior"]).seq, p["round"])
        slots.setdefault(key, []).append((p, r["recipients"]))
    assert slots
    for sent in slots.values():
        assert len(sent) == 1
        assert sent[0][1] == list(sim.graph.listeners(5))


def test_unaccountable_byzantine_equivocates():
    for seed in range(5):
        report, _ = byzantine_run(False, seed)
        targeted = [r for r in report.trace if r.get("byzantine") and r["kind"] == "validate"]
        if len({r["payload"]["ledger"] for r in targeted}) > 1:
            assert all(len(r["recipients"]) == 1 for r in targeted)
            return
    pytest.fail("no equivocation observed")


def test_honest_nodes_never_byzantine_in_trace():
    report, _ = byzantine_run(False, 1)
    assert {r["node"] for r in report.trace if r.get("byzantine")} == {5}
    assert 5 not in report.full_validations


# -- scenario validation ---------------------------------------------------------------


def test_fault_budget_enforced():
    g = shared(5, fault_budget={i: 0 for i in range(5)})
    with pytest.raises(ScenarioError):
        Simulation(Scenario(graph=g, policy=AdversaryPolicy("seeded", byzantine=frozenset({1}))))


def test_contradictory_rules_rejected():
    rules = (
        Rule("drop", kind="proposal", senders=frozenset({1})),
        Rule("delay", delay=3, kind="proposal", recipients=frozenset({2})),
    )
    with pytest.raises(ScenarioError, match="contradictory"):
        Simulation(Scenario(graph=shared(3), policy=AdversaryPolicy("scripted", rules=rules)))


def test_disjoint_rules_accepted():
    rules = (
        Rule("drop", kind="proposal", round=0),
        Rule("delay", delay=3, kind="proposal", round=1),
        Rule("delay", delay=2, kind="validation", sent_from=5, sent_until=9),
    )
    Simulation(Scenario(graph=shared(3), policy=AdversaryPolicy("scripted", rules=rules)))


def test_accountability_rejects_equivocating_script():
    a, b = Validation(b"\x01" * 32, 2, 4), Validation(b"\x02" * 32, 2, 4)
    pol = AdversaryPolicy(
        "scripted", byzantine=frozenset({4}), accountability=True,
        injections=(Injection(1, a), Injection(2, b)),
    )
    with pytest.raises(ScenarioError, match="equivocates"):
        Simulation(Scenario(graph=shared(5), policy=pol))


def test_accountability_rejects_targeted_sends():
    msg = Validation(GENESIS.hash, 1, 4)
    pol = AdversaryPolicy(
        "scripted", byzantine=frozenset({4}), accountability=True,
        injections=(Injection(1, msg, frozenset({0})),),
    )
    with pytest.raises(ScenarioError, match="targeted"):
        Simulation(Scenario(graph=shared(5), policy=pol))


def test_policy_validation():
    with pytest.raises(ScenarioError):
        AdversaryPolicy("chaotic")
    with pytest.raises(ScenarioError):
        AdversaryPolicy(delay=0)
    with pytest.raises(ScenarioError):
        AdversaryPolicy("seeded", rules=(Rule("drop"),))
    with pytest.raises(ScenarioError):
        Rule("swallow")
    assert civil(3).delay == 3


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        Simulation(civil_scenario(ticks=0))
    with pytest.raises(ScenarioError):
        Simulation(dataclasses.replace(civil_scenario(), update_interval=0))
    with pytest.raises(ScenarioError):
        Simulation(dataclasses.replace(civil_scenario(), submissions=((1, 99, "x"),)))
