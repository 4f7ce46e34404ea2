import json
import time

import pytest

from reohandshake import automata as am
from reohandshake import circuit as cir
from reohandshake import handshake as hs
from reohandshake import sim
from reohandshake import verify as v
from reohandshake.automata import ACA, TimedTransition

CIRCUITS = ["chain", "fig2", "replicator", "router", "join"]


def _commit_mutants():
    for kind, variant in v.primitive_cases():
        t = hs.handshake_template(kind, variant=variant)
        for edge, m in v.mutants(t.taca):
            if any(a.kind in (am.BLOCK, am.UNBLOCK) for a in edge.label):
                yield kind, variant, edge, m


@pytest.mark.parametrize("kind,variant", v.primitive_cases())
def test_primitive_refinement(kind, variant):
    rep = v.check_primitive_refinement(kind, variant)
    assert rep.passed and rep.coverage == 1.0


def test_commit_edge_mutants_are_caught():
    results = [v.check_primitive_refinement(k, var, template=m).passed
               for k, var, _, m in _commit_mutants()]
    assert len(results) >= 10
    assert not any(results)


def test_mutant_report_names_a_distinguishing_trace():
    kind, variant, _, m = next(_commit_mutants())
    rep = v.check_primitive_refinement(kind, variant, template=m)
    assert rep.check("weak_bisimilar").detail["distinguishing"] is not None


def test_mutants_remove_one_edge_each():
    t = hs.handshake_template("source")
    ms = list(v.mutants(t.taca))
    assert len(ms) == len(t.taca.transitions)
    for edge, m in ms:
        assert m.transitions == t.taca.transitions - {edge}


@pytest.mark.parametrize("name", CIRCUITS)
def test_symbolic_correct_implementation(name):
    t0 = time.perf_counter()
    rep = v.check_correct_implementation(cir.builtin(name), "symbolic")
    assert time.perf_counter() - t0 < 60
    assert rep.passed, rep.summary()
    assert rep.check("direction1_realized").passed and rep.check("direction2_sound").passed


@pytest.mark.parametrize("name", CIRCUITS)
def test_dynamic_correct_implementation(name):
    t0 = time.perf_counter()
    rep = v.check_correct_implementation(cir.builtin(name), "dynamic")
    assert time.perf_counter() - t0 < 60
    assert rep.passed, rep.summary()


def test_trace_source():
    c = cir.builtin("fig2")
    tr = sim.run_scenario(sim.Scenario(c, [("A", "write", 0), ("C", "read", 0)]))
    rep = v.check_correct_implementation(c, [tr])
    assert rep.check("direction2_sound").passed
    assert not rep.check("direction1_realized").passed
    with pytest.raises(ValueError):
        v.check_correct_implementation(c, "psychic")


def test_chain_block_modes():
    chain = cir.builtin("chain")
    assert v.check_region_refinement(chain, "sync").passed
    assert not v.check_region_refinement(chain, "free").passed
    assert v.check_correct_implementation(chain, "symbolic", block_mode="free").passed


def test_free_replicator_commits_branches_apart():
    """Without shared blocks a replicator may commit with one sink only."""
    rep = v.check_correct_implementation(cir.builtin("replicator"), "symbolic", block_mode="free")
    assert not rep.check("direction2_sound").passed
    assert rep.check("direction1_realized").passed


def test_report_serialisation():
    rep = v.check_correct_implementation(cir.builtin("chain"), "symbolic")
    d = json.loads(rep.to_json())
    assert d["passed"] is True and {c["name"] for c in d["checks"]} == \
        {"direction1_realized", "direction2_sound"}
    assert rep.summary().startswith("chain: PASS")
    with pytest.raises(KeyError):
        rep.check("nothing")


def _t(tags=(), guard=()):
    return TimedTransition("s", frozenset(), frozenset(guard), frozenset(), "s", frozenset(tags))


def test_urgency_classes():
    timeout = [am.cc("x", ">", "T")]
    assert v.step_class([(0, _t())]) == ("urgent", 0)
    assert v.step_class([(0, _t([hs.SPONTANEOUS]))]) == ("spontaneous", 0)
    assert v.step_class([(2, _t(guard=timeout))]) == ("timeout", 2)
    assert v.step_class([(2, _t([hs.HOLD], timeout))]) == ("timeout", v.HOLD_RANK)


def test_prune_urgent():
    steps = [("urgent", 0, "a"), ("timeout", 1, "b"), ("spontaneous", 0, "c")]
    assert [p for _, _, p in v.prune_urgent(steps)] == ["a", "c"]
    steps = [("timeout", 1, "b"), ("timeout", v.HOLD_RANK, "h"), ("timeout", 0, "d")]
    assert [p for _, _, p in v.prune_urgent(steps)] == ["h"]


def test_cycle_unions_on_a_small_graph():
    a = ACA.build([
        ("0", am.label("bX"), "1"), ("1", am.label("bY"), "2"), ("2", am.label("uX", "uY"), "0"),
        ("0", am.label("bZ"), "3"), ("3", am.label("uZ"), "0"),
    ], "0")
    found = v.cycle_unions(a)
    assert set(found) == {frozenset({"X", "Y"}), frozenset({"Z"})}


def test_observable_traces_of_source():
    t = hs.handshake_template("source")
    traces = v.observable_traces(t.taca, 2)
    steps = {tuple(am.format_label(x) for x in tr.steps) for tr in traces}
    assert () in steps
    assert ("{bA_env,bA_out}", "{uA_env,uA_out}") in steps
    with pytest.raises(ValueError):
        v.observable_traces(t.taca, -1)


def test_explore_network_modes():
    net = hs.build_network(cir.builtin("chain"))
    g = v.explore_network(net)
    assert g.block_mode == "sync" and g.aca.initial == "g0"
    assert len(v.explore_network(net, urgency=False).aca.states) >= len(g.aca.states)
    with pytest.raises(ValueError):
        v.explore_network(net, "loose")
    node = g.node_aca()
    assert {a.port for a in node.alphabet} == {"A", "B"}
