import itertools
import time

import pytest

from reohandshake import automata as am
from reohandshake import circuit as cir
from reohandshake import semantics as sem
from reohandshake.automata import ACA, Action, flow_label
from reohandshake.errors import ArityError

FIG1_SETS = {
    "O", "K", "K,O", "K,O,S", "K,N,S", "A,C,D,G", "K,N,O,S", "A,C,D,G,K", "A,C,D,G,O",
    "A,C,D,G,K,O", "A,C,D,G,K,O,S",
}


def _sets(ca):
    return {",".join(sorted(a.port for a in t.label)) for t in ca.outgoing[ca.initial] if t.label}


@pytest.mark.parametrize("kind,ports,labels", [
    ("sync", ("A", "B"), [("A", "B")]),
    ("lossy_sync_nd", ("A", "B"), [("A",), ("A", "B")]),
    ("sync_drain", ("A", "B"), [("A", "B")]),
    ("async_drain", ("A", "B"), [("A",), ("B",)]),
    ("merge", (["A", "B"], ["C"]), [("A", "C"), ("B", "C")]),
    ("replicate", (["A"], ["B", "C"]), [("A", "B", "C")]),
    ("route", (["A"], ["B", "C"]), [("A", "B"), ("A", "C")]),
    ("join", (["A", "B"], ["C"]), [("A", "B", "C")]),
])
def test_primitive_cas(kind, ports, labels):
    s = sem.primitive_semantics(kind, ports)
    assert len(s.ca.states) == 1
    assert s.labels() == sorted(labels)


def test_fifo_ca():
    ca = sem.primitive_ca("fifo", ("A", "B"))
    assert len(ca.states) == 2
    (t1,) = ca.outgoing["s0"]
    (t2,) = ca.outgoing[t1.target]
    assert t1.label == flow_label("A") and t2.label == flow_label("B") and t2.target == "s0"


def test_arity_errors():
    with pytest.raises(ArityError):
        sem.primitive_ca("sync", ("A",))
    with pytest.raises(ArityError):
        sem.primitive_ca("merge", (["A"], ["B", "C"]))
    with pytest.raises(ArityError):
        sem.primitive_ca("teleport", ("A", "B"))


def test_lift_sync():
    pb = sem.lift_port_blocking(sem.primitive_ca("sync", ("A", "B")))
    assert len(pb.states) == 2
    labels = sorted(am.format_label(t.label) for t in pb.transitions)
    assert labels == ["{bA,bB}", "{uA,uB}"]


def test_lift_merge_is_fig2c():
    pb = sem.lift_port_blocking(sem.primitive_ca("merge", (["A", "B"], ["C"])))
    expected = ACA.build([
        ("q", am.label("bA", "bC"), "w1"), ("w1", am.label("uA", "uC"), "q"),
        ("q", am.label("bB", "bC"), "w2"), ("w2", am.label("uB", "uC"), "q"),
    ], "q")
    assert am.isomorphic(pb, expected)


def test_lift_empty_is_unchanged():
    empty = ACA(frozenset(["s"]), frozenset(), frozenset(), "s")
    assert sem.lift_port_blocking(empty) == empty


@pytest.mark.parametrize("kind", ["sync", "fifo", "async_drain", "lossy_sync_nd"])
def test_unlift_inverts_lift(kind):
    ca = sem.primitive_ca(kind, ("A", "B"))
    assert sem.unlift(sem.lift_port_blocking(ca)) == ca


def test_two_syncs_compose_and_hide():
    c = cir.parse_circuit("node A source; node B mixed; node C sink;"
                          "sync A.out1 -> B.in1; sync B.out1 -> C.in1;")
    full = sem.circuit_reference_semantics(c, hide_internal=False).ca
    assert _sets(full) == {"A,B,C"}
    assert _sets(sem.circuit_reference_semantics(c).ca) == {"A,C"}


def test_fig2_reference():
    s = sem.circuit_reference_semantics(cir.builtin("fig2"))
    assert _sets(s.ca) == {"A,C", "B,C"}


def test_fig1_reference_sets():
    s = sem.circuit_reference_semantics(cir.builtin("fig1"))
    assert _sets(s.ca) == FIG1_SETS
    blocks = {",".join(sorted(a.port for a in t.label))
              for t in s.pb_aca.outgoing[s.pb_aca.initial]}
    assert blocks == FIG1_SETS
    assert all(a.kind == am.BLOCK for t in s.pb_aca.outgoing[s.pb_aca.initial] for a in t.label)


@pytest.mark.parametrize("name", cir.builtin_names())
def test_block_sets_equal_enabled_labels(name):
    c = cir.builtin(name)
    for region in cir.synchronous_regions(c):
        s = sem.circuit_reference_semantics(region)
        pb = s.pb_aca
        assert {frozenset(a.port for a in t.label) for t in pb.outgoing[pb.initial] if t.label} \
            == {frozenset(a.port for a in t.label) for t in s.ca.outgoing[s.ca.initial] if t.label}


def test_product_is_associative_on_primitive_triples():
    prims = [sem.primitive_ca("sync", ("A", "B")), sem.primitive_ca("fifo", ("B", "C")),
             sem.primitive_ca("lossy_sync_nd", ("C", "D")),
             sem.primitive_ca("merge", (["A", "D"], ["E"])),
             sem.primitive_ca("route", (["C"], ["D", "F"]))]
    for x, y, z in itertools.permutations(prims, 3):
        left = am.join(am.join(x, y), z)
        right = am.join(x, am.join(y, z))
        assert am.weak_bisimilar(sem.canonical(left), sem.canonical(right))
        assert len(left.states) == len(right.states)


def test_hiding_everything_leaves_only_empty_steps():
    ca = sem.circuit_reference_semantics(cir.builtin("fig2"), hide_internal=False).ca
    h = am.hide(ca, ca.alphabet)
    assert all(not s.abstracted().steps for s in am.untimed_traces(h, 4))


def test_canonical_is_deterministic():
    c = cir.builtin("fig1")
    a = sem.circuit_reference_semantics(c).pb_aca
    b = sem.circuit_reference_semantics(c).pb_aca
    assert am.to_json(a) == am.to_json(b)
    assert a.initial == "q0"


def test_fig1_runtime_bound():
    t0 = time.perf_counter()
    sem.circuit_reference_semantics(cir.builtin("fig1"))
    assert time.perf_counter() - t0 < 10


def test_port_blocking_helper():
    pb = sem.port_blocking_aca([("A", "C"), ("B", "C")])
    assert {am.format_label(t.label) for t in pb.transitions} == \
        {"{bA,bC}", "{uA,uC}", "{bB,bC}", "{uB,uC}"}
    assert Action("A", am.BLOCK) in pb.alphabet
