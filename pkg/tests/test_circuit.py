import json

import pytest

from reohandshake import automata as am
from reohandshake import circuit as cir
from reohandshake.automata import Action
from reohandshake.errors import ArityError, DanglingPort, RegionTooLarge, ReoSyntaxError
from reohandshake.semantics import circuit_reference_semantics, primitive_ca


def test_smallest_circuit():
    c = cir.parse_circuit("node A source; node B sink; sync A.out1 -> B.in1 delay 5;")
    assert len(c.nodes) == 2 and len(c.channels) == 1
    (ch,) = c.channels
    assert ch.delay == 5 and ch.kind == "sync"
    assert c.boundary == {"source": ["A"], "sink": ["B"], "internal": []}


def test_default_delay_is_one():
    c = cir.parse_circuit("node A source; node B sink; sync A.out1 -> B.in1;")
    assert c.channels[0].delay == 1


def test_fig2_merge_in_degree():
    c = cir.builtin("fig2")
    assert c.node("C").kind == "merge" and c.node("C").n_in == 2


def test_fig1_nodes_and_kinds():
    c = cir.builtin("fig1")
    kinds = {n.id: n.kind for n in c.nodes}
    assert len(kinds) == 15
    assert kinds["L"] == "route" and kinds["P"] == "join" and kinds["R"] == "merge"
    assert c.boundary["source"] == ["A", "D", "K", "O"]
    assert c.boundary["sink"] == ["C", "G", "N", "S"]
    assert {ch.kind for ch in c.channels} == {"sync", "sync_drain", "async_drain", "filter",
                                              "transform", "lossy_sync_ctx"}


@pytest.mark.parametrize("text,line,col", [
    ("node A source\nnode B sink;", 2, 1),
    ("node A source; node B sink; sync A.out1 => B.in1;", 1, 41),
    ("node A blob;", 1, 8),
    ("node A source; node A sink;", 1, 21),
    ("node A source; node B sink; teleport A.out1 -> B.in1;", 1, 29),
])
def test_syntax_errors_carry_positions(text, line, col):
    with pytest.raises(ReoSyntaxError) as e:
        cir.parse_circuit(text)
    assert (e.value.line, e.value.column) == (line, col)


def test_arity_and_dangling_errors():
    with pytest.raises(ArityError):
        cir.parse_circuit("node A source; node B merge; node C sink;"
                          "sync A.out1 -> B.in1; sync B.out1 -> C.in1;")
    with pytest.raises(DanglingPort):
        cir.parse_circuit("node A source; node B sink; sync A.out1 -> Z.in1;")
    with pytest.raises((ArityError, DanglingPort)):
        cir.parse_circuit("node A source; node B sink; node C sink;"
                          "sync A.out1 -> B.in1; sync A.out1 -> C.in1;")


@pytest.mark.parametrize("name", cir.builtin_names())
def test_print_parse_round_trip(name):
    c = cir.builtin(name)
    again = cir.parse_circuit(cir.print_circuit(c), c.name)
    assert again == c


@pytest.mark.parametrize("name", cir.builtin_names())
def test_json_round_trip(name):
    c = cir.builtin(name)
    assert cir.from_json(cir.to_json(c)) == c
    json.loads(cir.to_json(c))


def test_dot_export_is_stable():
    c = cir.builtin("fig1")
    dot = cir.to_dot(c)
    assert dot == cir.to_dot(cir.builtin("fig1"))
    assert dot.startswith('graph "fig1"') and "arrowhead=inv" in dot


def test_desugar_sync_drain_into_hidden_join():
    c = cir.parse_circuit("node A source; node B source; sync_drain A.out1 -> B.out1;")
    d = cir.desugar(c)
    aux = [n for n in d.nodes if n.hidden]
    assert [n.kind for n in aux] == ["join"]
    assert sorted(ch.kind for ch in d.channels) == ["sync", "sync"]


def test_desugar_leaves_plain_circuits_alone():
    c = cir.builtin("chain")
    assert cir.desugar(c) == c


@pytest.mark.parametrize("name", cir.builtin_names())
def test_desugar_is_idempotent(name):
    d = cir.desugar(cir.builtin(name))
    assert cir.desugar(d) == d


def _fragment_equivalent(kind):
    text = f"node O source; node P sink; {kind} O.out1 -> P.in1;"
    if kind in ("sync_drain", "async_drain"):
        text = f"node O source; node P source; {kind} O.out1 -> P.out1;"
    c = cir.parse_circuit(text)
    ref = circuit_reference_semantics(c, hide_internal=False).ca
    direct = primitive_ca(kind, ("O", "P"))
    assert am.weak_bisimilar(ref, direct)


@pytest.mark.parametrize("kind", ["sync_drain", "async_drain", "lossy_sync_nd", "filter"])
def test_desugaring_preserves_semantics(kind):
    _fragment_equivalent(kind)


def test_lossy_nd_desugars_to_router_and_hidden_sink():
    c = cir.parse_circuit("node O source; node P sink; lossy_sync_nd O.out1 -> P.in1;")
    d = cir.desugar(c)
    hidden = sorted(n.kind for n in d.nodes if n.hidden)
    assert hidden == ["route", "sink"]


def test_lossy_ctx_is_kept():
    c = cir.parse_circuit("node O source; node P sink; lossy_sync_ctx O.out1 -> P.in1;")
    assert cir.desugar(c).channels[0].kind == "lossy_sync_ctx"


def test_regions():
    assert len(cir.synchronous_regions(cir.builtin("fig1"))) == 1
    two = cir.synchronous_regions(cir.builtin("buffered"))
    assert [sorted(n.id for n in r.nodes) for r in two] == [["A", "B"], ["C", "D"]]
    three = cir.parse_circuit("node A source; node B mixed; node C sink;"
                              "fifo A.out1 -> B.in1; fifo B.out1 -> C.in1;")
    regions = cir.synchronous_regions(three)
    assert len(regions) == 3
    ids = sorted(n.id for r in regions for n in r.nodes)
    assert ids == ["A", "B", "C"]


def test_regions_partition_nodes():
    for name in cir.builtin_names():
        c = cir.builtin(name)
        ids = [n.id for r in cir.synchronous_regions(c) for n in r.nodes]
        assert sorted(ids) == sorted(c.node_ids)


def test_longest_path():
    one = cir.parse_circuit("node A source; node B sink; sync A.out1 -> B.in1 delay 3;")
    assert cir.longest_path(one) == cir.PathLength(1, 3)
    assert cir.longest_path(cir.builtin("fig2")).hops == 2
    # golden value of an exhaustive search over the fig1 region
    assert cir.longest_path(cir.builtin("fig1")) == cir.PathLength(8, 8)


def test_longest_path_refuses_large_regions():
    nodes = " ".join(f"node N{i} mixed;" for i in range(1, 30))
    chans = " ".join(f"sync N{i}.out1 -> N{i + 1}.in1;" for i in range(1, 29))
    text = f"node S source; node E sink; {nodes} sync S.out1 -> N1.in1; {chans} sync N29.out1 -> E.in1;"
    with pytest.raises(RegionTooLarge):
        cir.longest_path(cir.parse_circuit(text))


def test_with_delays():
    c = cir.with_delays(cir.builtin("fig2"), 4)
    assert {ch.delay for ch in c.channels} == {4}
    assert cir.longest_path(c).delay == 8


def test_action_names_of_ports():
    c = cir.builtin("chain")
    assert Action("A_out1") != Action("A_out1", am.BLOCK)
    assert set(c.port_owner().values()) == {"A", "B"}
