import itertools

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from reohandshake import automata as am
from reohandshake.automata import (ACA, Action, TimedACA, TimedTransition, Transition, cc,
                                   flow_label)
from reohandshake.errors import (AlphabetMismatch, AlphabetOverlap, BadSyncMap,
                                 InvalidAutomaton, UnknownAction)
from reohandshake.handshake import handshake_template
from reohandshake.semantics import primitive_ca

PROPERTY = settings(max_examples=250, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow])


def sync_ca(a, b):
    return ACA.build([("s0", flow_label(a, b), "s0")], "s0")


# ---------------------------------------------------------------------------
# generators: at most 4 states and 3 actions


@st.composite
def automata(draw, prefix="a", n_actions=None, alphabet=None):
    if alphabet is None:
        k = n_actions or draw(st.integers(1, 3))
        alphabet = [Action(f"{prefix}{i}") for i in range(k)]
    alphabet = sorted(alphabet)
    n = draw(st.integers(1, 4))
    states = [f"s{i}" for i in range(n)]
    labels = [frozenset(c) for r in range(len(alphabet) + 1)
              for c in itertools.combinations(alphabet, r)]
    edges = draw(st.lists(st.tuples(st.sampled_from(states), st.sampled_from(labels),
                                    st.sampled_from(states)), max_size=8))
    ts = frozenset(Transition(s, lab, t) for s, lab, t in edges)
    return ACA(frozenset(states), frozenset(alphabet), ts, "s0")


def _maps_to_fresh(draw, domain, pool, injective):
    if injective:
        targets = draw(st.permutations(pool))[:len(domain)]
        return dict(zip(domain, targets))
    return {x: draw(st.sampled_from(pool)) for x in domain}


# ---------------------------------------------------------------------------
# independent oracle for the synchronisation product


def brute_product(a, b, sync):
    """All state pairs, every independent and joint rule application, then
    restricted to the part reachable from the initial pair."""
    g1 = {x: n for n, (x, _) in sync.items()}
    g2 = {y: n for n, (_, y) in sync.items()}
    edges = set()
    for s1, s2 in itertools.product(sorted(a.states), sorted(b.states)):
        for t in a.transitions:
            if t.source == s1 and not (t.label & set(g1)):
                edges.add(((s1, s2), t.label, (t.target, s2)))
        for t in b.transitions:
            if t.source == s2 and not (t.label & set(g2)):
                edges.add(((s1, s2), t.label, (s1, t.target)))
        for t1 in a.transitions:
            for t2 in b.transitions:
                if t1.source != s1 or t2.source != s2:
                    continue
                k1 = {g1[x] for x in t1.label if x in g1}
                k2 = {g2[y] for y in t2.label if y in g2}
                if k1 != k2:
                    continue
                lab = frozenset(x for x in t1.label if x not in g1) | frozenset(k1) \
                    | frozenset(y for y in t2.label if y not in g2)
                edges.add(((s1, s2), lab, (t1.target, t2.target)))
    init = (a.initial, b.initial)
    seen, todo = {init}, [init]
    while todo:
        s = todo.pop()
        for src, _, dst in edges:
            if src == s and dst not in seen:
                seen.add(dst)
                todo.append(dst)
    name = lambda p: f"({p[0]},{p[1]})"  # noqa: E731
    ts = {Transition(name(s), lab, name(d)) for s, lab, d in edges if s in seen}
    alphabet = (a.alphabet - set(g1)) | frozenset(sync) | (b.alphabet - set(g2))
    return ACA(frozenset(name(s) for s in seen), alphabet, frozenset(ts), name(init))


@st.composite
def sync_pairs(draw):
    a = draw(automata("a"))
    b = draw(automata("b"))
    xs = sorted(a.alphabet)
    ys = draw(st.permutations(sorted(b.alphabet)))
    k = draw(st.integers(0, min(len(xs), len(ys))))
    chosen = draw(st.permutations(xs))[:k]
    sync = {Action(f"n{i}"): (x, ys[i]) for i, x in enumerate(chosen)}
    return a, b, sync


@PROPERTY
@given(sync_pairs())
def test_product_matches_brute_force_oracle(case):
    a, b, sync = case
    assert am.product_aca(a, b, sync) == brute_product(a, b, sync)


# ---------------------------------------------------------------------------
# commutativity of renaming and hiding


@st.composite
def hide_rename_case(draw, general=False):
    a = draw(automata("a"))
    actions = sorted(a.alphabet)
    k = set(draw(st.lists(st.sampled_from(actions), unique=True)))
    pool = [Action(f"z{i}") for i in range(3)]
    if general:
        h = draw(st.lists(st.sampled_from(actions), unique=True))
        r = _maps_to_fresh(draw, h, pool, injective=True)
    else:
        h = draw(st.lists(st.sampled_from([x for x in actions if x not in k] or actions),
                          unique=True))
        h = [x for x in h if x not in k]
        r = _maps_to_fresh(draw, h, pool, injective=draw(st.booleans()))
    return a, k, r


@PROPERTY
@given(hide_rename_case())
def test_renaming_commutes_with_disjoint_hiding(case):
    a, k, r = case
    left = am.rename(am.hide(a, k), r)
    right = am.hide(am.rename(a, r), k)
    assert am.isomorphic(left, right)
    assert left == right


@PROPERTY
@given(hide_rename_case(general=True))
def test_renaming_commutes_with_hiding_general_form(case):
    a, k, r = case
    h = set(r)
    left = am.rename(am.hide(a, k), {x: y for x, y in r.items() if x not in k})
    right = am.hide(am.rename(a, r), (k - h) | {r[x] for x in k & h})
    assert am.isomorphic(left, right)


# ---------------------------------------------------------------------------
# compositionality of renaming


@st.composite
def renaming_product_case(draw):
    a1, a2, gamma = draw(sync_pairs())
    synced1 = {x for x, _ in gamma.values()}
    synced2 = {y for _, y in gamma.values()}
    pool1 = [Action(f"p{i}") for i in range(3)]
    pool2 = [Action(f"q{i}") for i in range(3)]
    free1 = [x for x in sorted(a1.alphabet) if x not in synced1]
    free2 = [y for y in sorted(a2.alphabet) if y not in synced2]
    h1 = draw(st.lists(st.sampled_from(free1), unique=True)) if free1 else []
    h2 = draw(st.lists(st.sampled_from(free2), unique=True)) if free2 else []
    # synchronised names are renamed on both sides or on neither
    both = [n for n in sorted(gamma) if draw(st.booleans())]
    r1 = _maps_to_fresh(draw, h1 + [gamma[n][0] for n in both], pool1, injective=True)
    r2 = _maps_to_fresh(draw, h2 + [gamma[n][1] for n in both], pool2, injective=True)
    r = {x: r1[x] for x in h1}
    r.update({y: r2[y] for y in h2})
    omega = {}
    for n in sorted(gamma):
        x, y = gamma[n]
        if n in both:
            m = Action(f"m{n.port}")
            r[n] = m
            omega[m] = (r1[x], r2[y])
        else:
            omega[n] = (x, y)
    return a1, a2, gamma, r1, r2, r, omega


@PROPERTY
@given(renaming_product_case())
def test_renaming_is_compositional(case):
    a1, a2, gamma, r1, r2, r, omega = case
    left = am.rename(am.product_aca(a1, a2, gamma), r)
    right = am.product_aca(am.rename(a1, r1), am.rename(a2, r2), omega)
    assert am.isomorphic(left, right)


def test_property_suites_use_at_least_200_instances():
    assert PROPERTY.max_examples >= 200


# ---------------------------------------------------------------------------
# weak bisimulation laws


@st.composite
def bisimilar_variant(draw, a):
    """Copy of ``a`` with silent noise: ∅ self-loops, clones of states that
    take over some incoming edges, and ∅ steps into a clone."""
    ts = set(a.transitions)
    states = set(a.states)
    for s in sorted(a.states):
        if draw(st.booleans()):
            ts.add(Transition(s, frozenset(), s))
    for s in sorted(a.states):
        if not draw(st.booleans()):
            continue
        c = f"{s}'"
        states.add(c)
        for t in list(ts):
            if t.source == s:
                ts.add(Transition(c, t.label, c if t.target == s else t.target))
        for t in sorted(ts, key=Transition.sort_key):
            if t.target == s and t.source != c and draw(st.booleans()):
                ts.discard(t)
                ts.add(Transition(t.source, t.label, c))
        if draw(st.booleans()):
            ts.add(Transition(s, frozenset(), c))
    return ACA(frozenset(states), a.alphabet, frozenset(ts), a.initial)


FIXED = [Action("x"), Action("y")]


@st.composite
def triples(draw):
    a = draw(automata(alphabet=FIXED))
    if draw(st.booleans()):
        b = draw(bisimilar_variant(a))
        c = draw(bisimilar_variant(b)) if draw(st.booleans()) else draw(automata(alphabet=FIXED))
    else:
        b = draw(automata(alphabet=FIXED))
        c = draw(automata(alphabet=FIXED))
    return a, b, c


@PROPERTY
@given(triples())
def test_weak_bisimulation_is_an_equivalence(t):
    a, b, c = t
    assert am.weak_bisimilar(a, a)
    ab, ba = bool(am.weak_bisimilar(a, b)), bool(am.weak_bisimilar(b, a))
    assert ab == ba
    if ab and am.weak_bisimilar(b, c):
        assert am.weak_bisimilar(a, c)


@PROPERTY
@given(st.data())
def test_silent_variant_is_bisimilar(data):
    a = data.draw(automata(alphabet=FIXED))
    b = data.draw(bisimilar_variant(a))
    assert am.weak_bisimilar(a, b)


@PROPERTY
@given(automata("a", n_actions=3), st.data())
def test_hiding_twice_is_hiding_the_union(a, data):
    acts = sorted(a.alphabet)
    k1 = set(data.draw(st.lists(st.sampled_from(acts), unique=True)))
    k2 = set(data.draw(st.lists(st.sampled_from([x for x in acts if x not in k1] or acts),
                                unique=True))) - k1
    assert am.hide(am.hide(a, k1), k2) == am.hide(a, k1 | k2)


# ---------------------------------------------------------------------------
# documented examples


def test_sync_product_fuses_shared_name():
    a = sync_ca("A", "B")
    b = sync_ca("B'", "C")
    star = Action("B*")
    p = am.product_aca(a, b, {star: (Action("B"), Action("B'"))})
    assert len(p.states) == 1
    assert [t.label for t in p.transitions] == [frozenset({Action("A"), star, Action("C")})]


def test_product_with_unit_is_identity():
    a = ACA.build([("s0", flow_label("A"), "s1"), ("s1", flow_label("B"), "s0")], "s0")
    unit = ACA(frozenset(["u"]), frozenset(), frozenset(), "u")
    assert am.isomorphic(am.product_aca(a, unit, {}), a)


def test_merge_fragment_from_syncs_and_merge():
    merge = primitive_ca("merge", (["C1", "C2"], ["C"]))
    ca = am.join(am.join(sync_ca("A", "C1"), sync_ca("B", "C2")), merge)
    ca = am.hide(ca, {Action("C1"), Action("C2")})
    labels = sorted(sorted(x.port for x in t.label) for t in ca.transitions)
    assert len(ca.states) == 1
    assert labels == [["A", "C"], ["B", "C"]]


def test_product_errors():
    a = sync_ca("A", "B")
    with pytest.raises(AlphabetOverlap):
        am.product_aca(a, sync_ca("B", "C"), {})
    b = sync_ca("C", "D")
    with pytest.raises(BadSyncMap):
        am.product_aca(a, b, {Action("N"): (Action("X"), Action("C"))})
    with pytest.raises(BadSyncMap):
        am.product_aca(a, b, {Action("N"): (Action("A"), Action("C")),
                              Action("M"): (Action("A"), Action("D"))})
    with pytest.raises(BadSyncMap):
        am.product_aca(a, b, {Action("A"): (Action("A"), Action("C"))})


def _timed(name, clock, const):
    t = TimedTransition("s0", flow_label(name), frozenset([cc(clock, ">", const)]),
                        frozenset([clock]), "s0")
    return TimedACA(frozenset(["s0"]), flow_label(name), frozenset([t]), "s0",
                    frozenset([clock]), {"s0": frozenset([cc(clock, "<=", const)])})


def test_chi_sums_timeout_constants_in_invariance_and_guards():
    a, b = _timed("A", "x", "T1"), _timed("B", "y", "T2")
    p = am.product_taca(a, b, {})
    inv = p.inv[p.initial]
    assert inv == frozenset([cc("x", "<=", "T1", "T2"), cc("y", "<=", "T1", "T2")])
    joint = am.product_taca(am.rename(a, {Action("A"): Action("A1")}),
                            am.rename(b, {Action("B"): Action("B1")}),
                            {Action("N"): (Action("A1"), Action("B1"))})
    (t,) = joint.transitions
    assert t.guard == frozenset([cc("x", ">", "T1", "T2"), cc("y", ">", "T1", "T2")])
    assert t.resets == frozenset(["x", "y"])


def test_chi_is_identity_against_clock_free_operand():
    a = _timed("A", "x", "T1")
    unit = am.timed_from_aca(ACA(frozenset(["u"]), frozenset(), frozenset(), "u"))
    p = am.product_taca(a, unit, {})
    assert am.isomorphic(p, a)
    assert p.inv[p.initial] == a.inv["s0"]
    # an already summed bound stays as it is
    twice = am.product_taca(p, unit, {})
    assert twice.inv[twice.initial] == p.inv[p.initial]


def test_colliding_clocks_are_renamed():
    p = am.product_taca(_timed("A", "x", "T1"), _timed("B", "x", "T2"), {})
    assert p.clocks == frozenset(["x", "x'"])


def test_hide_examples():
    a = sync_ca("A", "B")
    (t,) = am.hide(a, {Action("B")}).transitions
    assert t.label == flow_label("A")
    assert am.hide(a, set()) == a
    with pytest.raises(UnknownAction):
        am.hide(a, {Action("Z")})


def test_hiding_source_messages_leaves_block_and_unblock():
    t = handshake_template("source")
    h = am.hide(t.taca, t.message_actions)
    labels = {am.format_label(x.label) for x in h.transitions if x.label}
    assert labels == {"{bA_env,bA_out}", "{uA_env,uA_out}"}


def test_rename_examples():
    a = sync_ca("A", "B")
    assert am.rename(a, {}) == a
    assert am.rename(a, {Action("A"): Action("A")}) == a
    silent = am.drop_silent(am.rename(a, {Action("B"): am.TAU}))
    assert silent == am.hide(a, {Action("B")})
    with pytest.raises(UnknownAction):
        am.rename(a, {Action("Z"): Action("Y")})


def test_untimed_trace_examples():
    traces = {str(t) for t in am.untimed_traces(sync_ca("A", "B"), 2)}
    assert traces == {"<{A,B}>", "<{A,B},{A,B}>"}
    empty = ACA(frozenset(["s"]), frozenset(), frozenset(), "s")
    assert {str(t) for t in am.untimed_traces(empty, 3)} == {"<>"}
    fifo = primitive_ca("fifo", ("A", "B"))
    assert {str(t) for t in am.untimed_traces(fifo, 2)} == {"<{A}>", "<{A},{B}>"}
    with pytest.raises(ValueError):
        am.untimed_traces(fifo, 0)


def test_abstracted_trace_drops_empty_steps():
    tr = am.SymbolicTrace((flow_label("A"), frozenset(), flow_label("B")), "s", "t")
    assert str(tr.abstracted()) == "<{A},{B}>"


def test_weak_bisimulation_examples():
    a = ACA.build([("s0", flow_label("A"), "s1"), ("s1", flow_label("B"), "s0")], "s0")
    assert am.weak_bisimilar(a, a)
    loop = ACA(a.states, a.alphabet, a.transitions | {Transition("s0", frozenset(), "s0")}, "s0")
    assert am.weak_bisimilar(a, loop)
    other = ACA.build([("s0", flow_label("B"), "s1"), ("s1", flow_label("A"), "s0")], "s0")
    res = am.weak_bisimilar(a, other)
    assert not res and res.counterexample
    with pytest.raises(AlphabetMismatch):
        am.weak_bisimilar(a, sync_ca("A", "C"))


def test_source_template_refines_two_state_blocking_automaton():
    t = handshake_template("source")
    pb = t.pb_aca
    assert len(pb.states) == 2
    assert am.is_action_refinement(t.taca, pb, t.message_actions)


def test_refinement_examples():
    a = sync_ca("A", "B")
    assert am.is_action_refinement(a, a)
    src = handshake_template("source")
    merge = handshake_template("merge")
    res = am.refinement_check(src.taca, merge.pb_aca, src.message_actions)
    assert not res and res.counterexample


def test_invalid_automata_are_rejected():
    with pytest.raises(InvalidAutomaton):
        ACA(frozenset(["a"]), frozenset(), frozenset(), "b")
    with pytest.raises(InvalidAutomaton):
        ACA(frozenset(["a"]), frozenset(), frozenset([Transition("a", flow_label("X"), "a")]), "a")
    with pytest.raises(InvalidAutomaton):
        TimedACA(frozenset(["a"]), frozenset(), frozenset(), "a", frozenset(),
                 {"a": frozenset([cc("x", "<", "T")])})


def test_action_text_round_trip():
    for text in ("bA", "uA", "?wA", "!wA", "?rA", "!rA", "?mwA", "!mwA", "A", "tau"):
        assert str(am.parse_action(text)) == text


def test_json_round_trip_untimed_and_timed():
    a = primitive_ca("fifo", ("A", "B"))
    assert am.from_json(am.to_json(a)) == a
    t = handshake_template("merge").taca
    back = am.from_json(am.to_json(t))
    assert back.transitions == t.transitions and back.inv == t.inv


def test_dot_export_is_deterministic_and_labelled():
    t = handshake_template("source").taca
    dot = am.to_dot(t, "source")
    assert dot == am.to_dot(t, "source")
    assert dot.startswith('digraph "source"')
    assert "{bA_env,bA_out}" in dot
