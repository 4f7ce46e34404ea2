"""Action constraint automata (ACA) and their timed extension (TACA).

Labels are frozensets of :class:`Action`; data constraints are not modelled.
Automata are immutable values and every operation returns a new automaton.
State identifiers are strings; product states are rendered ``(s1,s2)``.
"""

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
import itertools
import json

from .errors import (AlphabetMismatch, AlphabetOverlap, BadSyncMap,
                     InvalidAutomaton, UnknownAction)

FLOW = "flow"
BLOCK = "block"
UNBLOCK = "unblock"
SEND_WRITE = "send_write"
RECV_WRITE = "recv_write"
SEND_READ = "send_read"
RECV_READ = "recv_read"
SEND_MAY_WRITE = "send_may_write"
RECV_MAY_WRITE = "recv_may_write"
SILENT = "silent"

KINDS = (FLOW, BLOCK, UNBLOCK, SEND_WRITE, RECV_WRITE, SEND_READ, RECV_READ,
         SEND_MAY_WRITE, RECV_MAY_WRITE, SILENT)
MESSAGE_KINDS = (SEND_WRITE, RECV_WRITE, SEND_READ, RECV_READ,
                 SEND_MAY_WRITE, RECV_MAY_WRITE)

# "?" sends, "!" receives, as in the handshake figures.
_PREFIX = {
    BLOCK: "b", UNBLOCK: "u",
    SEND_WRITE: "?w", RECV_WRITE: "!w",
    SEND_READ: "?r", RECV_READ: "!r",
    SEND_MAY_WRITE: "?mw", RECV_MAY_WRITE: "!mw",
}
_BY_PREFIX = sorted(((p, k) for k, p in _PREFIX.items()), key=lambda x: -len(x[0]))


@dataclass(frozen=True, order=True)
class Action:
    """An action name: a port paired with an action kind."""

    port: str
    kind: str = FLOW

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")

    def __str__(self):
        if self.kind == FLOW:
            return self.port
        if self.kind == SILENT:
            return "tau"
        return _PREFIX[self.kind] + self.port

    def __repr__(self):
        return f"Action({str(self)!r})"


TAU = Action("", SILENT)


def parse_action(text):
    """Inverse of ``str(Action)``: ``"bA"`` is a block on port ``A``.

    Bare names are flow actions, so a flow port literally starting with ``b``
    must be built with :class:`Action` directly.
    """
    if text == "tau":
        return TAU
    for prefix, kind in _BY_PREFIX:
        if text.startswith(prefix) and len(text) > len(prefix):
            return Action(text[len(prefix):], kind)
    return Action(text, FLOW)


def act(port, kind=FLOW):
    return Action(port, kind)


def label(*items):
    """Build a label from actions or action strings: ``label("bA", "uB")``."""
    out = []
    for it in items:
        out.append(it if isinstance(it, Action) else parse_action(it))
    return frozenset(out)


def flow_label(*ports):
    return frozenset(Action(p) for p in ports)


def format_label(lab):
    return "{" + ",".join(sorted(str(a) for a in lab)) + "}"


def label_key(lab):
    return tuple(sorted(lab))


@dataclass(frozen=True, order=True)
class Transition:
    source: str
    label: frozenset
    target: str

    def sort_key(self):
        return (self.source, label_key(self.label), self.target)


def _pair(s1, s2):
    return f"({s1},{s2})"


@dataclass(frozen=True, eq=True)
class ACA:
    """Action constraint automaton ``(states, alphabet, transitions, initial)``."""

    states: frozenset
    alphabet: frozenset
    transitions: frozenset
    initial: str

    def __post_init__(self):
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "alphabet", frozenset(self.alphabet))
        object.__setattr__(self, "transitions", frozenset(self.transitions))
        if self.initial not in self.states:
            raise InvalidAutomaton(f"initial state {self.initial!r} not among states")
        for t in self.transitions:
            if t.source not in self.states or t.target not in self.states:
                raise InvalidAutomaton(f"transition {t} leaves the state set")
            if not t.label <= self.alphabet:
                extra = format_label(t.label - self.alphabet)
                raise InvalidAutomaton(f"label actions {extra} not in alphabet")

    @classmethod
    def build(cls, transitions, initial, alphabet=None, states=()):
        """Convenience constructor from ``(source, label, target)`` triples."""
        ts = [t if isinstance(t, Transition) else
              Transition(t[0], t[1] if isinstance(t[1], frozenset) else label(*t[1]), t[2])
              for t in transitions]
        st = set(states) | {initial}
        for t in ts:
            st.add(t.source)
            st.add(t.target)
        if alphabet is None:
            alphabet = frozenset().union(*(t.label for t in ts)) if ts else frozenset()
        return cls(frozenset(st), frozenset(alphabet), frozenset(ts), initial)

    @cached_property
    def outgoing(self):
        out = {s: [] for s in self.states}
        for t in sorted(self.transitions, key=Transition.sort_key):
            out[t.source].append(t)
        return out

    def sorted_transitions(self):
        return sorted(self.transitions, key=Transition.sort_key)

    def labels_from(self, state=None):
        state = self.initial if state is None else state
        return {t.label for t in self.outgoing[state]}

    @property
    def base(self):
        return self

    def reachable(self):
        """Restrict to states reachable from the initial state."""
        seen = {self.initial}
        todo = deque([self.initial])
        while todo:
            s = todo.popleft()
            for t in self.outgoing[s]:
                if t.target not in seen:
                    seen.add(t.target)
                    todo.append(t.target)
        ts = frozenset(t for t in self.transitions if t.source in seen)
        return ACA(frozenset(seen), self.alphabet, ts, self.initial)

    def __repr__(self):
        return (f"ACA(states={len(self.states)}, transitions={len(self.transitions)}, "
                f"alphabet={format_label(self.alphabet)})")


# ---------------------------------------------------------------------------
# clocks


RELATIONS = ("<", "<=", ">", ">=", "=")


def is_timeout_constant(name):
    """Timeout constants are named ``T...``; anything else (link delays) is left alone by chi."""
    return name.startswith("T")


@dataclass(frozen=True, order=True)
class ClockConstraint:
    """Atom ``clock relation bound`` where bound is a sum of named constants."""

    clock: str
    relation: str
    bound: tuple

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"bad relation {self.relation!r}")
        object.__setattr__(self, "bound", tuple(sorted(set(self.bound))))

    def __str__(self):
        return f"{self.clock}{self.relation}{'+'.join(self.bound)}"

    def timeout_constants(self):
        return frozenset(c for c in self.bound if is_timeout_constant(c))

    def evaluate(self, value, constants):
        limit = sum(constants[c] for c in self.bound)
        return {"<": value < limit, "<=": value <= limit, ">": value > limit,
                ">=": value >= limit, "=": value == limit}[self.relation]


def cc(clock, relation, *bound):
    return ClockConstraint(clock, relation, tuple(bound))


def format_constraints(ccs):
    return "&".join(str(c) for c in sorted(ccs)) if ccs else "true"


@dataclass(frozen=True, order=True)
class TimedTransition:
    source: str
    label: frozenset
    guard: frozenset = frozenset()
    resets: frozenset = frozenset()
    target: str = ""
    tags: frozenset = frozenset()  # e.g. "spontaneous", "hold"; unions under product

    def sort_key(self):
        return (self.source, label_key(self.label), tuple(sorted(self.guard)),
                tuple(sorted(self.resets)), self.target, tuple(sorted(self.tags)))

    @property
    def is_timeout(self):
        """True when the guard waits for a timeout (``x > T``)."""
        return any(c.relation in (">", ">=") and c.timeout_constants() for c in self.guard)


@dataclass(frozen=True)
class TimedACA:
    """Timed ACA: an ACA whose transitions carry guards and clock resets,
    plus an invariance condition per state (empty set means ``true``)."""

    states: frozenset
    alphabet: frozenset
    transitions: frozenset
    initial: str
    clocks: frozenset = frozenset()
    invariance: tuple = ()  # sorted (state, frozenset[ClockConstraint]) pairs

    def __post_init__(self):
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "alphabet", frozenset(self.alphabet))
        object.__setattr__(self, "transitions", frozenset(self.transitions))
        object.__setattr__(self, "clocks", frozenset(self.clocks))
        inv = dict(self.invariance) if not isinstance(self.invariance, dict) else self.invariance
        inv = {s: frozenset(inv.get(s, ())) for s in self.states}
        object.__setattr__(self, "invariance", tuple(sorted(inv.items())))
        if self.initial not in self.states:
            raise InvalidAutomaton(f"initial state {self.initial!r} not among states")
        for t in self.transitions:
            if t.source not in self.states or t.target not in self.states:
                raise InvalidAutomaton(f"transition {t} leaves the state set")
            if not t.label <= self.alphabet:
                raise InvalidAutomaton(f"label actions {format_label(t.label - self.alphabet)} not in alphabet")
            for c in t.guard:
                if c.clock not in self.clocks:
                    raise InvalidAutomaton(f"guard clock {c.clock!r} undeclared")
            if not t.resets <= self.clocks:
                raise InvalidAutomaton(f"reset clocks {set(t.resets - self.clocks)} undeclared")
        for s, ccs in inv.items():
            for c in ccs:
                if c.clock not in self.clocks:
                    raise InvalidAutomaton(f"invariance clock {c.clock!r} undeclared")

    @cached_property
    def inv(self):
        return dict(self.invariance)

    @cached_property
    def outgoing(self):
        out = {s: [] for s in self.states}
        for t in sorted(self.transitions, key=TimedTransition.sort_key):
            out[t.source].append(t)
        return out

    def sorted_transitions(self):
        return sorted(self.transitions, key=TimedTransition.sort_key)

    @cached_property
    def base(self):
        """Time-abstracted ACA (guards, resets and invariances dropped)."""
        ts = frozenset(Transition(t.source, t.label, t.target) for t in self.transitions)
        return ACA(self.states, self.alphabet, ts, self.initial)

    def guards(self, transition):
        return transition.guard

    def resets(self, transition):
        return transition.resets

    def timeout_constants(self):
        out = set()
        for t in self.transitions:
            for c in t.guard:
                out |= c.timeout_constants()
        for ccs in self.inv.values():
            for c in ccs:
                out |= c.timeout_constants()
        return frozenset(out)

    def constants(self):
        out = set()
        for t in self.transitions:
            for c in t.guard:
                out |= set(c.bound)
        for ccs in self.inv.values():
            for c in ccs:
                out |= set(c.bound)
        return frozenset(out)

    def labels_from(self, state=None):
        state = self.initial if state is None else state
        return {t.label for t in self.outgoing[state]}

    def __repr__(self):
        return (f"TimedACA(states={len(self.states)}, transitions={len(self.transitions)}, "
                f"clocks={sorted(self.clocks)})")


def timed_from_aca(a):
    """View an ACA as a clock-free TACA."""
    ts = frozenset(TimedTransition(t.source, t.label, frozenset(), frozenset(), t.target)
                   for t in a.transitions)
    return TimedACA(a.states, a.alphabet, ts, a.initial)


def _is_timed(a):
    return isinstance(a, TimedACA)


# ---------------------------------------------------------------------------
# product


def _check_sync(a, b, sync):
    overlap = a.alphabet & b.alphabet
    if overlap:
        raise AlphabetOverlap(f"operand alphabets share {format_label(overlap)}")
    left, right = {}, {}
    for fresh, (x, y) in sync.items():
        if fresh in a.alphabet or fresh in b.alphabet:
            raise BadSyncMap(f"shared name {fresh} is not fresh")
        if x not in a.alphabet:
            raise BadSyncMap(f"{x} is not in the left alphabet")
        if y not in b.alphabet:
            raise BadSyncMap(f"{y} is not in the right alphabet")
        if x in left or y in right:
            raise BadSyncMap(f"synchronisation of {fresh} is not injective")
        left[x] = fresh
        right[y] = fresh
    return left, right


def chi(constraints, extra):
    """Widen every timeout bound by the constants ``extra`` (symbolic sum).

    Bounds without a timeout constant (e.g. link delays) are kept as they are.
    """
    if not extra:
        return frozenset(constraints)
    out = set()
    for c in constraints:
        if c.timeout_constants():
            out.add(ClockConstraint(c.clock, c.relation, tuple(set(c.bound) | set(extra))))
        else:
            out.add(c)
    return frozenset(out)


def _split(lab, inv_map):
    key = frozenset(inv_map[x] for x in lab if x in inv_map)
    rest = frozenset(x for x in lab if x not in inv_map)
    return key, rest


def _product(a, b, sync, max_states):
    left, right = _check_sync(a, b, sync)
    timed = _is_timed(a) or _is_timed(b)
    if timed:
        a = a if _is_timed(a) else timed_from_aca(a)
        b = b if _is_timed(b) else timed_from_aca(b)
        clash = a.clocks & b.clocks
        if clash:
            b = rename_clocks(b, {c: c + "'" for c in clash})
        ta, tb = a.timeout_constants(), b.timeout_constants()
        both = ta | tb
        # chi on operand a adds b's constants and vice versa
        extra_a = both if tb else frozenset()
        extra_b = both if ta else frozenset()

    def groups(aut, inv_map, state):
        g = {}
        for t in aut.outgoing[state]:
            key, rest = _split(t.label, inv_map)
            g.setdefault(key, []).append((t, rest))
        return g

    alphabet = (frozenset(x for x in a.alphabet if x not in left)
                | frozenset(sync)
                | frozenset(x for x in b.alphabet if x not in right))
    init = _pair(a.initial, b.initial)
    states = {init: (a.initial, b.initial)}
    todo = deque([init])
    trans = set()
    while todo:
        pid = todo.popleft()
        s1, s2 = states[pid]
        g1, g2 = groups(a, left, s1), groups(b, right, s2)
        new = []
        for t1, rest in g1.get(frozenset(), []):
            new.append((t1.label, t1, None, t1.target, s2))
        for t2, rest in g2.get(frozenset(), []):
            new.append((t2.label, None, t2, s1, t2.target))
        for key in sorted(set(g1) & set(g2), key=label_key):
            for (t1, r1), (t2, r2) in itertools.product(g1[key], g2[key]):
                new.append((r1 | key | r2, t1, t2, t1.target, t2.target))
        for lab, t1, t2, n1, n2 in new:
            tid = _pair(n1, n2)
            if tid not in states:
                states[tid] = (n1, n2)
                todo.append(tid)
                if max_states is not None and len(states) > max_states:
                    from .errors import StateExplosion
                    raise StateExplosion(f"product exceeds {max_states} states")
            if timed:
                guard = frozenset()
                resets = frozenset()
                tags = frozenset()
                if t1 is not None:
                    guard |= chi(t1.guard, extra_a)
                    resets |= t1.resets
                    tags |= t1.tags
                if t2 is not None:
                    guard |= chi(t2.guard, extra_b)
                    resets |= t2.resets
                    tags |= t2.tags
                trans.add(TimedTransition(pid, lab, guard, resets, tid, tags))
            else:
                trans.add(Transition(pid, lab, tid))
    if timed:
        inv = {pid: chi(a.inv[s1], extra_a) | chi(b.inv[s2], extra_b)
               for pid, (s1, s2) in states.items()}
        return TimedACA(frozenset(states), alphabet, frozenset(trans), init,
                        a.clocks | b.clocks, inv)
    return ACA(frozenset(states), alphabet, frozenset(trans), init)


def product_aca(a, b, sync=None, max_states=None):
    """gamma-synchronisation product restricted to reachable state pairs.

    ``sync`` maps each fresh shared action to a pair ``(action of a, action of b)``.
    A transition fires alone only if it touches no synchronised action; two
    transitions fire jointly when their synchronised parts map to the same
    shared names (this includes the case where both touch none).
    """
    return _product(a.base if _is_timed(a) else a, b.base if _is_timed(b) else b,
                    sync or {}, max_states)


def product_taca(a, b, sync=None, max_states=None):
    """Timed version of :func:`product_aca`.

    Invariances and guards are conjoined after chi has replaced each timeout
    bound by the sum of both operands' timeout constants.  Clock names that
    collide are primed on the right operand.
    """
    a = a if _is_timed(a) else timed_from_aca(a)
    b = b if _is_timed(b) else timed_from_aca(b)
    return _product(a, b, sync or {}, max_states)


def natural_sync(a, b, tag=("@1", "@2")):
    """Rename the actions shared by ``a`` and ``b`` apart and return the
    synchronisation map that fuses them back under their original names.

    Returns ``(a', b', sync)`` ready for :func:`product_aca`.
    """
    shared = a.alphabet & b.alphabet
    ra = {x: Action(x.port + tag[0], x.kind) for x in shared}
    rb = {x: Action(x.port + tag[1], x.kind) for x in shared}
    sync = {x: (ra[x], rb[x]) for x in shared}
    return rename(a, ra), rename(b, rb), sync


def join(a, b, max_states=None):
    """Product synchronising on identically named actions (the usual CA join)."""
    a2, b2, sync = natural_sync(a, b)
    if _is_timed(a) or _is_timed(b):
        return product_taca(a2, b2, sync, max_states)
    return product_aca(a2, b2, sync, max_states)


# ---------------------------------------------------------------------------
# hiding and renaming


def _relabel(a, fn, alphabet):
    if _is_timed(a):
        ts = frozenset(TimedTransition(t.source, fn(t.label), t.guard, t.resets, t.target, t.tags)
                       for t in a.transitions)
        return TimedACA(a.states, alphabet, ts, a.initial, a.clocks, a.invariance)
    ts = frozenset(Transition(t.source, fn(t.label), t.target) for t in a.transitions)
    return ACA(a.states, alphabet, ts, a.initial)


def hide(a, k):
    """Remove the actions ``k`` from every label; emptied labels stay as ∅-steps."""
    k = frozenset(k)
    missing = k - a.alphabet
    if missing:
        raise UnknownAction(f"cannot hide {format_label(missing)}: not in alphabet")
    if not k:
        return a
    return _relabel(a, lambda lab: lab - k, a.alphabet - k)


def rename(a, r):
    """Apply the renaming ``r`` (action -> action) to labels and alphabet.

    A value may also be a set of actions, which replaces the action by all of
    them; this is how one fused handshake action is mapped back onto the ports
    of both nodes it joins.
    """
    r = {x: (frozenset(y) if isinstance(y, (set, frozenset, tuple, list)) else frozenset([y]))
         for x, y in r.items()}
    missing = set(r) - a.alphabet
    if missing:
        raise UnknownAction(f"cannot rename {format_label(missing)}: not in alphabet")
    if not r:
        return a

    def fn(lab):
        out = set(x for x in lab if x not in r)
        for x in lab:
            if x in r:
                out |= r[x]
        return frozenset(out)

    alphabet = fn(a.alphabet)
    return _relabel(a, fn, alphabet)


def drop_silent(a):
    """Remove the silent action introduced by renaming to ``TAU``."""
    if TAU not in a.alphabet:
        return a
    return hide(a, {TAU})


def rename_clocks(a, mapping):
    def m(c):
        return mapping.get(c, c)
    ts = frozenset(TimedTransition(t.source, t.label,
                                   frozenset(ClockConstraint(m(g.clock), g.relation, g.bound) for g in t.guard),
                                   frozenset(m(x) for x in t.resets), t.target, t.tags)
                   for t in a.transitions)
    inv = {s: frozenset(ClockConstraint(m(g.clock), g.relation, g.bound) for g in ccs)
           for s, ccs in a.inv.items()}
    return TimedACA(a.states, a.alphabet, ts, a.initial, frozenset(m(c) for c in a.clocks), inv)


def rename_states(a, fn):
    """Apply ``fn`` to every state identifier (used to canonicalise)."""
    if _is_timed(a):
        ts = frozenset(TimedTransition(fn(t.source), t.label, t.guard, t.resets, fn(t.target),
                                       t.tags) for t in a.transitions)
        inv = {fn(s): v for s, v in a.inv.items()}
        return TimedACA(frozenset(fn(s) for s in a.states), a.alphabet, ts, fn(a.initial),
                        a.clocks, inv)
    ts = frozenset(Transition(fn(t.source), t.label, fn(t.target)) for t in a.transitions)
    return ACA(frozenset(fn(s) for s in a.states), a.alphabet, ts, fn(a.initial))


def remove_transitions(a, predicate):
    """Drop transitions matching ``predicate`` (mutation testing helper)."""
    ts = frozenset(t for t in a.transitions if not predicate(t))
    if _is_timed(a):
        return TimedACA(a.states, a.alphabet, ts, a.initial, a.clocks, a.invariance)
    return ACA(a.states, a.alphabet, ts, a.initial)


def isomorphic(a, b):
    """Exact isomorphism test for small automata (labels must match verbatim)."""
    a, b = a.base, b.base
    if a.alphabet != b.alphabet or len(a.states) != len(b.states) \
            or len(a.transitions) != len(b.transitions):
        return False

    def sig(aut):
        out = {s: [] for s in aut.states}
        inn = {s: [] for s in aut.states}
        for t in aut.transitions:
            out[t.source].append(label_key(t.label))
            inn[t.target].append(label_key(t.label))
        return {s: (sorted(out[s]), sorted(inn[s]), s == aut.initial) for s in aut.states}

    sa, sb = sig(a), sig(b)
    edges_b = {(t.source, t.label, t.target) for t in b.transitions}
    order = sorted(a.states, key=lambda s: (s != a.initial, s))
    mapping, used = {}, set()

    def consistent(s):
        for t in a.outgoing[s]:
            if t.target in mapping and (mapping[s], t.label, mapping[t.target]) not in edges_b:
                return False
        for t in a.transitions:
            if t.target == s and t.source in mapping and \
                    (mapping[t.source], t.label, mapping[s]) not in edges_b:
                return False
        return True

    def search(i):
        if i == len(order):
            return True
        s = order[i]
        for cand in sorted(b.states):
            if cand in used or sb[cand] != sa[s]:
                continue
            mapping[s] = cand
            used.add(cand)
            if consistent(s) and search(i + 1):
                return True
            del mapping[s]
            used.discard(cand)
        return False

    return search(0)


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, order=True)
class SymbolicTrace:
    """A finite run reduced to its sequence of labels."""

    steps: tuple
    start: str
    end: str

    def abstracted(self):
        """The ∅-abstracted form: empty labels dropped."""
        return SymbolicTrace(tuple(s for s in self.steps if s), self.start, self.end)

    def __str__(self):
        return "<" + ",".join(format_label(s) for s in self.steps) + ">"


def untimed_traces(a, max_steps=None):
    """Label sequences of length ``1..max_steps`` from the initial state.

    The empty trace is reported only when the initial state has no outgoing
    transition at all.  The default bound is twice the number of states.
    """
    a = a.base
    if max_steps is None:
        max_steps = 2 * len(a.states)
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    out = set()
    seen = set()
    stack = [(a.initial, ())]
    while stack:
        s, steps = stack.pop()
        if (s, steps) in seen:
            continue
        seen.add((s, steps))
        if steps:
            out.add(SymbolicTrace(steps, a.initial, s))
        if len(steps) < max_steps:
            for t in a.outgoing[s]:
                stack.append((t.target, steps + (t.label,)))
    if not out:
        out.add(SymbolicTrace((), a.initial, a.initial))
    return out


# ---------------------------------------------------------------------------
# weak bisimulation


@dataclass
class BisimResult:
    equivalent: bool
    classes: list = field(default_factory=list)
    counterexample: tuple = ()

    def __bool__(self):
        return self.equivalent


def _closure(outgoing, states):
    """Reflexive-transitive closure under ∅-labelled steps."""
    clo = {}
    for s in states:
        seen = {s}
        todo = [s]
        while todo:
            x = todo.pop()
            for lab, y in outgoing[x]:
                if not lab and y not in seen:
                    seen.add(y)
                    todo.append(y)
        clo[s] = seen
    return clo


def _weak_moves(outgoing, states):
    clo = _closure(outgoing, states)
    moves = {}
    for s in states:
        m = {frozenset(): set(clo[s])}
        for x in clo[s]:
            for lab, y in outgoing[x]:
                if lab:
                    m.setdefault(lab, set()).update(clo[y])
        moves[s] = m
    return moves


def weak_bisimilar(a, b):
    """Decide weak bisimilarity of the initial states of ``a`` and ``b``.

    ∅-labelled transitions play the role of silent steps.  The relation is
    computed by partition refinement on the ∅-saturated transition relation.
    The result is truthy when equivalent and then lists the equivalence
    classes (states prefixed ``L:``/``R:``); otherwise it carries a label
    sequence that one side can perform and the other cannot match.
    """
    a, b = a.base, b.base
    if a.alphabet != b.alphabet:
        raise AlphabetMismatch(f"{format_label(a.alphabet ^ b.alphabet)} differ")
    outgoing = {}
    for tag, aut in (("L:", a), ("R:", b)):
        for s in aut.states:
            outgoing[tag + s] = [(t.label, tag + t.target) for t in aut.outgoing[s]]
    states = sorted(outgoing)
    moves = _weak_moves(outgoing, states)
    block = {s: 0 for s in states}
    history = [dict(block)]
    while True:
        sigs = {}
        for s in states:
            sig = frozenset((lab, block[p]) for lab, ps in moves[s].items() for p in ps)
            sigs[s] = (block[s], sig)
        ids = {}
        new = {}
        for s in states:
            new[s] = ids.setdefault(sigs[s], len(ids))
        if len(ids) == len(set(block.values())):
            break
        block = new
        history.append(dict(block))
    la, lb = "L:" + a.initial, "R:" + b.initial
    if block[la] == block[lb]:
        classes = {}
        for s in states:
            classes.setdefault(block[s], set()).add(s)
        return BisimResult(True, sorted((frozenset(c) for c in classes.values()), key=sorted))
    return BisimResult(False, [], _distinguish(moves, history, la, lb))


def _distinguish(moves, history, s, t):
    """Label sequence witnessing that ``s`` and ``t`` are not weakly bisimilar."""
    seq = []
    while True:
        level = next(i for i, h in enumerate(history) if h[s] != h[t])
        if level == 0:
            return tuple(seq)
        prev = history[level - 1]
        found = None
        for x, y in ((s, t), (t, s)):
            for lab in sorted(moves[x], key=label_key):
                for p in sorted(moves[x][lab]):
                    qs = moves[y].get(lab, set())
                    if not any(prev[q] == prev[p] for q in qs):
                        found = (lab, p, sorted(qs))
                        break
                if found:
                    break
            if found:
                break
        lab, p, qs = found
        seq.append(lab)
        if not qs:
            return tuple(seq)
        # continue with the candidate that stays equivalent to p the longest
        q = max(qs, key=lambda q: next((i for i, h in enumerate(history) if h[p] != h[q]),
                                       len(history)))
        if all(h[p] == h[q] for h in history):
            return tuple(seq)
        s, t = p, q


def is_action_refinement(concrete, abstract, k=(), r=None):
    """True iff hiding ``k`` and renaming by ``r`` makes ``concrete`` weakly
    bisimilar to ``abstract``."""
    return bool(refinement_check(concrete, abstract, k, r))


def refinement_check(concrete, abstract, k=(), r=None):
    c = concrete.base
    c = rename(hide(c, k), r or {})
    if c.alphabet != abstract.base.alphabet:
        return BisimResult(False, [], (c.alphabet ^ abstract.base.alphabet,))
    return weak_bisimilar(c, abstract)


# ---------------------------------------------------------------------------
# serialisation


def to_dict(a):
    d = {
        "type": "TimedACA" if _is_timed(a) else "ACA",
        "states": sorted(a.states),
        "initial": a.initial,
        "alphabet": sorted(str(x) for x in a.alphabet),
    }
    if _is_timed(a):
        d["clocks"] = sorted(a.clocks)
        d["transitions"] = [
            {"source": t.source, "label": sorted(str(x) for x in t.label),
             "guard": [[g.clock, g.relation, list(g.bound)] for g in sorted(t.guard)],
             "resets": sorted(t.resets), "target": t.target, "tags": sorted(t.tags)}
            for t in a.sorted_transitions()]
        d["invariance"] = {s: [[g.clock, g.relation, list(g.bound)] for g in sorted(v)]
                           for s, v in a.invariance}
    else:
        d["transitions"] = [
            {"source": t.source, "label": sorted(str(x) for x in t.label), "target": t.target}
            for t in a.sorted_transitions()]
    return d


def from_dict(d):
    lab = lambda xs: frozenset(parse_action(x) for x in xs)  # noqa: E731
    alphabet = lab(d["alphabet"])
    if d.get("type") == "TimedACA":
        ts = [TimedTransition(t["source"], lab(t["label"]),
                              frozenset(cc(g[0], g[1], *g[2]) for g in t["guard"]),
                              frozenset(t["resets"]), t["target"], frozenset(t.get("tags", ())))
              for t in d["transitions"]]
        inv = {s: frozenset(cc(g[0], g[1], *g[2]) for g in v) for s, v in d["invariance"].items()}
        return TimedACA(frozenset(d["states"]), alphabet, frozenset(ts), d["initial"],
                        frozenset(d["clocks"]), inv)
    ts = [Transition(t["source"], lab(t["label"]), t["target"]) for t in d["transitions"]]
    return ACA(frozenset(d["states"]), alphabet, frozenset(ts), d["initial"])


def to_json(a):
    return json.dumps(to_dict(a), indent=2, sort_keys=True)


def from_json(text):
    return from_dict(json.loads(text))


def _dot_id(s):
    return '"' + s.replace('"', '\\"') + '"'


def to_dot(a, name="automaton"):
    """Graphviz rendering with edge labels ``{a,b}/guard/resets``."""
    lines = [f"digraph {_dot_id(name)} {{", "  rankdir=LR;", '  __init [shape=point];']
    inv = a.inv if _is_timed(a) else {}
    for s in sorted(a.states):
        extra = f"\\n{format_constraints(inv[s])}" if inv.get(s) else ""
        lines.append(f"  {_dot_id(s)} [label={_dot_id(s + extra)}];")
    lines.append(f"  __init -> {_dot_id(a.initial)};")
    for t in a.sorted_transitions():
        text = format_label(t.label)
        if _is_timed(a):
            text += "/" + format_constraints(t.guard) + "/" + ",".join(
                f"{x}:=0" for x in sorted(t.resets))
        lines.append(f"  {_dot_id(t.source)} -> {_dot_id(t.target)} [label={_dot_id(text)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
