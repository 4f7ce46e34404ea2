"""Reference semantics: constraint automata of primitives and whole circuits.

Port names inside a circuit follow :mod:`reohandshake.circuit`; the final
circuit automaton speaks about node names only.
"""

from collections import deque
from dataclasses import dataclass

from . import automata as am
from .automata import ACA, Action, Transition, flow_label
from .circuit import desugar
from .errors import ArityError

CHANNEL_CA_KINDS = ("sync", "transform", "filter", "lossy_sync_ctx", "lossy_sync_nd", "fifo",
                    "sync_drain", "async_drain")
NODE_CA_KINDS = ("mixed", "source", "sink", "merge", "replicate", "route", "join")


@dataclass(frozen=True)
class PrimitiveSemantics:
    """A CA over flow actions together with its port-blocking lift."""

    kind: str
    ca: ACA
    pb_aca: ACA

    def labels(self):
        """Non-empty port sets enabled in the initial state, as sorted tuples."""
        return sorted(tuple(sorted(a.port for a in lab)) for lab in self.ca.labels_from() if lab)


def _single(alphabet, labels):
    ts = [Transition("s0", flow_label(*lab), "s0") for lab in labels]
    return ACA(frozenset(["s0"]), flow_label(*alphabet), frozenset(ts), "s0")


def _split_ports(kind, ports):
    if len(ports) == 2 and all(isinstance(p, (list, tuple)) for p in ports):
        return list(ports[0]), list(ports[1])
    ports = list(ports)
    if kind in ("merge", "join", "sink"):
        return ports[:-1], ports[-1:]
    return ports[:1], ports[1:]


def primitive_ca(kind, ports):
    """The standard CA of a channel or node kind.

    Channels take ``(source end, sink end)``.  Nodes take ``(inputs, outputs)``
    or a flat tuple; a flat tuple puts the single output last for merge and
    join and the single input first otherwise.
    """
    if kind in CHANNEL_CA_KINDS:
        if len(ports) != 2:
            raise ArityError(f"{kind} has two ends, got {len(ports)}")
        a, b = ports
        if a == b:
            raise ArityError("channel ends must differ")
        if kind in ("sync", "transform", "sync_drain"):
            return _single((a, b), [(a, b)])
        if kind in ("lossy_sync_ctx", "lossy_sync_nd", "filter"):
            return _single((a, b), [(a, b), (a,)])
        if kind == "async_drain":
            return _single((a, b), [(a,), (b,)])
        return ACA.build([("s0", flow_label(a), "s1"), ("s1", flow_label(b), "s0")], "s0")
    if kind not in NODE_CA_KINDS:
        raise ArityError(f"unknown primitive kind {kind!r}")
    ins, outs = _split_ports(kind, ports)
    alphabet = ins + outs
    if len(set(alphabet)) != len(alphabet):
        raise ArityError("node ports must be distinct")
    if kind == "mixed":
        if len(ins) != 1 or len(outs) != 1:
            raise ArityError("mixed node has one input and one output")
        return _single(alphabet, [alphabet])
    if kind in ("merge", "sink"):
        if len(outs) != 1 or not ins:
            raise ArityError(f"{kind} needs inputs and exactly one output")
        return _single(alphabet, [(i, outs[0]) for i in ins])
    if kind in ("replicate", "source"):
        if len(ins) != 1 or not outs:
            raise ArityError(f"{kind} needs exactly one input and outputs")
        return _single(alphabet, [alphabet])
    if kind == "route":
        if len(ins) != 1 or not outs:
            raise ArityError("route needs exactly one input and outputs")
        return _single(alphabet, [(ins[0], o) for o in outs])
    if len(outs) != 1 or not ins:
        raise ArityError("join needs inputs and exactly one output")
    return _single(alphabet, [alphabet])


def lift_port_blocking(ca):
    """Replace each flow step ``q -N-> q'`` by ``q -{bX}-> w -{uX}-> q'``.

    Every transition gets its own waiting state ``w``.  Empty labels are kept
    as they are.
    """
    alphabet = set()
    for x in ca.alphabet:
        alphabet.add(Action(x.port, am.BLOCK))
        alphabet.add(Action(x.port, am.UNBLOCK))
    states = set(ca.states)
    ts = set()
    for k, t in enumerate(ca.sorted_transitions()):
        if not t.label:
            ts.add(t)
            continue
        w = f"{t.source}~{k}"
        states.add(w)
        ts.add(Transition(t.source, frozenset(Action(x.port, am.BLOCK) for x in t.label), w))
        ts.add(Transition(w, frozenset(Action(x.port, am.UNBLOCK) for x in t.label), t.target))
    return ACA(frozenset(states), frozenset(alphabet), frozenset(ts), ca.initial)


def unlift(pb):
    """Inverse of :func:`lift_port_blocking` on its image."""
    waiting = {t.target for t in pb.transitions if t.label and
               all(x.kind == am.BLOCK for x in t.label)}
    ts = set()
    for t in pb.transitions:
        if t.source in waiting:
            continue
        if not t.label:
            ts.add(t)
            continue
        for u in pb.outgoing[t.target]:
            ts.add(Transition(t.source, frozenset(Action(x.port) for x in t.label), u.target))
    states = frozenset(s for s in pb.states if s not in waiting)
    alphabet = frozenset(Action(x.port) for x in pb.alphabet)
    return ACA(states, alphabet, frozenset(ts), pb.initial)


def canonical(a):
    """Rename states to ``q0, q1, ...`` in breadth-first order (deterministic)."""
    order = {a.initial: 0}
    todo = deque([a.initial])
    while todo:
        s = todo.popleft()
        for t in a.outgoing[s]:
            if t.target not in order:
                order[t.target] = len(order)
                todo.append(t.target)
    for s in sorted(a.states):
        if s not in order:
            order[s] = len(order)
    return am.rename_states(a, lambda s: f"q{order[s]}")


def circuit_primitives(c):
    """Primitive CAs of a desugared circuit over its port names, with owners."""
    prims = []
    for ch in c.channels:
        prims.append((ch.id, primitive_ca(ch.kind, (ch.a.name, ch.b.name))))
    for n in c.nodes:
        prims.append((n.id, primitive_ca(n.behaviour if n.kind not in ("mixed",) else "mixed",
                                         (n.inputs, n.outputs))))
    return prims


def fold_connected(items, combine):
    """Fold ``items`` (``(key, automaton)``) so that each step joins an automaton
    sharing actions with the accumulated one whenever possible."""
    rest = list(items)
    if not rest:
        return None
    acc = rest.pop(0)[1]
    while rest:
        pick = next((i for i, (_, a) in enumerate(rest) if a.alphabet & acc.alphabet), 0)
        acc = combine(acc, rest.pop(pick)[1])
    return acc


def circuit_reference_semantics(c, hide_internal=True, max_states=10**6):
    """Reference CA of a circuit over node names, plus its port-blocking lift.

    All primitive CAs are joined on shared port names; ports are then renamed
    to their node, auxiliary nodes from desugaring are hidden and, with
    ``hide_internal``, so are all non-boundary nodes.
    """
    c = desugar(c)
    prims = circuit_primitives(c)
    ca = fold_connected(prims, lambda x, y: am.join(x, y, max_states))
    owner = c.port_owner()
    ca = am.rename(ca, {x: Action(owner[x.port]) for x in ca.alphabet})
    hidden = {n.id for n in c.nodes if n.hidden}
    if hide_internal:
        hidden |= set(c.boundary["internal"])
    ca = am.hide(ca, {Action(h) for h in hidden if Action(h) in ca.alphabet})
    ca = canonical(ca)
    return PrimitiveSemantics(c.name, ca, canonical(lift_port_blocking(ca)))


def primitive_semantics(kind, ports):
    ca = primitive_ca(kind, ports)
    return PrimitiveSemantics(kind, ca, lift_port_blocking(ca))


def port_blocking_aca(label_sets):
    """Single-state reference lifted from a list of port sets (test helper)."""
    return lift_port_blocking(_single(sorted({p for s in label_sets for p in s}),
                                      [tuple(s) for s in label_sets]))
