"""Handshaking automata for nodes and channels, and their composition.

Each primitive is a small timed automaton with one clock ``x_<site>`` and one
timeout constant ``T_<site>``.  Message actions follow the figure notation:
``?w`` sends a write, ``!w`` receives it, ``r`` is a read and ``mw`` a
may_write.  Blocking labels cover every port of the primitive taking part in
the transaction, the environment port of a boundary node included.

A circuit region becomes a *network*: binary node templates (larger nodes are
cascaded), link templates for the synchronous channels and direct joints
between adjacent ports.  :func:`compose_handshake` folds the network into one
timed automaton.
"""

import math
from dataclasses import dataclass, field

from . import automata as am
from .automata import Action, TimedACA, TimedTransition, cc
from .circuit import desugar, env_port, longest_path
from .errors import MissingTemplate, UnsupportedKind
from .semantics import lift_port_blocking, primitive_ca

SPONTANEOUS = "spontaneous"  # initiated by a pending environment request
HOLD = "hold"                # leaves a commit state once the hold time is over
WINDOW = "window"            # collecting replies to probes or further inputs
CONFIRM = "confirm"          # asked upstream to confirm, awaiting its write
PATIENCE = "patience"        # sent a definite write, awaiting the final read
ABORT = "abort"              # added timeout return from a choice-committed state

TEMPLATE_KINDS = ("source", "sink", "mixed", "replicate", "merge", "route", "join",
                  "sync_link", "lossy_sync_ctx", "lossy_sync_nd")
VARIANTS = {
    "sink": ("standard", "always_accepting"),
    "merge": ("full", "write", "may_write", "mixed"),
    "route": ("full", "write", "may_write"),
    "join": ("full", "write", "may_write", "mixed"),
}


def sw(p):
    return Action(p, am.SEND_WRITE)


def rw(p):
    return Action(p, am.RECV_WRITE)


def smw(p):
    return Action(p, am.SEND_MAY_WRITE)


def rmw(p):
    return Action(p, am.RECV_MAY_WRITE)


def sr(p):
    return Action(p, am.SEND_READ)


def rr(p):
    return Action(p, am.RECV_READ)


def blk(ports):
    return frozenset(Action(p, am.BLOCK) for p in ports)


def unb(ports):
    return frozenset(Action(p, am.UNBLOCK) for p in ports)


@dataclass
class HandshakeTemplate:
    """A primitive's handshaking automaton with its port binding.

    ``ports`` maps roles (``in``, ``out``, ``in1`` ...) to port names and
    ``reference`` is the flow CA the template must implement.
    """

    kind: str
    site: str
    ports: dict
    variant: str
    taca: TimedACA
    timeout_constant: str
    clock: str
    reference: object = None

    @property
    def pb_aca(self):
        return lift_port_blocking(self.reference)

    @property
    def message_actions(self):
        return frozenset(a for a in self.taca.alphabet if a.kind in am.MESSAGE_KINDS)

    @property
    def inputs(self):
        return [p for r, p in sorted(self.ports.items()) if r.startswith("in")]

    @property
    def outputs(self):
        return [p for r, p in sorted(self.ports.items()) if r.startswith("out")]


class _Builder:
    """Collects edges for one template; guards are ``None``, ``"T"`` or ``"D"``."""

    def __init__(self, site, delay_constant=None):
        self.site = site
        self.x = f"x_{site}"
        self.T = f"T_{site}"
        self.D = delay_constant
        self.edges = []
        self.inv = {}
        self.cls = {}

    def e(self, src, label, dst, guard=None, reset=False, tags=()):
        g = frozenset()
        if guard == "T":
            g = frozenset([cc(self.x, ">", self.T)])
        elif guard == "D":
            g = frozenset([cc(self.x, ">=", self.D)])
        r = frozenset([self.x]) if reset else frozenset()
        self.edges.append(TimedTransition(src, frozenset(label), g, r, dst, frozenset(tags)))

    def wait(self, *states, cls=PATIENCE):
        for s in states:
            self.inv[s] = frozenset([cc(self.x, "<", self.T)])
            self.cls[s] = cls

    def delay(self, *states):
        for s in states:
            self.inv[s] = frozenset([cc(self.x, "<=", self.D)])

    def build(self):
        """The automaton; timeout edges are tagged with their state's class."""
        states = {"s0"}
        alphabet = set()
        edges = []
        for t in self.edges:
            if t.is_timeout and HOLD not in t.tags:
                t = TimedTransition(t.source, t.label, t.guard, t.resets, t.target,
                                    t.tags | {self.cls.get(t.source, PATIENCE)})
            edges.append(t)
        self.edges = edges
        for t in self.edges:
            states.add(t.source)
            states.add(t.target)
            alphabet |= t.label
        return TimedACA(frozenset(states), frozenset(alphabet), frozenset(self.edges), "s0",
                        frozenset([self.x]), self.inv)


def add_abort_edges(taca, x, T):
    """Give every pre-commit state without a silent or timeout exit a timeout return
    ``{}, x>T`` to the initial state.

    Without it a partner that gave up would leave the site waiting forever,
    and a silent choice would commit the time-abstracted automaton to one
    transaction, which the port-blocking reference never does.
    """
    committed = {t.target for t in taca.transitions if any(a.kind == am.BLOCK for a in t.label)}
    extra = []
    for s in sorted(taca.states):
        if s == taca.initial or s in committed:
            continue
        if any(not t.label or t.is_timeout for t in taca.outgoing[s]):
            continue
        extra.append(TimedTransition(s, frozenset(), frozenset([cc(x, ">", T)]), frozenset(),
                                     taca.initial, frozenset([ABORT])))
    if not extra:
        return taca
    return TimedACA(taca.states, taca.alphabet, taca.transitions | frozenset(extra), taca.initial,
                    taca.clocks, taca.invariance)


# ---------------------------------------------------------------------------
# node templates


def _source(b, o, env):
    allp = [env, o]
    b.e("s0", [sw(o)], "s1", reset=True, tags=[SPONTANEOUS])
    b.wait("s1", "commit")
    b.e("s1", [], "s0", guard="T")
    b.e("s1", [rr(o)], "s2")
    b.e("s2", blk(allp), "commit", reset=True)
    b.e("commit", unb(allp), "s0", guard="T", tags=[HOLD])


def _sink(b, i, env, always_accepting):
    allp = [i, env]
    b.e("s0", [rw(i)], "q1", reset=True)
    if not always_accepting:
        b.e("q1", [], "s0")
    b.e("q1", [sr(i)], "q2")
    b.e("q2", blk(allp), "commit", reset=True)
    b.e("commit", unb(allp), "s0", guard="T", tags=[HOLD])
    b.e("s0", [rmw(i)], "p1", reset=True)
    b.e("p1", [], "s0")
    b.e("p1", [sr(i)], "p2")
    b.e("p2", [], "s0", guard="T")
    b.e("p2", [rw(i)], "q1")
    b.wait("commit")
    b.wait("p2", cls=CONFIRM)


def _mixed(b, i, o):
    allp = [i, o]
    b.e("s0", [rw(i)], "q1")
    b.e("q1", [sw(o)], "q2", reset=True)
    b.e("q2", [], "s0", guard="T")
    b.e("q2", [rr(o)], "q3")
    b.e("q3", [sr(i)], "q4")
    b.e("q4", blk(allp), "commit", reset=True)
    b.e("commit", unb(allp), "s0", guard="T", tags=[HOLD])
    b.e("s0", [rmw(i)], "p1")
    b.e("p1", [smw(o)], "p2", reset=True)
    b.e("p2", [], "s0", guard="T")
    b.e("p2", [rr(o)], "p3")
    b.e("p3", [sr(i)], "p4", reset=True)
    b.e("p4", [], "s0", guard="T")
    b.e("p4", [rw(i)], "q1")
    b.wait("q2", "commit")
    b.wait("p2", cls=WINDOW)
    b.wait("p4", cls=CONFIRM)


def _collect_reads(b, pre, o1, o2, done, cls=WINDOW):
    """Wait for read replies from both outputs: ``pre`` -> ``done`` (or back)."""
    b.e(pre, [rr(o1)], pre + "a")
    b.e(pre, [rr(o2)], pre + "b")
    b.e(pre, [rr(o1), rr(o2)], done)
    b.e(pre + "a", [rr(o2)], done)
    b.e(pre + "b", [rr(o1)], done)
    b.e(pre, [], "s0", guard="T")
    b.e(pre + "a", [], "s0", guard="T")
    b.e(pre + "b", [], "s0", guard="T")
    b.wait(pre, pre + "a", pre + "b", cls=cls)


def _replicate(b, i, o1, o2):
    allp = [i, o1, o2]
    # write-initiated branch
    b.e("s0", [rw(i)], "w1")
    b.e("w1", [smw(o1), smw(o2)], "w2", reset=True)
    _collect_reads(b, "w2", o1, o2, "w3")
    b.e("w3", [], "q5")
    # may_write-initiated branch: confirm upstream first
    b.e("s0", [rmw(i)], "m1")
    b.e("m1", [smw(o1), smw(o2)], "m2", reset=True)
    _collect_reads(b, "m2", o1, o2, "m3")
    b.e("m3", [sr(i)], "q4", reset=True)
    b.e("q4", [rw(i)], "q5")
    b.e("q4", [], "s0", guard="T")
    b.wait("q4", cls=CONFIRM)
    # definite write to both outputs
    b.e("q5", [sw(o1), sw(o2)], "q6", reset=True)
    _collect_reads(b, "q6", o1, o2, "q7", cls=PATIENCE)
    b.e("q7", [sr(i)], "q8")
    b.e("q8", blk(allp), "commit", reset=True)
    b.e("commit", unb(allp), "s0", guard="T", tags=[HOLD])
    b.wait("commit")


def _merge(b, i1, i2, o, cases):
    """Binary merge.  ``cases`` selects among ``write`` (both inputs write),
    ``may_write`` (both may write) and ``mixed`` (one of each)."""
    c1, c2 = {i1, o}, {i2, o}
    ins = {1: i1, 2: i2}
    # commit tails shared by all cases: W3k -> ?r ik -> W4k -> block
    for k in (1, 2):
        b.e(f"W3{k}", [sr(ins[k])], f"W4{k}")
        b.e(f"W4{k}", blk(c1 if k == 1 else c2), f"C{k}", reset=True)
        b.e(f"C{k}", unb(c1 if k == 1 else c2), "s0", guard="T", tags=[HOLD])
        b.wait(f"C{k}")
        # a definite write on the output awaiting its read: the starred states
        b.e(f"W2{k}", [rr(o)], f"W3{k}")
        b.e(f"W2{k}", [], "s0", guard="T")
        b.wait(f"W2{k}")
    kinds = []
    if "write" in cases:
        kinds.append(("w", "w"))
    if "may_write" in cases:
        kinds.append(("mw", "mw"))
    if "mixed" in cases:
        kinds += [("w", "mw"), ("mw", "w")]
    recv = {"w": rw, "mw": rmw}
    singles = sorted({k[0] for k in kinds})
    # collection: first message on one input, optionally a second on the other
    for m1 in singles:
        for k, ik in ins.items():
            st = f"G{k}{m1}"
            b.e("s0", [recv[m1](ik)], st, reset=True)
            b.wait(st, cls=WINDOW)
            if m1 == "w":
                b.e(st, [sw(o)], f"W2{k}", guard="T", reset=True)
            else:
                b.e(st, [smw(o)], f"M2{k}", guard="T", reset=True)
    for m1, m2 in kinds:
        both = f"B{m1}{m2}"
        b.e("s0", [recv[m1](i1), recv[m2](i2)], both)
        b.e(f"G1{m1}", [recv[m2](i2)], both)
        b.e(f"G2{m2}", [recv[m1](i1)], both)
    if ("w", "w") in kinds:
        b.e("Bww", [sw(o)], "Ww", reset=True)
        b.wait("Ww")
        b.e("Ww", [], "s0", guard="T")
        b.e("Ww", [rr(o)], "W31")
        b.e("Ww", [rr(o)], "W32")
    if any(m == "mw" for m in singles):
        # one may_write input: ask it to confirm, then write definitely
        for k, ik in ins.items():
            b.e(f"M2{k}", [rr(o)], f"M3{k}")
            b.e(f"M2{k}", [], "s0", guard="T")
            b.e(f"M3{k}", [sr(ik)], f"M4{k}", reset=True)
            b.e(f"M4{k}", [rw(ik)], f"M5{k}")
            b.e(f"M4{k}", [], "s0", guard="T")
            b.e(f"M5{k}", [sw(o)], f"W2{k}", reset=True)
            b.wait(f"M2{k}", cls=WINDOW)
            b.wait(f"M4{k}", cls=CONFIRM)
    if ("mw", "mw") in kinds:
        b.e("Bmwmw", [smw(o)], "Mm", reset=True)
        b.wait("Mm", cls=WINDOW)
        b.e("Mm", [], "s0", guard="T")
        b.e("Mm", [rr(o)], "Mm3")
        for k, ik in ins.items():
            other = 3 - k
            b.e("Mm3", [sr(ik)], f"Mx{k}", reset=True)
            b.e(f"Mx{k}", [rw(ik)], f"M5{k}")
            # the chosen writer backed out: try the remaining one
            b.e(f"Mx{k}", [], f"M3{other}", guard="T")
            b.wait(f"Mx{k}", cls=CONFIRM)
    for m1, m2 in (("w", "mw"), ("mw", "w")):
        if (m1, m2) not in kinds:
            continue
        wk = 1 if m1 == "w" else 2
        mk = 3 - wk
        st = f"B{m1}{m2}"
        b.e(st, [sw(o)], f"X{wk}", reset=True)
        b.wait(f"X{wk}")
        b.e(f"X{wk}", [], "s0", guard="T")
        b.e(f"X{wk}", [rr(o)], f"W3{wk}")
        b.e(f"X{wk}", [rr(o)], f"Y{mk}")
        b.e(f"Y{mk}", [sr(ins[mk])], f"Y{mk}a", reset=True)
        b.wait(f"Y{mk}a", cls=CONFIRM)
        b.e(f"Y{mk}a", [rw(ins[mk])], f"W3{mk}")
        # the may_write side backed out: fall back to the definite writer
        b.e(f"Y{mk}a", [], f"W3{wk}", guard="T")


def _route(b, i, o1, o2, cases):
    outs = {1: o1, 2: o2}
    for k in (1, 2):
        cp = [i, outs[k]]
        b.e(f"q4{k}", [sw(outs[k])], f"q5{k}", reset=True)
        b.wait(f"q5{k}")
        b.e(f"q5{k}", [rr(outs[k])], f"q6{k}")
        b.e(f"q5{k}", [], "s0", guard="T")
        # both available: try k first and fall back to the other on timeout
        b.e("q3", [sw(outs[k])], f"q5{k}x", reset=True)
        b.wait(f"q5{k}x")
        b.e(f"q5{k}x", [rr(outs[k])], f"q6{k}")
        b.e(f"q5{k}x", [], f"q4{3 - k}", guard="T")
        b.e(f"q6{k}", [sr(i)], f"q7{k}")
        b.e(f"q7{k}", blk(cp), f"C{k}", reset=True)
        b.e(f"C{k}", unb(cp), "s0", guard="T", tags=[HOLD])
        b.wait(f"C{k}")
    if "write" in cases:
        b.e("s0", [rw(i)], "q1")
        b.e("q1", [smw(o1), smw(o2)], "q2", reset=True)
        b.e("q2", [rr(o1)], "q2a")
        b.e("q2", [rr(o2)], "q2b")
        b.e("q2", [rr(o1), rr(o2)], "q3")
        b.e("q2a", [rr(o2)], "q3")
        b.e("q2b", [rr(o1)], "q3")
        b.e("q2", [], "s0", guard="T")
        b.e("q2a", [], "q41", guard="T")
        b.e("q2b", [], "q42", guard="T")
        b.wait("q2", "q2a", "q2b", cls=WINDOW)
    if "may_write" in cases:
        b.e("s0", [rmw(i)], "m1")
        b.e("m1", [smw(o1), smw(o2)], "m2", reset=True)
        b.e("m2", [rr(o1)], "m2a")
        b.e("m2", [rr(o2)], "m2b")
        b.e("m2", [rr(o1), rr(o2)], "m3")
        b.e("m2a", [rr(o2)], "m3")
        b.e("m2b", [rr(o1)], "m3")
        b.e("m2", [], "s0", guard="T")
        # one read is enough to answer; keep listening for the other branch
        b.e("m2a", [sr(i)], "m41", reset=True)
        b.e("m2b", [sr(i)], "m42", reset=True)
        b.e("m41", [rr(o2)], "m4")
        b.e("m42", [rr(o1)], "m4")
        b.e("m3", [sr(i)], "m4", reset=True)
        b.wait("m2", cls=WINDOW)
        b.wait("m41", "m42", "m4", cls=CONFIRM)
        b.e("m4", [rw(i)], "q3")
        b.e("m41", [rw(i)], "q41")
        b.e("m42", [rw(i)], "q42")
        for s in ("m4", "m41", "m42"):
            b.e(s, [], "s0", guard="T")


def _join(b, i1, i2, o, cases):
    allp = [i1, i2, o]
    recv = {"w": rw, "mw": rmw}
    kinds = []
    if "write" in cases:
        kinds.append(("w", "w"))
    if "mixed" in cases:
        kinds += [("mw", "w"), ("w", "mw")]
    if "may_write" in cases:
        kinds.append(("mw", "mw"))
    singles = {(1, k[0]) for k in kinds} | {(2, k[1]) for k in kinds}
    ins = {1: i1, 2: i2}
    for k, m in sorted(singles):
        st = f"G{k}{m}"
        b.e("s0", [recv[m](ins[k])], st, reset=True)
        b.e(st, [], "s0", guard="T")
        b.wait(st, cls=WINDOW)
    # final phase shared by all cases: definite write out, read back, confirm both
    b.e("F1", [sw(o)], "F2", reset=True)
    b.wait("F2")
    b.e("F2", [], "s0", guard="T")
    b.e("F2", [rr(o)], "F3")
    b.e("F3", [sr(i1), sr(i2)], "F4")
    b.e("F4", blk(allp), "commit", reset=True)
    b.e("commit", unb(allp), "s0", guard="T", tags=[HOLD])
    b.wait("commit")
    for m1, m2 in kinds:
        both = f"B{m1}{m2}"
        b.e("s0", [recv[m1](i1), recv[m2](i2)], both)
        b.e(f"G1{m1}", [recv[m2](i2)], both)
        b.e(f"G2{m2}", [recv[m1](i1)], both)
        if (m1, m2) == ("w", "w"):
            b.e(both, [], "F1")
            continue
        # probe the output, then ask the uncertain inputs to confirm
        b.e(both, [smw(o)], f"{both}p", reset=True)
        b.wait(f"{both}p", cls=WINDOW)
        b.e(f"{both}p", [], "s0", guard="T")
        b.e(f"{both}p", [rr(o)], f"{both}r")
        asks = [ins[k] for k, m in ((1, m1), (2, m2)) if m == "mw"]
        b.e(f"{both}r", [sr(p) for p in asks], f"{both}c", reset=True)
        b.wait(f"{both}c", cls=CONFIRM)
        b.e(f"{both}c", [], "s0", guard="T")
        if len(asks) == 1:
            b.e(f"{both}c", [rw(asks[0])], "F1")
        else:
            b.e(f"{both}c", [rw(asks[0]), rw(asks[1])], "F1")
            b.e(f"{both}c", [rw(asks[0])], f"{both}c1")
            b.e(f"{both}c", [rw(asks[1])], f"{both}c2")
            b.e(f"{both}c1", [rw(asks[1])], "F1")
            b.e(f"{both}c2", [rw(asks[0])], "F1")
            b.e(f"{both}c1", [], "s0", guard="T")
            b.e(f"{both}c2", [], "s0", guard="T")
            b.wait(f"{both}c1", f"{both}c2", cls=CONFIRM)


# ---------------------------------------------------------------------------
# channel templates


def _sync_link(b, cin, cout):
    """Relay messages across a link with delay ``D``; the mode of the last
    forwarded message decides whether the returning read ends the handshake,
    in which case both ends commit."""
    both = [cin, cout]
    for alpha, recv, send, mode in (("w", rw, sw, "sw"), ("mw", rmw, smw, "sm")):
        b.e("s0", [recv(cin)], f"f{alpha}", reset=True)
        b.delay(f"f{alpha}")
        b.e(f"f{alpha}", [send(cout)], mode, guard="D", reset=True)
        b.wait(mode, cls=PATIENCE if alpha == "w" else WINDOW)
        b.e(mode, [], "s0", guard="T")
        b.e(mode, [rr(cout)], f"r{alpha}", reset=True)
        b.delay(f"r{alpha}")
    b.e("rmw", [sr(cin)], "s0", guard="D")
    b.e("rw", [sr(cin)], "pre", guard="D")
    b.e("pre", blk(both), "commit", reset=True)
    b.e("commit", unb(both), "s0", guard="T", tags=[HOLD])
    b.wait("commit")


def _lossy(b, i, o, nd):
    allp = [i, o]
    b.e("s0", [rw(i)], "q1")
    b.e("q1", [sw(o)], "q2", reset=True)
    b.wait("q2", "commit", "lostc")
    b.wait("p2", cls=WINDOW)
    b.wait("p4", "lost2", cls=CONFIRM)
    b.e("q2", [sr(i)], "lost", guard="T")
    if nd:
        b.e("q1", [sr(i)], "lost")
    b.e("lost", blk([i]), "lostc", reset=True)
    b.e("lostc", unb([i]), "s0", guard="T", tags=[HOLD])
    b.e("q2", [rr(o)], "q4")
    b.e("q4", [sr(i)], "q3")
    b.e("q3", blk(allp), "commit", reset=True)
    b.e("commit", unb(allp), "s0", guard="T", tags=[HOLD])
    b.e("s0", [rmw(i)], "p1")
    b.e("p1", [smw(o)], "p2", reset=True)
    b.e("p2", [rr(o)], "p3")
    b.e("p2", [sr(i)], "lost2", guard="T", reset=True)
    if nd:
        b.e("p1", [sr(i)], "lost2", reset=True)
    b.e("lost2", [rw(i)], "lost1")
    b.e("lost2", [], "s0", guard="T")
    b.e("lost1", [sr(i)], "lost")
    b.e("p3", [sr(i)], "p4", reset=True)
    b.e("p4", [], "s0", guard="T")
    b.e("p4", [rw(i)], "q1")


# ---------------------------------------------------------------------------


def default_ports(kind, site="A"):
    """Port roles used when a template is built on its own."""
    if kind == "source":
        return {"out": f"{site}_out", "env": env_port(site)}
    if kind == "sink":
        return {"in": f"{site}_in", "env": env_port(site)}
    if kind in ("mixed", "lossy_sync_ctx", "lossy_sync_nd"):
        return {"in": f"{site}_in", "out": f"{site}_out"}
    if kind in ("replicate", "route"):
        return {"in": f"{site}_in", "out1": f"{site}_out1", "out2": f"{site}_out2"}
    if kind in ("merge", "join"):
        return {"in1": f"{site}_in1", "in2": f"{site}_in2", "out": f"{site}_out"}
    if kind == "sync_link":
        return {"in": f"{site}_in", "out": f"{site}_out"}
    raise UnsupportedKind(f"no handshake template for {kind!r}")


def _cases(kind, variant):
    if variant in (None, "full"):
        return {"write", "may_write", "mixed"}
    if variant not in VARIANTS.get(kind, ()):
        raise UnsupportedKind(f"unknown variant {variant!r} for {kind}")
    return {variant}


def handshake_template(kind, ports=None, variant=None, site=None, delay_constant=None):
    """Instantiate the handshaking automaton of one primitive.

    ``variant`` picks the sink flavour (``standard`` keeps the reject edge,
    ``always_accepting`` drops it), the message cases of merge/route/join
    (``full`` by default) or nothing for the other kinds; lossy variants are
    separate kinds.
    """
    if kind not in TEMPLATE_KINDS:
        raise UnsupportedKind(f"no handshake template for {kind!r}")
    site = site or "A"
    ports = dict(ports or default_ports(kind, site))
    need = set(default_ports(kind, site))
    if set(ports) != need:
        raise UnsupportedKind(f"{kind} needs ports {sorted(need)}, got {sorted(ports)} "
                              "(only binary nodes have templates; larger ones are cascaded)")
    b = _Builder(site, delay_constant or f"D_{site}")
    p = ports
    if kind == "source":
        _source(b, p["out"], p["env"])
        ref = primitive_ca("source", ([p["env"]], [p["out"]]))
    elif kind == "sink":
        variant = variant or "standard"
        if variant not in VARIANTS["sink"]:
            raise UnsupportedKind(f"unknown sink variant {variant!r}")
        _sink(b, p["in"], p["env"], variant == "always_accepting")
        ref = primitive_ca("sink", ([p["in"]], [p["env"]]))
    elif kind == "mixed":
        _mixed(b, p["in"], p["out"])
        ref = primitive_ca("mixed", ([p["in"]], [p["out"]]))
    elif kind == "replicate":
        _replicate(b, p["in"], p["out1"], p["out2"])
        ref = primitive_ca("replicate", ([p["in"]], [p["out1"], p["out2"]]))
    elif kind == "merge":
        _merge(b, p["in1"], p["in2"], p["out"], _cases(kind, variant))
        ref = primitive_ca("merge", ([p["in1"], p["in2"]], [p["out"]]))
    elif kind == "route":
        _route(b, p["in"], p["out1"], p["out2"], _cases(kind, variant))
        ref = primitive_ca("route", ([p["in"]], [p["out1"], p["out2"]]))
    elif kind == "join":
        _join(b, p["in1"], p["in2"], p["out"], _cases(kind, variant))
        ref = primitive_ca("join", ([p["in1"], p["in2"]], [p["out"]]))
    elif kind == "sync_link":
        _sync_link(b, p["in"], p["out"])
        ref = primitive_ca("sync", (p["in"], p["out"]))
    else:
        _lossy(b, p["in"], p["out"], kind == "lossy_sync_nd")
        ref = primitive_ca(kind, (p["in"], p["out"]))
    taca = TimedACA(*_prune(add_abort_edges(b.build(), b.x, b.T)))
    return HandshakeTemplate(kind, site, ports, variant or "default", taca, b.T, b.x, ref)


def _prune(taca):
    """Keep the reachable part only (variants may leave states unused)."""
    seen = {taca.initial}
    todo = [taca.initial]
    while todo:
        s = todo.pop()
        for t in taca.outgoing[s]:
            if t.target not in seen:
                seen.add(t.target)
                todo.append(t.target)
    ts = frozenset(t for t in taca.transitions if t.source in seen)
    return (frozenset(seen), taca.alphabet, ts, taca.initial, taca.clocks,
            {s: v for s, v in taca.inv.items() if s in seen})


def _without(a, actions):
    if not (a.alphabet & actions):
        return a
    ts = frozenset(t for t in a.transitions if not (t.label & actions))
    if isinstance(a, TimedACA):
        return TimedACA(*_prune(TimedACA(a.states, a.alphabet - actions, ts, a.initial,
                                         a.clocks, a.invariance)))
    return am.ACA(a.states, a.alphabet - actions, ts, a.initial)


# ---------------------------------------------------------------------------
# networks


@dataclass
class Site:
    id: str
    node: str            # owning node or channel id
    template: HandshakeTemplate
    level: int = 0


@dataclass
class Joint:
    """Two adjacent template ports: ``up`` sends writes, ``down`` sends reads."""

    up: str
    down: str
    delay: int = 0


@dataclass
class Network:
    circuit: object
    sites: list
    joints: list
    observation: dict          # port -> node id
    hidden_nodes: frozenset
    links: dict = field(default_factory=dict)   # link id -> (joint up, joint down, delay)

    def site(self, sid):
        for s in self.sites:
            if s.id == sid:
                return s
        raise KeyError(sid)

    @property
    def port_site(self):
        out = {}
        for s in self.sites:
            for p in s.template.ports.values():
                out[p] = s.id
        return out


def _cascade(node, beh, ins, outs, sink_variant, variant):
    """Binary sites ``(site id, kind, ports, variant)`` and internal joints of
    one node.  Sources and sinks get an environment stub; wider nodes become a
    chain of binary merges, joins, replicators or routers."""
    fan_in = "join" if beh == "join" else "merge"
    fan_out = "route" if beh == "route" else "replicate"
    env = env_port(node)
    specs, joints = [], []
    n = [0]

    def fresh():
        n[0] += 1
        j = f"{node}_j{n[0]}"
        joints.append(Joint(j + "o", j + "i", 0))
        return j + "o", j + "i"

    if not ins and not outs:
        raise UnsupportedKind(f"node {node} has no channels")
    if not ins:
        if len(outs) == 1:
            return [("source", {"out": outs[0], "env": env}, None)], []
        o, i = fresh()
        specs.append(("source", {"out": o, "env": env}, None))
        ins = [i]
    tail = None
    if not outs:
        if len(ins) == 1:
            return specs + [("sink", {"in": ins[0], "env": env}, sink_variant)], joints
        o, tail = fresh()
        outs = [o]
    if len(ins) > 1 and len(outs) > 1:
        raise UnsupportedKind(f"node {node} has several inputs and several outputs")
    if len(ins) > 1:
        cur = ins[0]
        for k, nxt in enumerate(ins[1:]):
            out, nxt_cur = (outs[0], None) if k == len(ins) - 2 else fresh()
            specs.append((fan_in, {"in1": cur, "in2": nxt, "out": out}, variant))
            cur = nxt_cur
    elif len(outs) > 1:
        cur = ins[0]
        for k in range(len(outs) - 1):
            if k == len(outs) - 2:
                o2, nxt_cur = outs[k + 1], None
            else:
                o2, nxt_cur = fresh()
            specs.append((fan_out, {"in": cur, "out1": outs[k], "out2": o2}, variant))
            cur = nxt_cur
    else:
        specs.append(("mixed", {"in": ins[0], "out": outs[0]}, None))
    if tail:
        specs.append(("sink", {"in": tail, "env": env}, sink_variant))
    return specs, joints


def build_network(region, sink_variant="standard", node_variants=None, links_as_sites=True):
    """Sites and joints of a (desugared) synchronous region.

    With ``links_as_sites`` each synchronous channel is a link template joined
    to its end nodes with zero delay (symbolic composition); otherwise the
    channel becomes a delayed joint between the node ports (simulation).
    """
    c = desugar(region)
    node_variants = node_variants or {}
    sites, joints, obs, links = [], [], {}, {}
    attached = c.channel_at()
    hidden = frozenset(n.id for n in c.nodes if n.hidden)
    for n in c.nodes:
        for p in n.in_ports + n.out_ports:
            if p not in attached:
                raise UnsupportedKind(f"port {p} is cut by a buffer; compose each region separately")
        sv = "always_accepting" if n.hidden else sink_variant
        beh = "mixed" if n.kind == "mixed" else n.behaviour
        specs, inner = _cascade(n.id, beh, n.in_ports, n.out_ports, sv, node_variants.get(n.id))
        for k, (kind, ports, v) in enumerate(specs):
            sid = n.id if len(specs) == 1 else f"{n.id}_{k + 1}"
            sites.append(Site(sid, n.id, handshake_template(kind, ports, v, site=sid)))
            for p in ports.values():
                obs[p] = n.id
        joints += inner
    owner = c.port_owner()
    for ch in c.channels:
        up, down = ch.a.name, ch.b.name
        if ch.kind == "fifo":
            raise UnsupportedKind("fifo channels separate regions; compose each region separately")
        if ch.kind in ("sync", "transform"):
            if links_as_sites:
                t = handshake_template("sync_link", {"in": f"{ch.id}_in", "out": f"{ch.id}_out"},
                                       site=ch.id, delay_constant=f"D_{ch.id}")
                sites.append(Site(ch.id, ch.id, t))
                obs[f"{ch.id}_in"] = owner[up]
                obs[f"{ch.id}_out"] = owner[down]
                joints.append(Joint(up, f"{ch.id}_in", 0))
                joints.append(Joint(f"{ch.id}_out", down, 0))
            else:
                joints.append(Joint(up, down, ch.delay))
            links[ch.id] = (up, down, ch.delay)
        elif ch.kind == "lossy_sync_ctx":
            lid = f"{ch.id}_L"
            t = handshake_template("lossy_sync_ctx", {"in": f"{lid}_in", "out": f"{lid}_out"},
                                   site=lid)
            sites.append(Site(lid, ch.id, t))
            obs[f"{lid}_in"] = owner[up]
            obs[f"{lid}_out"] = owner[down]
            if links_as_sites:
                lt = handshake_template("sync_link", {"in": f"{ch.id}_in", "out": f"{ch.id}_out"},
                                        site=ch.id, delay_constant=f"D_{ch.id}")
                sites.append(Site(ch.id, ch.id, lt))
                obs[f"{ch.id}_in"] = owner[up]
                obs[f"{ch.id}_out"] = owner[up]
                joints.append(Joint(up, f"{ch.id}_in", 0))
                joints.append(Joint(f"{ch.id}_out", f"{lid}_in", 0))
            else:
                joints.append(Joint(up, f"{lid}_in", ch.delay))
            joints.append(Joint(f"{lid}_out", down, 0))
            links[ch.id] = (up, down, ch.delay)
        else:
            raise UnsupportedKind(f"channel kind {ch.kind} has no handshake template")
    net = Network(c, sites, joints, obs, hidden, links)
    _assign_levels(net)
    return net


def _assign_levels(net):
    """Downstream depth of every site: sites without successors get 0."""
    ps = net.port_site
    succ = {s.id: set() for s in net.sites}
    for j in net.joints:
        succ[ps[j.up]].add(ps[j.down])
    memo = {}

    def level(s, stack=()):
        if s in memo:
            return memo[s]
        if s in stack:
            return 0
        v = 0
        for t in succ[s]:
            v = max(v, 1 + level(t, stack + (s,)))
        memo[s] = v
        return v

    for s in net.sites:
        s.level = level(s.id)


# ---------------------------------------------------------------------------
# composition


def sync_pairs(joints, block_mode="sync"):
    """Synchronisation pairs ``(fused action, up action, down action)``."""
    if block_mode not in ("sync", "free"):
        raise ValueError(f"block mode must be sync or free, got {block_mode!r}")
    out = []
    for j in joints:
        name = f"{j.up}~{j.down}"
        out.append((Action(name, am.SEND_WRITE), sw(j.up), rw(j.down)))
        out.append((Action(name, am.SEND_MAY_WRITE), smw(j.up), rmw(j.down)))
        out.append((Action(name, am.RECV_READ), rr(j.up), sr(j.down)))
        if block_mode == "sync":
            out.append((Action(name, am.BLOCK), Action(j.up, am.BLOCK), Action(j.down, am.BLOCK)))
            out.append((Action(name, am.UNBLOCK), Action(j.up, am.UNBLOCK),
                        Action(j.down, am.UNBLOCK)))
    return out


@dataclass
class Composition:
    taca: TimedACA
    network: Network
    block_mode: str
    observation: dict        # action port -> frozenset of node ids
    clock_level: dict        # clock -> downstream depth of its site

    def node_actions(self):
        """Renaming from block/unblock actions to node-level ones."""
        r = {}
        for a in self.taca.alphabet:
            if a.kind in (am.BLOCK, am.UNBLOCK):
                r[a] = frozenset(Action(n, a.kind) for n in self.observation[a.port])
        return r


def fold_templates(templates, pairs, max_states=None):
    """Left fold of :func:`product_taca`, adding each automaton next to one it
    shares a synchronisation pair with."""
    rest = list(templates)
    if not rest:
        raise MissingTemplate("nothing to compose")
    remaining = list(pairs)
    # a paired action whose partner no operand offers can never fire
    offered = set().union(*(t.alphabet for t in rest))
    dead = {x for _, x, y in remaining if y not in offered} | \
        {y for _, x, y in remaining if x not in offered}
    if dead:
        rest = [_without(t, dead) for t in rest]
        remaining = [(f, x, y) for f, x, y in remaining if x not in dead and y not in dead]
    acc = rest.pop(0)
    while rest:
        pick = 0
        for idx, t in enumerate(rest):
            if any((x in acc.alphabet and y in t.alphabet) or (y in acc.alphabet and x in t.alphabet)
                   for _, x, y in remaining):
                pick = idx
                break
        nxt = rest.pop(pick)
        sync, keep = {}, []
        for f, x, y in remaining:
            if x in acc.alphabet and y in nxt.alphabet:
                sync[f] = (x, y)
            elif y in acc.alphabet and x in nxt.alphabet:
                sync[f] = (y, x)
            else:
                keep.append((f, x, y))
        remaining = keep
        acc = am.product_taca(acc, nxt, sync, max_states)
    return acc


def compose_network(net, block_mode="sync", max_states=200000):
    ports = {p for s in net.sites for p in s.template.ports.values()}
    for j in net.joints:
        if j.up not in ports or j.down not in ports:
            raise MissingTemplate(f"joint {j.up}~{j.down} has no template on one side")
    pairs = sync_pairs(net.joints, block_mode)
    taca = fold_templates([s.template.taca for s in net.sites], pairs, max_states)
    obs = {}
    for a in taca.alphabet:
        if "~" in a.port:
            up, down = a.port.split("~")
            obs[a.port] = frozenset([net.observation[up], net.observation[down]])
        else:
            obs[a.port] = frozenset([net.observation[a.port]])
    levels = {s.template.clock: s.level for s in net.sites}
    return Composition(taca, net, block_mode, obs, levels)


def compose_handshake(region, block_mode="sync", sink_variant="standard", max_states=200000):
    """Timed automaton of a whole region: the product of all its templates,
    synchronising each joint's write, may_write and read messages and, in
    ``sync`` block mode, its block and unblock actions."""
    return compose_network(build_network(region, sink_variant), block_mode, max_states).taca


def estimate_timeout(region, c_factor=None):
    """``ceil(c * delay-weighted longest path * 2)``; ``c`` defaults to
    ``2 * (1 + largest merge in-degree)``."""
    if c_factor is None:
        deg = max([n.n_in for n in region.nodes if n.behaviour == "merge" and n.n_in >= 2],
                  default=0)
        c_factor = 2 * (1 + deg)
    if c_factor <= 0:
        raise ValueError("c_factor must be positive")
    return math.ceil(c_factor * longest_path(region).delay * 2)
