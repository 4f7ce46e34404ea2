"""Correctness checks: observable traces, per-primitive refinement and the
region-level correct-implementation check.

A composed region is explored on the fly (:func:`explore_network`) instead of
through the full product: global steps are closed under the joint
synchronisation pairs and pruned by an urgency rule standing in for the clock
constraints.  Non-timeout steps are urgent and preempt timeouts; an enabled
timeout may fire only when nothing urgent is pending and no timeout of a site
closer to the sinks is enabled (downstream timeouts are shorter); the release
of a commit state comes last.  Steps triggered by an environment request are
never delayed nor do they delay anything.
"""

import json
from collections import deque
from dataclasses import dataclass, field

from . import automata as am
from .automata import ACA, Action, Transition
from .circuit import desugar
from .errors import StateExplosion
from .handshake import (HOLD, SPONTANEOUS, TEMPLATE_KINDS, VARIANTS, build_network,
                        handshake_template)
from .semantics import circuit_reference_semantics

INF = float("inf")
HOLD_RANK = -1

# kinds synchronised on a joint: up-side kind -> down-side kind
_MESSAGE_PAIRS = {am.SEND_WRITE: am.RECV_WRITE, am.SEND_MAY_WRITE: am.RECV_MAY_WRITE,
                  am.RECV_READ: am.SEND_READ}
_BLOCK_PAIRS = {am.BLOCK: am.BLOCK, am.UNBLOCK: am.UNBLOCK}


@dataclass
class Check:
    name: str
    passed: bool
    detail: object = None

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "detail": _plain(self.detail)}


@dataclass
class VerificationReport:
    """Outcome of a verification run; truthy when every check passed."""

    subject: str
    checks: list = field(default_factory=list)
    coverage: float = 1.0
    flags: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __bool__(self):
        return self.passed

    def add(self, name, passed, detail=None):
        self.checks.append(Check(name, bool(passed), detail))

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"subject": self.subject, "passed": self.passed, "coverage": self.coverage,
                "flags": list(self.flags), "checks": [c.to_dict() for c in self.checks]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self):
        lines = [f"{self.subject}: {'PASS' if self.passed else 'FAIL'} (coverage {self.coverage:.2f})"]
        for c in self.checks:
            lines.append(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}")
        for f in self.flags:
            lines.append(f"  note: {f}")
        return "\n".join(lines)


def _plain(x):
    if isinstance(x, (str, int, float, bool)) or x is None:
        return x
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
    if isinstance(x, (frozenset, set)):
        items = [_plain(v) for v in x]
        return sorted(items, key=lambda v: json.dumps(v, sort_keys=True))
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, Action):
        return str(x)
    return str(x)


# ---------------------------------------------------------------------------
# urgency


def step_class(components, levels=None):
    """``("urgent" | "spontaneous" | "timeout", rank)`` of a step made of the
    given local transitions ``(clock owner level, transition)``."""
    timeouts = [(lvl, t) for lvl, t in components if t.is_timeout]
    if not timeouts:
        if any(SPONTANEOUS in t.tags for _, t in components):
            return "spontaneous", 0
        return "urgent", 0
    if any(HOLD in t.tags for _, t in timeouts):
        return "timeout", HOLD_RANK
    return "timeout", max(lvl for lvl, _ in timeouts)


def prune_urgent(steps):
    """Filter ``(class, rank, payload)`` triples by the urgency rule."""
    if any(c == "urgent" for c, _, _ in steps):
        return [s for s in steps if s[0] != "timeout"]
    ranks = [r for c, r, _ in steps if c == "timeout"]
    if not ranks:
        return list(steps)
    low = min(ranks)
    return [s for s in steps if s[0] == "spontaneous" or s[1] == low]


# ---------------------------------------------------------------------------
# on-the-fly network exploration


@dataclass
class NetworkGraph:
    """Reachable global behaviour of a network with port-level labels."""

    aca: ACA
    network: object
    observation: dict       # label port -> frozenset of node ids
    block_mode: str

    def node_aca(self):
        """Block/unblock projection renamed to node actions, hidden nodes removed."""
        hidden = set(self.network.hidden_nodes)
        ts = set()
        alphabet = set()
        for t in self.aca.transitions:
            lab = set()
            for a in t.label:
                if a.kind in (am.BLOCK, am.UNBLOCK):
                    for n in self.observation[a.port]:
                        if n not in hidden:
                            lab.add(Action(n, a.kind))
            ts.add(Transition(t.source, frozenset(lab), t.target))
        for n in self.network.circuit.nodes:
            if not n.hidden:
                alphabet.add(Action(n.id, am.BLOCK))
                alphabet.add(Action(n.id, am.UNBLOCK))
        return ACA(self.aca.states, frozenset(alphabet), frozenset(ts), self.aca.initial)


def explore_network(net, block_mode="sync", urgency=True, max_states=200000):
    """Global state graph of ``net`` under interleaving of synchronised steps.

    A step picks a set of local transitions, at most one per site, closed
    under the joint pairs: every synchronised action has its partner action
    in the partner site's chosen transition.  Pairs are fused into one action
    named ``up~down``.
    """
    if block_mode not in ("sync", "free"):
        raise ValueError(f"block mode must be sync or free, got {block_mode!r}")
    sites = net.sites
    autos = [s.template.taca for s in sites]
    levels = [s.level for s in sites]
    index = {}
    for i, s in enumerate(sites):
        for p in s.template.ports.values():
            index[p] = i
    pairs = dict(_MESSAGE_PAIRS)
    if block_mode == "sync":
        pairs.update(_BLOCK_PAIRS)
    partner = {}   # action -> (site index, partner action, fused action)
    for j in net.joints:
        name = f"{j.up}~{j.down}"
        for ku, kd in pairs.items():
            au, ad = Action(j.up, ku), Action(j.down, kd)
            fused = Action(name, ku)
            partner[au] = (index[j.down], ad, fused)
            partner[ad] = (index[j.up], au, fused)
    obs = {}
    for a in partner.values():
        up, down = a[2].port.split("~")
        obs[a[2].port] = frozenset([net.observation[up], net.observation[down]])
    for p, n in net.observation.items():
        obs.setdefault(p, frozenset([n]))

    def closures(state, i, t):
        out = []

        def rec(chosen, todo):
            if not todo:
                out.append(chosen)
                return
            (j, need), rest = todo[0], todo[1:]
            if j in chosen:
                if need in chosen[j].label:
                    rec(chosen, rest)
                return
            for u in autos[j].outgoing[state[j]]:
                if need in u.label:
                    extra = [(partner[a][0], partner[a][1]) for a in u.label if a in partner]
                    rec({**chosen, j: u}, rest + extra)

        rec({i: t}, [(partner[a][0], partner[a][1]) for a in t.label if a in partner])
        return out

    def steps(state):
        found = {}
        for i in range(len(sites)):
            for t in autos[i].outgoing[state[i]]:
                for chosen in closures(state, i, t):
                    key = tuple(sorted((k, chosen[k].sort_key()) for k in chosen))
                    found.setdefault(key, chosen)
        result = []
        for key in sorted(found):
            chosen = found[key]
            lab = set()
            for k, u in chosen.items():
                for a in u.label:
                    lab.add(partner[a][2] if a in partner else a)
            nxt = list(state)
            for k, u in chosen.items():
                nxt[k] = u.target
            cls, rank = step_class([(levels[k], chosen[k]) for k in chosen])
            result.append((cls, rank, (frozenset(lab), tuple(nxt))))
        return prune_urgent(result) if urgency else result

    init = tuple(a.initial for a in autos)
    ids = {init: "g0"}
    todo = deque([init])
    ts = set()
    while todo:
        s = todo.popleft()
        for _, _, (lab, nxt) in steps(s):
            if nxt not in ids:
                if len(ids) >= max_states:
                    raise StateExplosion(f"more than {max_states} global states")
                ids[nxt] = f"g{len(ids)}"
                todo.append(nxt)
            ts.add(Transition(ids[s], lab, ids[nxt]))
    alphabet = frozenset(a for t in ts for a in t.label)
    aca = ACA(frozenset(ids.values()), alphabet, frozenset(ts), "g0")
    return NetworkGraph(aca, net, obs, block_mode)


# ---------------------------------------------------------------------------
# cycles and observable traces


def cycle_unions(aca, observe=None, max_items=10**6):
    """Port sets blocked per cycle, over all paths of ``aca``.

    A cycle opens with the first block and closes once every blocked port
    has unblocked; its union is reported through ``observe`` (port ->
    collection of names; identity by default).  Returns the set of unions
    and, per union, one witness label sequence.
    """
    observe = observe or (lambda p: (p,))
    start = (aca.initial, frozenset(), frozenset())
    seen = {start: ()}
    todo = deque([start])
    found = {}
    while todo:
        key = todo.popleft()
        s, open_, union = key
        path = seen[key]
        for t in aca.outgoing[s]:
            blocks = {a.port for a in t.label if a.kind == am.BLOCK}
            unblocks = {a.port for a in t.label if a.kind == am.UNBLOCK}
            o = (open_ | blocks) - unblocks
            u = union | blocks
            step = path + (t.label,) if (blocks or unblocks) else path
            if not o and u:
                names = frozenset(n for p in u for n in observe(p))
                found.setdefault(names, step)
                nk = (t.target, frozenset(), frozenset())
                step = ()
            else:
                nk = (t.target, frozenset(o), frozenset(u))
            if nk not in seen:
                if len(seen) >= max_items:
                    raise StateExplosion("cycle search exceeded its bound")
                seen[nk] = step
                todo.append(nk)
    return found


def _time_abstract(a):
    return a.base if isinstance(a, (am.TimedACA, ACA)) else a.aca


def observable_traces(a, bound=None):
    """Observable traces of ``a``: hide everything except block/unblock
    actions in the time abstraction, then list the ∅-abstracted traces with
    at most ``bound`` observable steps.  Without observable actions only the
    empty trace remains."""
    base = a.aca if isinstance(a, NetworkGraph) else a.base
    k = {x for x in base.alphabet if x.kind not in (am.BLOCK, am.UNBLOCK)}
    h = am.hide(base, k)
    if bound is None:
        bound = 4
    if bound < 0:
        raise ValueError("bound must be non-negative")
    empty = am.SymbolicTrace((), h.initial, h.initial)
    out = {empty}
    closure = {}

    def silent(s):
        if s not in closure:
            seen, stack = {s}, [s]
            while stack:
                x = stack.pop()
                for t in h.outgoing[x]:
                    if not t.label and t.target not in seen:
                        seen.add(t.target)
                        stack.append(t.target)
            closure[s] = seen
        return closure[s]

    frontier = {((), h.initial)}
    visited = set(frontier)
    for _ in range(bound):
        nxt = set()
        for steps, s in frontier:
            for x in silent(s):
                for t in h.outgoing[x]:
                    if t.label:
                        item = (steps + (t.label,), t.target)
                        if item not in visited:
                            visited.add(item)
                            nxt.add(item)
        for steps, s in nxt:
            out.add(am.SymbolicTrace(steps, h.initial, s))
        frontier = nxt
    # traces that end in different states are the same observable trace
    return {am.SymbolicTrace(t.steps, h.initial, "") for t in out}


# ---------------------------------------------------------------------------
# per-primitive refinement


def primitive_cases():
    """``(kind, variant)`` pairs covered by the refinement suite."""
    out = []
    for kind in TEMPLATE_KINDS:
        for v in VARIANTS.get(kind, (None,)):
            out.append((kind, v))
    return out


def template_refinement(t, taca=None):
    taca = taca or t.taca
    k = {a for a in taca.alphabet if a.kind not in (am.BLOCK, am.UNBLOCK)}
    concrete = am.hide(taca.base, k)
    if concrete.alphabet != t.pb_aca.alphabet:
        return am.BisimResult(False, [], (am.format_label(concrete.alphabet ^ t.pb_aca.alphabet),))
    return am.weak_bisimilar(concrete, t.pb_aca)


def check_primitive_refinement(kind, variant=None, template=None):
    """Time-abstracted template with messages hidden against the lifted
    primitive CA, by weak bisimulation.  ``template`` overrides the built-in
    automaton (used for mutation tests)."""
    t = handshake_template(kind, variant=variant)
    taca = template if template is not None else t.taca
    r = template_refinement(t, taca)
    rep = VerificationReport(f"{kind}" + (f"/{variant}" if variant else ""))
    if r:
        witness = [sorted(c) for c in r.classes
                   if any(x == "R:" + t.pb_aca.initial for x in c)]
        rep.add("weak_bisimilar", True, {"initial_class": witness})
    else:
        rep.add("weak_bisimilar", False,
                {"distinguishing": [am.format_label(lab) for lab in r.counterexample]})
    rep.coverage = 1.0 if r else 0.0
    return rep


def mutants(taca):
    """Copies of ``taca`` with one transition removed, in a fixed order."""
    for t in sorted(taca.transitions, key=am.TimedTransition.sort_key):
        yield t, am.TimedACA(taca.states, taca.alphabet, taca.transitions - {t}, taca.initial,
                             taca.clocks, taca.invariance)


# ---------------------------------------------------------------------------
# region-level check


def _reference_sets(region):
    ref = circuit_reference_semantics(region, hide_internal=False)
    sets = {frozenset(a.port for a in t.label) for t in ref.ca.transitions if t.label}
    return ref, sets


def _fmt_sets(sets):
    return sorted(",".join(sorted(s)) for s in sets)


def check_correct_implementation(region, source="symbolic", bound=None, block_mode="sync",
                                 max_states=200000, scenarios=None):
    """Decide whether the handshake implementation of ``region`` is correct.

    ``source`` is ``"symbolic"`` (explore the composed handshake), a
    :class:`NetworkGraph`, ``"dynamic"`` (exhaustive simulation over
    ``scenarios``, by default every subset of boundary requests) or an
    iterable of execution traces.  Both directions of the union check are
    reported.  ``bound`` limits the cycles branched on in dynamic mode; the
    symbolic search is exhaustive.
    """
    region = desugar(region)
    ref, sets = _reference_sets(region)
    rep = VerificationReport(region.name)
    if source == "symbolic" or isinstance(source, NetworkGraph):
        g = source if isinstance(source, NetworkGraph) else explore_network(
            build_network(region), block_mode, max_states=max_states)
        hidden = set(region_hidden(region))
        found = cycle_unions(g.aca, lambda p: [n for n in g.observation[p] if n not in hidden])
        observed = {s for s in found if s}
        _union_checks(rep, sets, observed, found)
        rep.flags.append(f"mode=symbolic block_mode={g.block_mode} states={len(g.aca.states)}")
        return rep
    from . import sim
    if source == "dynamic":
        traces_by_scenario = sim.dynamic_runs(region, scenarios, bound=bound)
    elif isinstance(source, str):
        raise ValueError(f"unknown source {source!r}")
    else:
        traces_by_scenario = [(None, list(source))]
    observed, realized_ok, missing = set(), True, []
    for scenario, traces in traces_by_scenario:
        got = set()
        for tr in traces:
            for s in sim.committed_node_sets(tr, region):
                got.add(s)
        observed |= got
        if scenario is not None:
            need = {s for s in sets if sim.enabled_by(s, scenario, region)}
            miss = need - got
            if miss:
                realized_ok = False
                missing.append({"scenario": scenario.label(), "missing": _fmt_sets(miss)})
    spurious = observed - sets
    if traces_by_scenario and traces_by_scenario[0][0] is None:
        miss = sets - observed
        realized_ok = not miss
        if miss:
            missing.append({"missing": _fmt_sets(miss)})
    rep.add("direction1_realized", realized_ok, missing or _fmt_sets(observed & sets))
    rep.add("direction2_sound", not spurious, _fmt_sets(spurious) if spurious else None)
    rep.coverage = len(observed & sets) / len(sets) if sets else 1.0
    rep.flags.append(f"mode=dynamic scenarios={len(traces_by_scenario)}")
    return rep


def region_hidden(region):
    return [n.id for n in desugar(region).nodes if n.hidden]


def _union_checks(rep, sets, observed, witnesses):
    miss = sets - observed
    spurious = observed - sets
    rep.add("direction1_realized", not miss,
            {"missing": _fmt_sets(miss)} if miss else
            {",".join(sorted(s)): [am.format_label(x) for x in witnesses[s]] for s in sets})
    rep.add("direction2_sound", not spurious,
            {"spurious": _fmt_sets(spurious)} if spurious else None)
    rep.coverage = len(observed & sets) / len(sets) if sets else 1.0


def composition_renaming(comp):
    """Hidden message actions and block/unblock renaming of a composition."""
    hidden = set(comp.network.hidden_nodes)
    k, r = set(), {}
    for a in comp.taca.alphabet:
        if a.kind in (am.BLOCK, am.UNBLOCK):
            r[a] = frozenset(Action(n, a.kind) for n in comp.observation[a.port] if n not in hidden)
        else:
            k.add(a)
    return k, r


def check_region_refinement(region, block_mode="sync", max_states=200000):
    """``is_action_refinement`` of the time-abstracted composed handshake
    against the region's port-blocking reference (internal nodes visible)."""
    from .handshake import compose_network
    region = desugar(region)
    comp = compose_network(build_network(region), block_mode, max_states)
    ref = circuit_reference_semantics(region, hide_internal=False)
    k, r = composition_renaming(comp)
    res = am.refinement_check(comp.taca, ref.pb_aca, k, r)
    rep = VerificationReport(region.name)
    rep.add("action_refinement", bool(res), None if res else
            {"distinguishing": [am.format_label(x) if isinstance(x, frozenset) else str(x)
                                for x in res.counterexample]})
    rep.flags.append(f"block_mode={block_mode} states={len(comp.taca.states)}")
    return rep
