"""Discrete-event execution of the distributed handshake.

Every node and channel site runs its template as a local machine.  Messages
travel over joints with the channel delay; a transition fires as soon as the
messages it receives are in the site's inbox (sends never wait), timeouts fire
at the first integer instant past their bound, and choices between enabled
transitions are resolved by a counter-based PRNG keyed by
``(seed, site, cycle, index)`` or, in exhaustive mode, by a replayed prefix.

Timing.  Each timeout edge carries the class of its waiting state.  With
``T`` the region timeout and ``W = 3T/2``: at downstream depth ``L`` a
collection window lasts ``W * (1 + L)`` and the wait for the final read after
a definite write ``PATIENCE * T * (1 + L)``, so an upstream site outlasts
everything below it.  A confirmation wait lasts ``T + W * (1 + U)`` with
``U`` the deepest level above the site, so it outlasts every window that may
still delay the write it waits for.  A commit is held for ``T``.  Messages carry the
session of the initiating site, replies echo it, and a write or may_write is
only accepted while its sender is still waiting for the answer.
"""

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations

from . import automata as am
from .circuit import builtin, builtin_names, desugar, parse_circuit
from .errors import BranchExplosion, ScenarioError, StuckSite, UnbalancedBlocks
from .handshake import (CONFIRM, HOLD, SPONTANEOUS, WINDOW, build_network,
                        estimate_timeout)

PATIENCE = 4
PAYLOAD = {am.SEND_WRITE: "write", am.RECV_WRITE: "write", am.SEND_READ: "read",
           am.RECV_READ: "read", am.SEND_MAY_WRITE: "may_write", am.RECV_MAY_WRITE: "may_write"}
_ARRIVE = {am.SEND_WRITE: am.RECV_WRITE, am.SEND_MAY_WRITE: am.RECV_MAY_WRITE,
           am.SEND_READ: am.RECV_READ}
_KIND_ORDER = {k: i for i, k in enumerate(am.KINDS)}


@dataclass(frozen=True)
class Scenario:
    """One simulation run: boundary requests ``(node, "write" | "read", time)``."""

    circuit: object
    requests: tuple = ()
    timeout_value: int = None
    seed: int = 0
    mode: str = "random"
    horizon: int = None
    failures: tuple = ()          # (site id, cycle index of that site) halted in commit
    depth_bound: int = 4

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(sorted(tuple(r) for r in self.requests)))
        object.__setattr__(self, "failures", tuple(tuple(f) for f in self.failures))
        c = self.circuit
        if self.mode not in ("random", "exhaustive"):
            raise ScenarioError(f"mode must be random or exhaustive, got {self.mode!r}")
        b = c.boundary
        for node, kind, t in self.requests:
            if t < 0:
                raise ScenarioError(f"request at {node} has negative time {t}")
            if kind == "write" and node not in b["source"]:
                raise ScenarioError(f"write request at {node}, which is not a source boundary")
            if kind == "read" and node not in b["sink"]:
                raise ScenarioError(f"read request at {node}, which is not a sink boundary")
            if kind not in ("write", "read"):
                raise ScenarioError(f"unknown request kind {kind!r}")
        if self.timeout_value is not None and self.timeout_value <= 0:
            raise ScenarioError("timeout must be positive")
        if self.horizon is not None and self.timeout_value is not None \
                and self.horizon <= self.timeout_value:
            raise ScenarioError("horizon must exceed the timeout")

    @property
    def T(self):
        return self.timeout_value if self.timeout_value is not None else estimate_timeout(self.circuit)

    def label(self):
        reqs = " ".join(f"{n}:{k}@{t}" for n, k, t in self.requests) or "none"
        return f"{self.circuit.name}[{reqs}]"

    def replace(self, **kw):
        d = dict(circuit=self.circuit, requests=self.requests, timeout_value=self.timeout_value,
                 seed=self.seed, mode=self.mode, horizon=self.horizon, failures=self.failures,
                 depth_bound=self.depth_bound)
        d.update(kw)
        return Scenario(**d)


@dataclass(frozen=True)
class SimEvent:
    time: int
    site: str
    action: str
    payload: str = None

    def to_dict(self):
        return {"time": self.time, "site": self.site, "action": self.action,
                "payload": self.payload}


@dataclass(frozen=True)
class ExecutionTrace:
    events: tuple
    committed_sets: tuple        # (cycle index, frozenset of ports, (first block, last unblock))
    final_states: tuple = ()     # sorted (site, state)
    halted: tuple = ()           # sites halted by failure injection
    end_time: int = 0
    choices: tuple = ()
    joints: tuple = ()           # (up port, down port) pairs used to group blocks

    def to_jsonl(self):
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.events)

    def timeline(self):
        out = []
        for e in self.events:
            tail = f" ({e.payload})" if e.payload else ""
            out.append(f"{e.time:>8}  {e.site:<12} {e.action}{tail}")
        return "\n".join(out)

    def outcome(self):
        return tuple(frozenset(ports) for _, ports, _ in self.committed_sets)


# ---------------------------------------------------------------------------


def _prng(seed, site, cycle, index):
    h = hashlib.sha256(f"{seed}|{site}|{cycle}|{index}".encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


class _Sim:
    def __init__(self, scenario, prefix=(), cycle_bound=None):
        self.sc = scenario
        self.region = desugar(scenario.circuit)
        self.net = build_network(self.region, links_as_sites=False)
        self.T = scenario.T
        self.prefix = list(prefix)
        self.cycle_bound = cycle_bound
        self.choices = []           # (option index, number of options, branching allowed)
        self.events = []
        self.sites = {s.id: s for s in self.net.sites}
        self.order = sorted(self.sites)
        self.Ts = {sid: PATIENCE * self.T * (1 + s.level) for sid, s in self.sites.items()}
        # a window outlasts every window below it; a confirm outlasts the window above
        base = -(-3 * self.T // 2)
        self.window = {sid: base * (1 + s.level) for sid, s in self.sites.items()}
        ups = defaultdict(set)
        for j in self.net.joints:
            ups[self.net.port_site[j.down]].add(self.net.port_site[j.up])
        above = {}

        def top(sid, seen=()):
            if sid not in above:
                lv = [self.sites[u].level for u in ups[sid]]
                lv += [top(u, seen + (sid,)) for u in ups[sid] if u not in seen]
                above[sid] = max(lv, default=self.sites[sid].level)
            return above[sid]

        for sid in self.sites:
            top(sid)
        self.confirm = {sid: self.T + base * (1 + above[sid]) for sid in self.sites}
        self.horizon = scenario.horizon if scenario.horizon is not None else default_horizon(scenario)
        self.route = {}             # port -> (peer port, delay)
        for j in self.net.joints:
            self.route[j.up] = (j.down, j.delay)
            self.route[j.down] = (j.up, j.delay)
        self.port_site = self.net.port_site
        self.state = {sid: s.template.taca.initial for sid, s in self.sites.items()}
        self.reset = {sid: 0 for sid in self.sites}
        self.cycle = {sid: 0 for sid in self.sites}
        self.peer_sid = {sid: {} for sid in self.sites}    # port -> session of the partner
        self.inbox = {sid: defaultdict(list) for sid in self.sites}
        self.halted = set()
        self.fail = set(scenario.failures)
        self.pending = defaultdict(list)                    # node -> [(time, kind)]
        for node, kind, t in scenario.requests:
            self.pending[node].append((t, kind))
        self.queue = []             # (time, seq, dest site, port, kind, session, expiry)
        self.seq = 0
        self.complete_cycles = 0

    # -- helpers -----------------------------------------------------------
    def log(self, t, site, action, payload=None):
        self.events.append(SimEvent(t, site, action, payload))

    def request(self, node, kind, now):
        for t, k in self.pending[node]:
            if k == kind and t <= now:
                return True
        return False

    def consume_request(self, node, kind, now):
        for i, (t, k) in enumerate(self.pending[node]):
            if k == kind and t <= now:
                del self.pending[node][i]
                return

    def bound(self, sid, t):
        if HOLD in t.tags:
            return self.T
        if CONFIRM in t.tags:
            return self.confirm[sid]
        if WINDOW in t.tags:
            return self.window[sid]
        return self.Ts[sid]

    def deadline(self, sid):
        """When the current state of ``sid`` times out (``None`` without timeout)."""
        due = [self.reset[sid] + self.bound(sid, t) + 1
               for t in self.sites[sid].template.taca.outgoing[self.state[sid]] if t.is_timeout]
        return min(due) if due else None

    def message(self, sid, port, kind, now, take=False):
        """A valid message of ``kind`` at ``port``; invalid ones are dropped."""
        box = self.inbox[sid][port]
        for i, m in enumerate(list(box)):
            _, mkind, session, expiry = m
            if mkind != kind:
                continue
            ok = True
            if kind == am.RECV_READ:
                ok = session == (sid, self.cycle[sid])
            else:
                known = self.peer_sid[sid].get(port)
                if known is not None:
                    ok = session == known
                if expiry is not None and now >= expiry:
                    ok = False
            if not ok:
                box.remove(m)
                continue
            if take:
                box.remove(m)
                if kind != am.RECV_READ:
                    self.peer_sid[sid][port] = session
            return m
        return None

    def enabled(self, sid, now):
        """Enabled non-timeout transitions and the earliest timeout ``(due, transitions)``."""
        site = self.sites[sid]
        taca = site.template.taca
        node = site.node
        kind = site.template.kind
        ready, due = [], None
        for t in taca.outgoing[self.state[sid]]:
            if SPONTANEOUS in t.tags and not self.request(node, "write", now):
                continue
            if kind == "sink" and site.template.variant == "standard" and not t.is_timeout:
                accepting = self.request(node, "read", now)
                # the reader decides: accept when a read is pending, reject otherwise
                if not t.label and t.target == taca.initial and accepting:
                    continue
                if any(a.kind == am.SEND_READ for a in t.label) and not accepting:
                    continue
            recv = [a for a in t.label if a.kind in (am.RECV_WRITE, am.RECV_MAY_WRITE, am.RECV_READ)]
            if not all(self.message(sid, a.port, a.kind, now) for a in recv):
                continue
            if t.is_timeout:
                d = self.reset[sid] + self.bound(sid, t) + 1
                if due is None or d < due[0]:
                    due = (d, [t])
                elif d == due[0]:
                    due[1].append(t)
            else:
                ready.append(t)
        # maximal progress: never consume a strict subset of what could be consumed
        ready = [t for t in ready if not any(t.label < u.label for u in ready)]
        return ready, due

    def choose(self, sid, options):
        if len(options) == 1:
            return options[0]
        k = len(self.choices)
        branch = self.cycle_bound is None or self.complete_cycles < self.cycle_bound
        if self.sc.mode == "exhaustive":
            idx = self.prefix[k] if k < len(self.prefix) else 0
        else:
            idx = _prng(self.sc.seed, sid, self.cycle[sid], k).randrange(len(options))
        self.choices.append((idx, len(options) if branch else 1))
        return options[idx]

    def fire(self, sid, t, now):
        site = self.sites[sid]
        taca = site.template.taca
        ordered = sorted(t.label, key=lambda a: (_KIND_ORDER[a.kind], a.port))
        if t.is_timeout:
            self.log(now, sid, "timeout", None)
        for a in ordered:
            if a.kind in (am.RECV_WRITE, am.RECV_MAY_WRITE, am.RECV_READ):
                self.message(sid, a.port, a.kind, now, take=True)
                self.log(now, sid, str(a), PAYLOAD[a.kind])
        session = (sid, self.cycle[sid])
        replies = {a.port: self.peer_sid[sid].get(a.port) for a in ordered
                   if a.kind == am.SEND_READ}
        if t.resets:
            self.reset[sid] = now
        self.state[sid] = t.target
        expiry = self.deadline(sid)
        for a in ordered:
            if a.kind in _ARRIVE:
                peer, delay = self.route[a.port]
                if a.kind == am.SEND_READ:
                    msg = (replies[a.port], None)
                else:
                    msg = (session, expiry)
                self.seq += 1
                self.queue.append((now + delay, self.seq, self.port_site[peer], peer,
                                   _ARRIVE[a.kind]) + msg)
                self.log(now, sid, str(a), PAYLOAD[a.kind])
            elif a.kind in (am.BLOCK, am.UNBLOCK):
                self.log(now, sid, str(a), None)
        if any(a.kind == am.BLOCK for a in t.label):
            # a commit serves the boundary request of this site
            if site.template.kind == "source":
                self.consume_request(site.node, "write", now)
            elif site.template.kind == "sink":
                self.consume_request(site.node, "read", now)
        if t.target == taca.initial:
            self.end_cycle(sid)
        elif any(a.kind == am.BLOCK for a in t.label) and (sid, self.cycle[sid]) in self.fail:
            self.halted.add(sid)
            self.log(now, sid, "halt", None)

    def end_cycle(self, sid):
        mine = set(self.peer_sid[sid].values())
        for port, box in self.inbox[sid].items():
            box[:] = [m for m in box if m[2] not in mine and m[2] != (sid, self.cycle[sid])]
        self.cycle[sid] += 1
        self.peer_sid[sid] = {}

    def deliver(self, now):
        due = sorted(m for m in self.queue if m[0] == now)
        self.queue = [m for m in self.queue if m[0] != now]
        for _, _, dest, port, kind, session, expiry in due:
            if dest in self.halted:
                continue
            self.inbox[dest][port].append((now, kind, session, expiry))

    def run(self):
        now = 0
        open_ports = {}
        while True:
            self.deliver(now)
            changed = True
            steps = 0
            while changed:
                changed = False
                self.deliver(now)
                for sid in self.order:
                    if sid in self.halted:
                        continue
                    ready, due = self.enabled(sid, now)
                    if ready:
                        t = self.choose(sid, ready)
                    elif due is not None and due[0] <= now:
                        t = self.choose(sid, due[1])
                    else:
                        if not self.sites[sid].template.taca.outgoing[self.state[sid]]:
                            raise StuckSite(f"site {sid} has no way out of {self.state[sid]}")
                        continue
                    self.fire(sid, t, now)
                    self._track(open_ports, t)
                    changed = True
                    steps += 1
                    if steps > 100000:
                        raise StuckSite(f"no progress of time at {now}")
            nxt = self.next_time(now)
            if nxt is None or nxt > self.horizon:
                break
            now = nxt
        return self.trace(now)

    def _track(self, open_ports, t):
        for a in t.label:
            if a.kind == am.BLOCK:
                open_ports[a.port] = True
            elif a.kind == am.UNBLOCK:
                open_ports.pop(a.port, None)
        if not open_ports and any(a.kind == am.UNBLOCK for a in t.label):
            self.complete_cycles += 1

    def next_time(self, now):
        cands = [m[0] for m in self.queue]
        for sid in self.order:
            if sid in self.halted:
                continue
            ready, due = self.enabled_future(sid)
            if due is not None:
                cands.append(due)
        cands += [t for node in self.pending for t, _ in self.pending[node] if t > now]
        cands = [c for c in cands if c > now]
        return min(cands) if cands else None

    def enabled_future(self, sid):
        taca = self.sites[sid].template.taca
        due = None
        for t in taca.outgoing[self.state[sid]]:
            if t.is_timeout:
                d = self.reset[sid] + self.bound(sid, t) + 1
                due = d if due is None else min(due, d)
        return None, due

    def trace(self, end):
        events = tuple(sorted(self.events, key=lambda e: (e.time,)))  # stable: firing order
        joints = tuple(sorted((j.up, j.down) for j in self.net.joints))
        sets = extract_cycles(events, self._halted_ports(), joints)
        return ExecutionTrace(events, tuple(sets), tuple(sorted(self.state.items())),
                              tuple(sorted(self.halted)), end, tuple(self.choices), joints)

    def _halted_ports(self):
        out = set()
        for sid in self.halted:
            out |= set(self.sites[sid].template.ports.values())
        return out


def default_horizon(scenario):
    """Time for every request to be served, plus slack, at the scaled timeouts."""
    region = desugar(scenario.circuit)
    net = build_network(region, links_as_sites=False)
    maxlevel = max((s.level for s in net.sites), default=0)
    t_max = PATIENCE * scenario.T * (1 + maxlevel)
    last = max((t for _, _, t in scenario.requests), default=0)
    return last + 4 * t_max * max(1, len(scenario.requests))


def extract_cycles(events, ignore=(), joints=()):
    """Transactions of the block/unblock events, in order of their first block.

    Ports blocked by one transition belong together, as do the two ports of a
    joint while both are blocked.  A transaction closes when all its ports
    have unblocked.  Ports in ``ignore`` (sites halted by failure injection)
    need not unblock.
    """
    ignore = set(ignore)
    peer = {}
    for a, b in joints:
        peer[a] = b
        peer[b] = a
    comps = []          # dicts: open, ports, first, last
    where = {}          # open port -> component
    done = []
    last_key = None
    for e in events:
        act = e.action
        if act.startswith("b"):
            port = act[1:]
            found = []
            if last_key == (e.site, e.time) and comps and comps[-1]["alive"]:
                found.append(comps[-1])
            if port in where:
                raise UnbalancedBlocks(f"{port} blocked twice at {e.time}")
            q = peer.get(port)
            if q in where:
                found.append(where[q])
            comp = {"open": set(), "ports": set(), "first": e.time, "last": None, "alive": True}
            for c in found:
                if c is comp or not c["alive"]:
                    continue
                comp["open"] |= c["open"]
                comp["ports"] |= c["ports"]
                comp["first"] = min(comp["first"], c["first"])
                c["alive"] = False
            comp["ports"].add(port)
            if port not in ignore:
                comp["open"].add(port)
            for x in comp["open"]:
                where[x] = comp
            if port in ignore:
                where[port] = comp
            comps.append(comp)
            last_key = (e.site, e.time)
        elif act.startswith("u"):
            port = act[1:]
            comp = where.pop(port, None)
            if comp is None or port not in comp["open"]:
                raise UnbalancedBlocks(f"unblock of {port} at {e.time} without a block")
            comp["open"].discard(port)
            if not comp["open"]:
                comp["alive"] = False
                comp["last"] = e.time
                for x in [x for x, c in where.items() if c is comp]:
                    del where[x]
                done.append(comp)
            last_key = None
        else:
            last_key = None
    for c in comps:
        if c["alive"]:
            if c["open"]:
                raise UnbalancedBlocks(f"ports {sorted(c['open'])} still blocked at the end of the run")
            done.append(c)
    done.sort(key=lambda c: (c["first"], sorted(c["ports"])))
    return [(i, frozenset(c["ports"]), (c["first"], c["last"])) for i, c in enumerate(done)]


def committed_sets(trace):
    """Port sets of the trace's transactions, recomputed from its events."""
    ports = set()
    halted = set(trace.halted)
    if halted:
        for e in trace.events:
            if e.site in halted and e.action.startswith("b"):
                ports.add(e.action[1:])
    return [s for _, s, _ in extract_cycles(trace.events, ports, trace.joints)]


def run_scenario(s):
    """Execute ``s`` once; random mode resolves choices with the seeded PRNG."""
    if s.mode not in ("random", "exhaustive"):
        raise ScenarioError(f"unknown mode {s.mode!r}")
    return _Sim(s.replace(mode="random")).run()


def explore_exhaustive(s, depth_bound=None, max_runs=5000):
    """Every outcome over all choice sequences, by depth-first prefix replay.

    Choices made after ``depth_bound`` complete cycles are not branched.
    Returns one trace per distinct committed-set outcome, in discovery order.
    """
    depth_bound = s.depth_bound if depth_bound is None else depth_bound
    s = s.replace(mode="exhaustive")
    prefix = []
    seen = {}
    runs = 0
    while True:
        runs += 1
        if runs > max_runs:
            raise BranchExplosion(f"more than {max_runs} runs for {s.label()}")
        sim = _Sim(s, prefix, depth_bound)
        tr = sim.run()
        seen.setdefault(tr.outcome(), tr)
        made = sim.choices
        k = len(made) - 1
        while k >= 0 and made[k][0] + 1 >= made[k][1]:
            k -= 1
        if k < 0:
            break
        prefix = [c[0] for c in made[:k]] + [made[k][0] + 1]
    return list(seen.values())


# ---------------------------------------------------------------------------
# node-level views used by the verifier


def observation(region):
    net = build_network(desugar(region), links_as_sites=False)
    return net.observation, set(net.hidden_nodes)


def committed_node_sets(trace, region, obs=None):
    obs = obs or observation(region)
    mapping, hidden = obs
    out = []
    for ports in committed_sets(trace):
        names = frozenset(mapping[p] for p in ports if mapping[p] not in hidden)
        if names:
            out.append(names)
    return out


def enabled_by(node_set, scenario, region):
    """Does ``scenario`` supply every boundary request the transition needs?"""
    b = desugar(region).boundary
    reqs = {(n, k) for n, k, _ in scenario.requests}
    for n in node_set:
        if n in b["source"] and (n, "write") not in reqs:
            return False
        if n in b["sink"] and (n, "read") not in reqs:
            return False
    return True


def request_family(region, timeout_value=None):
    """Scenarios for every subset of boundary requests, all arriving at 0."""
    b = desugar(region).boundary
    reqs = [(n, "write", 0) for n in b["source"]] + [(n, "read", 0) for n in b["sink"]]
    out = []
    for k in range(len(reqs) + 1):
        for sub in combinations(reqs, k):
            out.append(Scenario(region, sub, timeout_value, mode="exhaustive", depth_bound=1))
    return out


def dynamic_runs(region, scenarios=None, bound=None, max_runs=5000):
    scenarios = request_family(region) if scenarios is None else scenarios
    out = []
    for s in scenarios:
        out.append((s, explore_exhaustive(s, bound, max_runs)))
    return out


# ---------------------------------------------------------------------------
# scenario files


def load_circuit(ref, base=None):
    import os
    if ref in builtin_names():
        return builtin(ref)
    path = ref if base is None or os.path.isabs(ref) else os.path.join(base, ref)
    if not os.path.exists(path) and ref.endswith(".reo") and ref[:-4] in builtin_names():
        return builtin(ref[:-4])
    with open(path) as f:
        name = os.path.splitext(os.path.basename(path))[0]
        return parse_circuit(f.read(), name)


def parse_scenario(text, base=None):
    """Scenario from JSON or from ``key: value`` lines; requests are
    ``node kind time`` items separated by commas in the text form."""
    text = text.strip()
    if text.startswith("{"):
        d = json.loads(text)
    else:
        d = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ScenarioError(f"expected key: value, got {line!r}")
            k, v = (x.strip() for x in line.split(":", 1))
            if k == "requests":
                d[k] = [r.split() for r in v.split(",") if r.strip()]
            elif k == "failures":
                d[k] = [r.split() for r in v.split(",") if r.strip()]
            else:
                d[k] = v
    if "circuit" not in d:
        raise ScenarioError("scenario needs a circuit")
    try:
        reqs = [(str(n), str(k), int(t)) for n, k, t in d.get("requests", [])]
        fails = [(str(s), int(c)) for s, c in d.get("failures", [])]
        to = d.get("timeout")
        hz = d.get("horizon")
        return Scenario(load_circuit(str(d["circuit"]), base), reqs,
                        int(to) if to is not None else None, int(d.get("seed", 0)),
                        str(d.get("mode", "random")), int(hz) if hz is not None else None,
                        fails, int(d.get("depth_bound", 4)))
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
