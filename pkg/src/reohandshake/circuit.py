"""Reo circuit model, a line-oriented text format, desugaring and region analysis.

Grammar (``#`` starts a comment, statements end with ``;``)::

    document  := { statement ";" }
    statement := "node" ID KIND { FLAG }
               | CHKIND [ ID ":" ] end "->" end [ "delay" INT ] { FLAG }
    end       := ID [ "." ( "in" | "out" ) INT ]
    FLAG      := "hidden"

An end without a port picks the next free output (left of ``->``) or input
(right of ``->``).  Drains have two source ends, so both of their ends are
output ports.  Omitted delays default to 1.
"""

from dataclasses import dataclass, field, replace
import json
import re

from .errors import ArityError, DanglingPort, RegionTooLarge, ReoSyntaxError

NODE_KINDS = ("source", "sink", "mixed", "merge", "replicate", "route", "join")
CHANNEL_KINDS = ("sync", "lossy_sync_ctx", "lossy_sync_nd", "fifo", "sync_drain",
                 "async_drain", "filter", "transform")
CHANNEL_ALIASES = {
    "syncdrain": "sync_drain", "asyncdrain": "async_drain",
    "lossysync": "lossy_sync_nd", "lossy": "lossy_sync_nd",
    "lossy_ctx": "lossy_sync_ctx", "lossy_nd": "lossy_sync_nd", "fifo1": "fifo",
}
DRAINS = ("sync_drain", "async_drain")
DEFAULT_DELAY = 1


@dataclass(frozen=True, order=True)
class PortRef:
    """A node port: ``direction`` is ``in`` or ``out``; index is 1-based."""

    node: str
    direction: str
    index: int

    @property
    def name(self):
        return f"{self.node}_{self.direction}{self.index}"

    def __str__(self):
        return f"{self.node}.{self.direction}{self.index}"


def env_port(node_id):
    return f"{node_id}_env"


@dataclass(frozen=True, order=True)
class Node:
    id: str
    kind: str
    n_in: int = 0
    n_out: int = 0
    hidden: bool = False

    @property
    def in_ports(self):
        return [f"{self.id}_in{k}" for k in range(1, self.n_in + 1)]

    @property
    def out_ports(self):
        return [f"{self.id}_out{k}" for k in range(1, self.n_out + 1)]

    @property
    def is_source(self):
        """Source boundary: no input channel, fed by the environment."""
        return self.n_in == 0

    @property
    def is_sink(self):
        """Sink boundary: no output channel, drained by the environment."""
        return self.n_out == 0

    @property
    def inputs(self):
        """Input ports including the environment port of a source boundary."""
        return [env_port(self.id)] if self.is_source else self.in_ports

    @property
    def outputs(self):
        return [env_port(self.id)] if self.is_sink else self.out_ports

    @property
    def ports(self):
        out = self.in_ports + self.out_ports
        if self.is_source or self.is_sink:
            out.append(env_port(self.id))
        return out

    @property
    def behaviour(self):
        """How inputs and outputs combine: merge, replicate, route or join."""
        if self.kind in ("merge", "route", "join", "replicate"):
            return self.kind
        if self.kind == "sink":
            return "merge"
        return "replicate"


@dataclass(frozen=True, order=True)
class Channel:
    id: str
    kind: str
    a: PortRef
    b: PortRef
    delay: int = DEFAULT_DELAY
    hidden: bool = False

    @property
    def ends(self):
        return (self.a, self.b)

    @property
    def is_drain(self):
        return self.kind in DRAINS


@dataclass(frozen=True)
class Circuit:
    nodes: tuple
    channels: tuple
    name: str = "circuit"
    cut_ports: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "cut_ports", frozenset(self.cut_ports))

    def node(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def node_ids(self):
        return [n.id for n in self.nodes]

    @property
    def boundary(self):
        """Partition of the visible nodes into source, sink and internal."""
        src = sorted(n.id for n in self.nodes if n.is_source and not n.hidden)
        snk = sorted(n.id for n in self.nodes if n.is_sink and not n.hidden and not n.is_source)
        rest = sorted(n.id for n in self.nodes
                      if not n.hidden and n.id not in src and n.id not in snk)
        return {"source": src, "sink": snk, "internal": rest}

    def port_owner(self):
        """Map each port name to its node id."""
        out = {}
        for n in self.nodes:
            for p in n.ports:
                out[p] = n.id
        return out

    def channel_at(self):
        """Map each attached port name to ``(channel, end index)``."""
        out = {}
        for c in self.channels:
            for i, e in enumerate(c.ends):
                out[e.name] = (c, i)
        return out

    def __str__(self):
        return print_circuit(self)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"\s*(?:(#[^\n]*)|(->)|([A-Za-z_][A-Za-z0-9_]*)|(\d+)|([.;:])|(\S))")


def _tokens(text):
    """Yield ``(kind, value, line, column)``; kinds: id, int, sym."""
    line_starts = [0]
    for m in re.finditer(r"\n", text):
        line_starts.append(m.end())

    def pos(i):
        lo, hi = 0, len(line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if line_starts[mid] <= i:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, i - line_starts[lo] + 1

    i = 0
    while i < len(text):
        m = _TOKEN.match(text, i)
        if not m or m.end() == i:
            break
        i = m.end()
        comment, arrow, ident, num, sym, bad = m.groups()
        start = m.start(m.lastindex) if m.lastindex else i
        ln, col = pos(start)
        if comment:
            continue
        if bad:
            raise ReoSyntaxError(f"unexpected character {bad!r}", ln, col)
        if arrow:
            yield ("sym", "->", ln, col)
        elif ident:
            yield ("id", ident, ln, col)
        elif num:
            yield ("int", int(num), ln, col)
        elif sym:
            yield ("sym", sym, ln, col)
    ln, col = pos(len(text))
    yield ("eof", None, ln, col)


class _Parser:
    def __init__(self, text):
        self.toks = list(_tokens(text))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind, value=None, what=None):
        t = self.next()
        if t[0] != kind or (value is not None and t[1] != value):
            want = what or (repr(value) if value is not None else kind)
            got = "end of input" if t[0] == "eof" else repr(t[1])
            raise ReoSyntaxError(f"expected {want}, found {got}", t[2], t[3])
        return t

    def at(self, kind, value=None):
        t = self.peek()
        return t[0] == kind and (value is None or t[1] == value)


_PORT = re.compile(r"^(in|out)(\d+)$")


def parse_circuit(text, name="circuit"):
    """Parse circuit text into a validated :class:`Circuit`."""
    p = _Parser(text)
    nodes = {}
    node_pos = {}
    raw_channels = []
    while not p.at("eof"):
        kw = p.expect("id", what="a statement")
        if kw[1] == "node":
            nid = p.expect("id", what="a node identifier")
            kind = p.expect("id", what="a node kind")
            if kind[1] not in NODE_KINDS:
                raise ReoSyntaxError(f"unknown node kind {kind[1]!r}", kind[2], kind[3])
            hidden = _flags(p)
            if nid[1] in nodes:
                raise ReoSyntaxError(f"node {nid[1]} declared twice", nid[2], nid[3])
            nodes[nid[1]] = (kind[1], hidden)
            node_pos[nid[1]] = (nid[2], nid[3])
        else:
            kind = CHANNEL_ALIASES.get(kw[1], kw[1])
            if kind not in CHANNEL_KINDS:
                raise ReoSyntaxError(f"unknown statement or channel kind {kw[1]!r}", kw[2], kw[3])
            cid = None
            if p.at("id") and p.toks[p.i + 1][0] == "sym" and p.toks[p.i + 1][1] == ":":
                cid = p.next()[1]
                p.next()
            a = _end(p)
            p.expect("sym", "->", "'->'")
            b = _end(p)
            delay = DEFAULT_DELAY
            if p.at("id", "delay"):
                p.next()
                delay = p.expect("int", what="a delay")[1]
            hidden = _flags(p)
            raw_channels.append((kind, cid, a, b, delay, hidden, kw[2], kw[3]))
        p.expect("sym", ";", "';'")
    return _assemble(nodes, raw_channels, name)


def _flags(p):
    hidden = False
    while p.at("id", "hidden"):
        p.next()
        hidden = True
    return hidden


def _end(p):
    nid = p.expect("id", what="a node identifier")
    port = None
    if p.at("sym", "."):
        p.next()
        t = p.expect("id", what="a port such as out1")
        m = _PORT.match(t[1])
        if not m or int(m.group(2)) < 1:
            raise ReoSyntaxError(f"bad port name {t[1]!r}", t[2], t[3])
        port = (m.group(1), int(m.group(2)))
    return (nid[1], port, nid[2], nid[3])


def _assemble(nodes, raw_channels, name):
    used = {}
    channels = []
    taken = set()
    explicit = {c[1] for c in raw_channels if c[1]}
    counter = 0
    for kind, cid, a, b, delay, hidden, ln, col in raw_channels:
        if cid is None:
            counter += 1
            while f"c{counter}" in explicit:
                counter += 1
            cid = f"c{counter}"
        if cid in taken:
            raise ReoSyntaxError(f"channel {cid} declared twice", ln, col)
        taken.add(cid)
        dirs = ("out", "out") if kind in DRAINS else ("out", "in")
        refs = []
        for (nid, port, eln, ecol), want in zip((a, b), dirs):
            if nid not in nodes:
                raise DanglingPort(f"channel {cid} refers to undeclared node {nid} "
                                   f"(line {eln}, column {ecol})")
            if port is None:
                k = 1
                while (nid, want, k) in used:
                    k += 1
                port = (want, k)
            if port[0] != want:
                raise ArityError(f"channel {cid} ({kind}) needs an {want} port at {nid}, "
                                 f"got {port[0]}{port[1]}")
            ref = PortRef(nid, port[0], port[1])
            if (nid, port[0], port[1]) in used:
                raise ArityError(f"port {ref} attached twice")
            used[(nid, port[0], port[1])] = cid
            refs.append(ref)
        channels.append(Channel(cid, kind, refs[0], refs[1], delay, hidden))
    built = []
    for nid, (kind, hidden) in nodes.items():
        counts = {}
        for d in ("in", "out"):
            idx = sorted(k for (n, dd, k) in used if n == nid and dd == d)
            if idx != list(range(1, len(idx) + 1)):
                missing = next(k for k in range(1, len(idx) + 2) if k not in idx)
                raise DanglingPort(f"node {nid} has no channel on port {d}{missing}")
            counts[d] = len(idx)
        built.append(Node(nid, kind, counts["in"], counts["out"], hidden))
    c = Circuit(tuple(sorted(built)), tuple(channels), name)
    validate(c)
    return c


def validate(c):
    """Check node kinds against their degrees; raise :class:`ArityError`."""
    for n in c.nodes:
        i, o = n.n_in, n.n_out
        ok = {
            "source": i == 0 and o >= 1,
            "sink": i >= 1 and o == 0,
            "mixed": i == 1 and o == 1,
            "merge": i >= 2 and o <= 1,
            "join": i >= 2 and o <= 1,
            "replicate": i <= 1 and o >= 2,
            "route": i <= 1 and o >= 2,
        }[n.kind]
        if not ok:
            raise ArityError(f"node {n.id} of kind {n.kind} cannot have {i} inputs and {o} outputs")
    attached = set()
    for ch in c.channels:
        for e in ch.ends:
            if e.name in attached:
                raise ArityError(f"port {e} attached twice")
            attached.add(e.name)
            try:
                n = c.node(e.node)
            except KeyError:
                raise DanglingPort(f"channel {ch.id} refers to undeclared node {e.node}") from None
            limit = n.n_in if e.direction == "in" else n.n_out
            if not 1 <= e.index <= limit:
                raise DanglingPort(f"channel {ch.id} uses missing port {e}")
    for n in c.nodes:
        for p in n.in_ports + n.out_ports:
            if p not in attached and p not in c.cut_ports:
                raise DanglingPort(f"port {p} of node {n.id} is not attached")


def print_circuit(c):
    """Render a circuit in the text format; parsing the result gives ``c`` back."""
    lines = [f"# {c.name}"]
    for n in sorted(c.nodes):
        lines.append(f"node {n.id} {n.kind}" + (" hidden" if n.hidden else "") + ";")
    for ch in c.channels:
        lines.append(f"{ch.kind} {ch.id}: {ch.a} -> {ch.b} delay {ch.delay}"
                     + (" hidden" if ch.hidden else "") + ";")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# desugaring


def desugar(c):
    """Rewrite drains, non-deterministic LossySync and Filter into nodes and syncs.

    * sync_drain: a hidden join node fed by two syncs;
    * async_drain: a hidden merge node fed by two syncs;
    * lossy_sync_nd and filter: a hidden router passing data on or into a
      hidden sink.

    Auxiliary nodes and channels are flagged hidden.  The result contains none
    of the rewritten kinds, so the operation is idempotent.
    """
    nodes = list(c.nodes)
    channels = []
    for ch in c.channels:
        d = ch.delay
        if ch.kind in DRAINS:
            aux = f"{ch.id}_{'j' if ch.kind == 'sync_drain' else 'm'}"
            nodes.append(Node(aux, "join" if ch.kind == "sync_drain" else "merge", 2, 0, True))
            channels.append(Channel(f"{ch.id}_a", "sync", ch.a, PortRef(aux, "in", 1), d, True))
            channels.append(Channel(f"{ch.id}_b", "sync", ch.b, PortRef(aux, "in", 2), d, True))
        elif ch.kind in ("lossy_sync_nd", "filter"):
            r, t = f"{ch.id}_r", f"{ch.id}_tau"
            nodes.append(Node(r, "route", 1, 2, True))
            nodes.append(Node(t, "sink", 1, 0, True))
            channels.append(Channel(f"{ch.id}_a", "sync", ch.a, PortRef(r, "in", 1), d, True))
            channels.append(Channel(f"{ch.id}_b", "sync", PortRef(r, "out", 1), ch.b, 0, True))
            channels.append(Channel(f"{ch.id}_t", "sync", PortRef(r, "out", 2),
                                    PortRef(t, "in", 1), 0, True))
        else:
            channels.append(ch)
    return Circuit(tuple(sorted(nodes)), tuple(channels), c.name, c.cut_ports)


# ---------------------------------------------------------------------------
# regions


def synchronous_regions(c):
    """Split at FIFO channels into sub-circuits, ordered by smallest node id.

    The ports of a cut FIFO are recorded in each sub-circuit's ``cut_ports``;
    there they act as boundary ports.
    """
    parent = {n.id: n.id for n in c.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for ch in c.channels:
        if ch.kind != "fifo":
            ra, rb = find(ch.a.node), find(ch.b.node)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for n in c.nodes:
        groups.setdefault(find(n.id), []).append(n)
    regions = []
    for root in sorted(groups):
        members = {n.id for n in groups[root]}
        chans = tuple(ch for ch in c.channels if ch.kind != "fifo" and ch.a.node in members)
        cut = {e.name for ch in c.channels if ch.kind == "fifo" for e in ch.ends
               if e.node in members}
        regions.append(Circuit(tuple(sorted(groups[root])), chans,
                               f"{c.name}[{root}]", frozenset(cut) | (c.cut_ports & _all_ports(groups[root]))))
    return regions


def _all_ports(nodes):
    return {p for n in nodes for p in n.ports}


@dataclass(frozen=True)
class PathLength:
    hops: int
    delay: int


def longest_path(region, max_nodes=24):
    """Longest simple path of the undirected circuit graph, by hops and by delay.

    Exact depth-first search; parallel channels count once with their largest
    delay.  Raises :class:`RegionTooLarge` above ``max_nodes`` nodes.
    """
    if len(region.nodes) > max_nodes:
        raise RegionTooLarge(f"{len(region.nodes)} nodes exceed the bound of {max_nodes}")
    adj = {n.id: {} for n in region.nodes}
    for ch in region.channels:
        x, y = ch.a.node, ch.b.node
        if x == y:
            continue
        w = max(adj[x].get(y, 0), ch.delay)
        adj[x][y] = w
        adj[y][x] = w
    ids = sorted(adj)
    index = {v: i for i, v in enumerate(ids)}
    best = [0, 0]

    def dfs(v, visited, hops, delay):
        if hops > best[0]:
            best[0] = hops
        if delay > best[1]:
            best[1] = delay
        for w, d in adj[v].items():
            bit = 1 << index[w]
            if not visited & bit:
                dfs(w, visited | bit, hops + 1, delay + d)

    for v in ids:
        dfs(v, 1 << index[v], 0, 0)
    return PathLength(best[0], best[1])


# ---------------------------------------------------------------------------
# export


def to_dict(c):
    return {
        "name": c.name,
        "nodes": [{"id": n.id, "kind": n.kind, "n_in": n.n_in, "n_out": n.n_out,
                   "hidden": n.hidden} for n in c.nodes],
        "channels": [{"id": ch.id, "kind": ch.kind, "a": str(ch.a), "b": str(ch.b),
                      "delay": ch.delay, "hidden": ch.hidden} for ch in c.channels],
        "boundary": c.boundary,
        "cut_ports": sorted(c.cut_ports),
    }


def _ref(text):
    node, port = text.split(".")
    m = _PORT.match(port)
    return PortRef(node, m.group(1), int(m.group(2)))


def from_dict(d):
    nodes = tuple(Node(n["id"], n["kind"], n["n_in"], n["n_out"], n.get("hidden", False))
                  for n in d["nodes"])
    chans = tuple(Channel(ch["id"], ch["kind"], _ref(ch["a"]), _ref(ch["b"]),
                          ch.get("delay", DEFAULT_DELAY), ch.get("hidden", False))
                  for ch in d["channels"])
    c = Circuit(tuple(sorted(nodes)), chans, d.get("name", "circuit"),
                frozenset(d.get("cut_ports", ())))
    validate(c)
    return c


def to_json(c):
    return json.dumps(to_dict(c), indent=2, sort_keys=True)


def from_json(text):
    return from_dict(json.loads(text))


_EDGE_STYLE = {
    "sync": 'style=solid, arrowhead=normal',
    "lossy_sync_ctx": 'style=dashed, arrowhead=normal',
    "lossy_sync_nd": 'style=dashed, arrowhead=empty',
    "fifo": 'style=solid, arrowhead=normal, label="[ ]"',
    "sync_drain": 'style=solid, dir=both, arrowhead=inv, arrowtail=inv',
    "async_drain": 'style=dotted, dir=both, arrowhead=inv, arrowtail=inv',
    "filter": 'style=solid, arrowhead=normal, label="filter"',
    "transform": 'style=solid, arrowhead=normal, label="transform"',
}


def to_dot(c):
    lines = [f'graph "{c.name}" {{', "  rankdir=LR;"]
    shapes = {"source": "circle", "sink": "doublecircle"}
    for n in sorted(c.nodes):
        style = ', style=dotted' if n.hidden else ''
        lines.append(f'  "{n.id}" [shape={shapes.get(n.kind, "point")}, xlabel="{n.id}:{n.kind}"{style}];')
    for ch in c.channels:
        lines.append(f'  "{ch.a.node}" -- "{ch.b.node}" [{_EDGE_STYLE[ch.kind]}, tooltip="{ch.id}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# bundled examples


def builtin_text(name):
    """Text of a bundled circuit (``fig1``, ``fig2``, ``chain`` ...)."""
    from importlib import resources
    return resources.files("reohandshake").joinpath("circuits", f"{name}.reo").read_text()


def builtin(name):
    return parse_circuit(builtin_text(name), name)


def builtin_names():
    from importlib import resources
    base = resources.files("reohandshake").joinpath("circuits")
    return sorted(p.name[:-4] for p in base.iterdir() if p.name.endswith(".reo"))


def with_delays(c, delay):
    """Copy of ``c`` with every channel delay replaced (``delay`` may be a dict by id)."""
    chans = tuple(replace(ch, delay=delay.get(ch.id, ch.delay) if isinstance(delay, dict) else delay)
                  for ch in c.channels)
    return Circuit(c.nodes, chans, c.name, c.cut_ports)
