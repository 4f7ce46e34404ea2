"""Command line front end.

Exit codes: 0 success, 1 domain error, 2 usage or syntax error, 3 failed
verification.  Every command is deterministic in its inputs and flags.
"""

import argparse
import json
import os
import sys

from . import automata as am
from . import circuit as cir
from . import handshake as hs
from . import sim
from . import verify as vf
from .errors import ReoError, ReoSyntaxError
from .semantics import circuit_reference_semantics

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# input helpers


def _read(path):
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None


def load_circuit(ref):
    """A bundled circuit name, a ``.reo`` file or a circuit JSON file."""
    if ref in cir.builtin_names():
        return cir.builtin(ref)
    base = os.path.basename(ref)
    if not os.path.exists(ref) and base.endswith(".reo") and base[:-4] in cir.builtin_names():
        return cir.builtin(base[:-4])
    text = _read(ref)
    name = os.path.splitext(base)[0]
    if text.lstrip().startswith("{"):
        try:
            return cir.from_json(text)
        except (KeyError, ValueError, AttributeError) as e:
            raise UsageError(f"{ref}: not a circuit JSON document ({e})") from None
    return cir.parse_circuit(text, name)


def load_scenario(path, args):
    s = sim.parse_scenario(_read(path), os.path.dirname(os.path.abspath(path)))
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.timeout is not None:
        kw["timeout_value"] = args.timeout
    elif args.c_factor is not None:
        kw["timeout_value"] = hs.estimate_timeout(cir.desugar(s.circuit), args.c_factor)
    return s.replace(**kw) if kw else s


def _single_region(c):
    regions = cir.synchronous_regions(c)
    if len(regions) != 1:
        raise UsageError(f"{c.name} has {len(regions)} synchronous regions; "
                         "pass one region at a time")
    return c


def _emit(args, text):
    if not text.endswith("\n"):
        text += "\n"
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def _automaton(args, a, name):
    return am.to_dot(a, name) if args.dot else am.to_json(a)


# ---------------------------------------------------------------------------
# commands


def cmd_parse(args):
    c = load_circuit(args.circuit)
    _emit(args, cir.to_dot(c) if args.dot else cir.to_json(c))
    return EXIT_OK


def cmd_semantics(args):
    c = load_circuit(args.circuit)
    sem = circuit_reference_semantics(c, hide_internal=args.hide_internal)
    a = sem.pb_aca if args.port_blocking else sem.ca
    _emit(args, _automaton(args, a, c.name))
    return EXIT_OK


def cmd_handshake(args):
    if args.template:
        t = hs.handshake_template(args.template, variant=args.variant)
        _emit(args, _automaton(args, t.taca, t.kind))
        return EXIT_OK
    if not args.circuit:
        raise UsageError("handshake needs a circuit or --template KIND")
    c = _single_region(load_circuit(args.circuit))
    if args.variant and args.variant not in ("standard", "always_accepting"):
        raise UsageError("for a circuit --variant selects the sink variant: "
                         "standard or always_accepting")
    comp = hs.compose_network(hs.build_network(cir.desugar(c), args.variant or "standard"),
                              args.block_mode, args.max_states)
    _emit(args, _automaton(args, comp.taca, c.name))
    return EXIT_OK


def _trace_summary(tr):
    return {
        "committed": [{"cycle": k, "ports": sorted(p), "window": list(w)}
                      for k, p, w in tr.committed_sets],
        "final_states": dict(tr.final_states),
        "halted": list(tr.halted),
        "end_time": tr.end_time,
    }


def cmd_simulate(args):
    s = load_scenario(args.scenario, args)
    tr = sim.run_scenario(s)
    if args.json:
        out = tr.to_jsonl() + json.dumps({"summary": _trace_summary(tr)}, sort_keys=True)
    else:
        head = f"# {s.label()} T={s.T} seed={s.seed}\n"
        lines = [f"# cycle {k}: {{{', '.join(sorted(p))}}} at [{w[0]}, {w[1]}]"
                 for k, p, w in tr.committed_sets]
        out = head + tr.timeline() + "\n" + "\n".join(lines or ["# no committed cycle"])
    _emit(args, out)
    return EXIT_OK


def cmd_explore(args):
    s = load_scenario(args.scenario, args)
    traces = sim.explore_exhaustive(s, args.depth_bound, args.max_runs)
    region = cir.desugar(s.circuit)
    outcomes = []
    for tr in traces:
        outcomes.append({
            "ports": [sorted(p) for p in tr.outcome()],
            "nodes": [sorted(n) for n in sim.committed_node_sets(tr, region)],
            "choices": [list(c) for c in tr.choices],
        })
    _emit(args, _dump({"scenario": s.label(), "T": s.T, "outcomes": outcomes}))
    return EXIT_OK


def _scenario_dir(path, region, args):
    if not os.path.isdir(path):
        raise UsageError(f"{path} is not a directory")
    out = []
    for name in sorted(os.listdir(path)):
        if name.endswith((".json", ".scn", ".txt")):
            s = load_scenario(os.path.join(path, name), args)
            out.append(s.replace(circuit=region))
    if not out:
        raise UsageError(f"no scenario files in {path}")
    return out


def cmd_verify(args):
    if args.primitive:
        rep = vf.check_primitive_refinement(args.primitive, args.variant)
    else:
        if not args.circuit:
            raise UsageError("verify needs a circuit or --primitive KIND")
        c = _single_region(load_circuit(args.circuit))
        region = cir.desugar(c)
        if args.mode == "refinement":
            rep = vf.check_region_refinement(region, args.block_mode, args.max_states)
        elif args.mode == "dynamic":
            scen = _scenario_dir(args.scenarios, region, args) if args.scenarios else None
            rep = vf.check_correct_implementation(region, "dynamic", bound=args.depth_bound,
                                                  scenarios=scen)
        else:
            rep = vf.check_correct_implementation(region, "symbolic", block_mode=args.block_mode,
                                                  max_states=args.max_states)
    _emit(args, rep.to_json() if args.json else rep.summary())
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_export(args):
    ref = args.artifact
    text = None if ref in cir.builtin_names() else _read(ref)
    if text is not None and text.lstrip().startswith("{"):
        d = json.loads(text)
        if d.get("type") in ("ACA", "TimedACA"):
            a = am.from_dict(d)
            _emit(args, _automaton(args, a, os.path.splitext(os.path.basename(ref))[0]))
            return EXIT_OK
    c = load_circuit(ref)
    _emit(args, cir.to_dot(c) if args.dot else cir.to_json(c))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out(p):
    p.add_argument("-o", "--output", help="write to this file instead of stdout")


def _fmt(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--dot", action="store_true", help="Graphviz output")
    g.add_argument("--json", action="store_true", help="JSON output (default)")


def _scenario_flags(p):
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--timeout", type=int, help="override the timeout T")
    p.add_argument("--c-factor", type=float, help="derive T with this factor")


def build_parser():
    p = _Parser(prog="reohandshake", description="Distributed handshaking for Reo circuits.")
    p.add_argument("--config", help="JSON or key: value file supplying flag defaults")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    q = sub.add_parser("parse", help="validate a circuit and echo it")
    q.add_argument("circuit")
    _fmt(q)
    _out(q)
    q.set_defaults(func=cmd_parse)

    q = sub.add_parser("semantics", help="reference constraint automaton")
    q.add_argument("circuit")
    q.add_argument("--hide-internal", action="store_true")
    q.add_argument("--port-blocking", action="store_true")
    _fmt(q)
    _out(q)
    q.set_defaults(func=cmd_semantics)

    q = sub.add_parser("handshake", help="template or composed handshaking automaton")
    q.add_argument("circuit", nargs="?")
    q.add_argument("--template", metavar="KIND", help="emit one primitive template")
    q.add_argument("--variant")
    q.add_argument("--block-mode", choices=("sync", "free"), default="sync")
    q.add_argument("--max-states", type=int, default=200000)
    _fmt(q)
    _out(q)
    q.set_defaults(func=cmd_handshake)

    q = sub.add_parser("simulate", help="run one scenario")
    q.add_argument("scenario")
    q.add_argument("--json", action="store_true", help="JSON lines instead of a timeline")
    _scenario_flags(q)
    _out(q)
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("explore", help="all outcomes of a scenario")
    q.add_argument("scenario")
    q.add_argument("--depth-bound", type=int)
    q.add_argument("--max-runs", type=int, default=5000)
    _scenario_flags(q)
    _out(q)
    q.set_defaults(func=cmd_explore)

    q = sub.add_parser("verify", help="check a region or a primitive template")
    q.add_argument("circuit", nargs="?")
    q.add_argument("--primitive", metavar="KIND")
    q.add_argument("--variant")
    q.add_argument("--mode", choices=("symbolic", "dynamic", "refinement"), default="symbolic")
    q.add_argument("--block-mode", choices=("sync", "free"), default="sync")
    q.add_argument("--scenarios", metavar="DIR")
    q.add_argument("--depth-bound", type=int)
    q.add_argument("--max-states", type=int, default=200000)
    q.add_argument("--json", action="store_true", help="JSON report instead of a summary")
    _scenario_flags(q)
    _out(q)
    q.set_defaults(func=cmd_verify)

    q = sub.add_parser("export", help="render a circuit or automaton file")
    q.add_argument("artifact")
    _fmt(q)
    _out(q)
    q.set_defaults(func=cmd_export)
    return p


def _config_defaults(path):
    text = _read(path).strip()
    if text.startswith("{"):
        d = json.loads(text)
    else:
        d = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                if ":" not in line:
                    raise UsageError(f"{path}: expected key: value, got {line!r}")
                k, v = (x.strip() for x in line.split(":", 1))
                d[k] = v
    return {k.replace("-", "_"): v for k, v in d.items()}


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    defaults = _config_defaults(known.config)
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            conv = {a.dest: a for a in sp._actions}
            vals = {}
            for k, v in defaults.items():
                a = conv.get(k)
                if a is None:
                    continue
                if a.type is not None and isinstance(v, str):
                    v = a.type(v)
                elif a.const is True and isinstance(v, str):
                    v = v.lower() in ("1", "true", "yes")
                vals[k] = v
            sp.set_defaults(**vals)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("missing command; try --help")
        return args.func(args)
    except ReoSyntaxError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ReoError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else EXIT_OK


def entry():
    try:
        code = main()
        sys.stdout.flush()
    except BrokenPipeError:
        code = EXIT_OK
        sys.stdout = None
    sys.exit(code)


if __name__ == "__main__":
    entry()
