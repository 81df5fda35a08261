"""Command-line front end: simulate, graph, query, snapshot, stats.

Exit status is 0 on success and 2 on any error. ``query ... hb`` exits 1
when the answer is false so it can be used in shell conditionals.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from pathlib import Path

from . import FIXTURES, __version__
from .graph import UnknownVertex, build_cpg, export, happens_before, lineage, topological_order
from .recorder import RecordedExecution, RecorderError, record
from .simulator import DslError, Schedule, SimulationError, load_program, run
from .snapshot import SnapshotRing, consistent_cut, save_snapshot, snapshot
from .trace import Trace, TraceError, load_trace, rebucket, save_trace
from .types import StructuralError, SubComputationId

PAGE_SHIFT_ENV = "CPG_PAGE_SHIFT"

_NOT_REPRODUCED = (
    "These counters describe the modeled execution only. They are not wall-clock "
    "or work overheads, and not hardware page-fault rates or log sizes from a real "
    "tracing setup; no such overhead tables are reproduced here."
)


class CliError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------


def _program_path(text: str) -> Path:
    path = Path(text)
    if path.exists():
        return path
    # fall back to the bundled fixtures: "fig1", "fig1.dsl" or "fixtures/fig1.dsl"
    name = path.name if path.suffix == ".dsl" else path.name + ".dsl"
    bundled = FIXTURES / name
    if bundled.exists() and (len(path.parts) == 1 or path.parent.name == "fixtures"):
        return bundled
    raise CliError(f"no such program file: {text}")


def _load(path: str) -> Trace:
    try:
        data = sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    trace = load_trace(data)
    shift = os.environ.get(PAGE_SHIFT_ENV)
    if shift:
        try:
            trace = rebucket(trace, int(shift))
        except ValueError as exc:
            raise CliError(f"{PAGE_SHIFT_ENV}={shift}: {exc}") from None
    return trace


def _write(path: str | None, data: bytes) -> None:
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _sub(text: str) -> SubComputationId:
    try:
        return SubComputationId.parse(text)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _info(args, message: str) -> None:
    """Summary lines go to stdout unless stdout carries the main output."""
    out = sys.stderr if getattr(args, "out", None) in (None, "-") else sys.stdout
    print(message, file=out)


# -- commands ---------------------------------------------------------------------


def cmd_simulate(args) -> int:
    program = load_program(_program_path(args.program))
    schedule = Schedule.parse(args.schedule) if args.schedule else None
    result = run(program, schedule, seed=args.seed)
    for race in result.races:
        print(f"warning: {race}", file=sys.stderr)
    _write(args.out, save_trace(result.trace))
    memory = " ".join(f"{k}={v}" for k, v in sorted(result.memory.shared.items()))
    _info(args, f"{len(result.trace.events)} events")
    _info(args, f"sync order: {','.join(map(str, result.sync_order))}")
    _info(args, f"final memory: {memory}")
    return 0


def cmd_graph(args) -> int:
    cpg = build_cpg(record(_load(args.trace)))
    _write(args.out, export(cpg, args.format))
    counts = cpg.edge_counts()
    line = f"{len(cpg.vertices)} vertices; " + ", ".join(f"{k}={n}" for k, n in counts.items())
    if cpg.input_bindings:
        line += f"; input bindings={len(cpg.input_bindings)}"
    _info(args, line)
    return 0


def cmd_query(args) -> int:
    rec = record(_load(args.trace))
    if args.query == "hb":
        answer = happens_before(_sub(args.a), _sub(args.b), rec)
        print("true" if answer else "false")
        return 0 if answer else 1
    cpg = build_cpg(rec)
    result = lineage(_sub(args.target), cpg, args.page)
    order = [v for v in topological_order(cpg) if v in set(result.vertices)]
    for v in order:
        print(v.name)
    for b in result.inputs:
        print(f"input {b.input} page {b.page} -> {b.sub.name}")
    return 0


def _request(text: str) -> dict[int, int] | None:
    if text in ("end", ""):
        return None
    out = {}
    for part in text.split(","):
        try:
            tid, seq = part.split("=")
            out[int(tid)] = int(seq)
        except ValueError:
            raise CliError(f"bad --at request {text!r}, expected tid=seq[,tid=seq...] or 'end'") from None
    return out


def cmd_snapshot(args) -> int:
    rec = record(_load(args.trace))
    full = build_cpg(rec)
    ring = SnapshotRing(args.slots)
    names = {}
    for k, text in enumerate(args.at or ["end"], start=1):
        cut = consistent_cut(rec, _request(text))
        snap = snapshot(rec, cut, full)
        names[id(snap)] = f"snap-{k:03d}"
        frontier = " ".join(f"t{t}={f}" for t, f in sorted(cut.frontier.items()))
        print(f"request {k} ({text}): frontier {frontier}")
        evicted = ring.push(snap)
        if evicted is not None:
            print(f"ring full ({args.slots} slots): evicted {names[id(evicted)]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for snap in ring.live():
        path = save_snapshot(snap, out / names[id(snap)])
        print(f"wrote {path}")
    return 0


def trace_stats(trace: Trace, rec: RecordedExecution | None = None) -> dict[str, int]:
    rec = rec or record(trace)
    cpg = build_cpg(rec)
    raw = save_trace(trace)
    stats = {
        "threads": trace.t,
        "events": len(trace.events),
        "sub_computations": len(rec.sub_computations),
    }
    stats.update({f"{k}_edges": n for k, n in cpg.edge_counts().items()})
    stats["input_bindings"] = len(cpg.input_bindings)
    stats["page_faults"] = rec.page_faults
    stats["branches"] = sum(1 for e in trace.events if e.ev == "branch")
    stats["trace_bytes"] = len(raw) if trace.events else 0
    stats["compressed_bytes"] = len(zlib.compress(raw, 9)) if trace.events else 0
    return stats


def cmd_stats(args) -> int:
    stats = trace_stats(_load(args.trace))
    if args.json:
        print(json.dumps(stats, indent=2))
    else:
        width = max(map(len, stats))
        for k, v in stats.items():
            print(f"{k:<{width}}  {v}")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    p = argparse.ArgumentParser(prog="cpgkit", description="Provenance graphs for multithreaded executions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file of flag defaults (keys are flag names)")
    sub = p.add_subparsers(dest="command", required=True)
    cmds = {}

    s = sub.add_parser("simulate", help="run a DSL program and write its trace")
    s.add_argument("program", help="DSL file, or the name of a bundled fixture")
    s.add_argument("--schedule", help="sync order '1,1,2,2' or quanta '1:3,2:5'")
    s.add_argument("--seed", type=int, default=0, help="seed for scheduling what the schedule leaves open")
    s.add_argument("--out", help="trace file (default stdout)")
    s.set_defaults(func=cmd_simulate)
    cmds["simulate"] = s

    g = sub.add_parser("graph", help="build the provenance graph of a trace")
    g.add_argument("trace")
    g.add_argument("--out", help="output file (default stdout)")
    g.add_argument("--format", choices=("dot", "json"), default="dot")
    g.set_defaults(func=cmd_graph)
    cmds["graph"] = g

    q = sub.add_parser("query", help="happens-before and lineage queries")
    q.add_argument("trace")
    qs = q.add_subparsers(dest="query", required=True)
    hb = qs.add_parser("hb", help="exit 0 if A happens before B, 1 otherwise")
    hb.add_argument("a")
    hb.add_argument("b")
    ln = qs.add_parser("lineage", help="sub-computations the target transitively read from")
    ln.add_argument("target")
    ln.add_argument("--page", type=int, help="restrict the target's own reads to this page")
    q.set_defaults(func=cmd_query)
    cmds["query"] = q

    n = sub.add_parser("snapshot", help="take consistent snapshots at requested points")
    n.add_argument("trace")
    n.add_argument("--at", action="append", metavar="TID=SEQ[,...]",
                   help="one snapshot request per flag; 'end' for the whole trace")
    n.add_argument("--slots", type=int, default=4)
    n.add_argument("--out", default="snapshots", help="output directory")
    n.set_defaults(func=cmd_snapshot)
    cmds["snapshot"] = n

    t = sub.add_parser("stats", help="counters of the modeled execution", description=_NOT_REPRODUCED)
    t.add_argument("trace")
    t.add_argument("--json", action="store_true")
    t.set_defaults(func=cmd_stats)
    cmds["stats"] = t
    return p, cmds


def _apply_config(path: str, parser: argparse.ArgumentParser) -> None:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must hold a JSON object")
    known = {a.dest for a in parser._actions}
    parser.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items() if k.replace("-", "_") in known})


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, cmds = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            _apply_config(args.config, cmds[args.command])
            args = parser.parse_args(argv)
        if getattr(args, "slots", 1) < 1:
            raise CliError("--slots must be positive")
        return args.func(args)
    except (CliError, TraceError, DslError, SimulationError, RecorderError, StructuralError) as exc:
        print(f"cpgkit: error: {exc}", file=sys.stderr)
        return 2
    except UnknownVertex as exc:
        print(f"cpgkit: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cpgkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
