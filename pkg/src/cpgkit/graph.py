"""Concurrent provenance graph: edges, happens-before, lineage and export."""

from __future__ import annotations

import graphlib
import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _kernels
from .recorder import RecordedExecution
from .types import (
    Cpg,
    Edge,
    InputBinding,
    SubComputation,
    SubComputationId,
    dumps_canonical,
)

log = logging.getLogger(__name__)


class UnknownVertex(KeyError):
    def __str__(self) -> str:
        return f"unknown sub-computation {self.args[0]}"


def _vertices(g) -> Mapping[SubComputationId, SubComputation]:
    return g.vertices


def _hb(vs: Mapping[SubComputationId, SubComputation], a: SubComputationId, b: SubComputationId) -> bool:
    return a != b and vs[b].clock[a.thread] > a.index


def happens_before(a: SubComputationId, b: SubComputationId, rec) -> bool:
    """Vector-clock decision of ``a -> b``; ``rec`` is a RecordedExecution or Cpg."""
    vs = _vertices(rec)
    for x in (a, b):
        if x not in vs:
            raise UnknownVertex(x)
    return _hb(vs, a, b)


@dataclass(frozen=True)
class HbIndex:
    """Dense numbering of vertices, sorted by (thread, index), plus the hb matrix."""

    ids: tuple[SubComputationId, ...]
    pos: dict[SubComputationId, int]
    matrix: np.ndarray

    def __call__(self, a: SubComputationId, b: SubComputationId) -> bool:
        return bool(self.matrix[self.pos[a], self.pos[b]])


def hb_index(rec) -> HbIndex:
    vs = _vertices(rec)
    ids = tuple(sorted(vs))
    n = len(ids)
    width = len(vs[ids[0]].clock) if n else 0
    clocks = np.zeros((n, width), dtype=np.int64)
    for i, sid in enumerate(ids):
        clocks[i] = vs[sid].clock.counters
    threads = np.fromiter((s.thread - 1 for s in ids), dtype=np.int64, count=n)
    indices = np.fromiter((s.index for s in ids), dtype=np.int64, count=n)
    return HbIndex(ids, {s: i for i, s in enumerate(ids)}, _kernels.hb_matrix(clocks, threads, indices))


def control_edges(rec) -> set[Edge]:
    vs = _vertices(rec)
    return {
        Edge(SubComputationId(s.thread, s.index - 1), s, "control")
        for s in vs
        if s.index > 0 and SubComputationId(s.thread, s.index - 1) in vs
    }


def sync_edges(rec: RecordedExecution) -> set[Edge]:
    """Release -> acquire edges between threads.

    An acquire receives an edge from every hb-maximal earlier release on
    the same object made by another thread. Releases dominated by a later
    one (or by one of the acquirer's own) are reachable without an edge,
    so reachability over control+sync equals vector-clock happens-before.
    """
    vs = rec.vertices
    frontier: dict[str, list[SubComputationId]] = defaultdict(list)
    edges: set[Edge] = set()
    for ev in rec.sync_events:
        if ev.op == "rel":
            cur = frontier[ev.obj]
            cur[:] = [r for r in cur if not _hb(vs, r, ev.sub)]
            cur.append(ev.sub)
        elif ev.sub in vs:
            for r in frontier.get(ev.obj, ()):
                if r.thread != ev.tid:
                    edges.add(Edge(r, ev.sub, "sync"))
    return edges


def _pages(vs, attr: str) -> dict[int, list[SubComputationId]]:
    out: dict[int, list[SubComputationId]] = defaultdict(list)
    for sid in sorted(vs):
        for p in getattr(vs[sid], attr):
            out[p].append(sid)
    return out


def data_dependencies(rec, hb: HbIndex | None = None) -> tuple[set[Edge], set[InputBinding]]:
    """Update-use edges from hb-maximal preceding writers, plus input bindings
    for reads no writer precedes on a page mapped from an input."""
    vs = _vertices(rec)
    hb = hb or hb_index(rec)
    writers = _pages(vs, "write_set")
    readers = _pages(vs, "read_set")
    edges: set[Edge] = set()
    bindings: set[InputBinding] = set()
    input_map = getattr(rec, "input_map", {})
    for page, rs in readers.items():
        r_idx = np.array([hb.pos[s] for s in rs], dtype=np.int64)
        w_idx = np.array([hb.pos[s] for s in writers.get(page, ())], dtype=np.int64)
        fed = set()
        if w_idx.size:
            for a, b in _kernels.data_pairs(hb.matrix, w_idx, r_idx):
                edges.add(Edge(hb.ids[a], hb.ids[b], "data", page))
                fed.add(int(b))
        if page in input_map:
            for b in r_idx:
                if int(b) not in fed:
                    bindings.add(InputBinding(input_map[page].input, page, hb.ids[b]))
    return edges, bindings


def data_edges(rec) -> set[Edge]:
    return data_dependencies(rec)[0]


def race_warnings(rec, hb: HbIndex | None = None) -> list[str]:
    """Writers concurrent with a reader of the same page (neither ordered)."""
    vs = _vertices(rec)
    hb = hb or hb_index(rec)
    writers = _pages(vs, "write_set")
    out = []
    for page, rs in sorted(_pages(vs, "read_set").items()):
        for b in rs:
            for a in writers.get(page, ()):
                if a != b and not hb(a, b) and not hb(b, a):
                    out.append(f"race on page {page}: {a} writes concurrently with {b} reading")
    return out


def build_cpg(rec: RecordedExecution) -> Cpg:
    hb = hb_index(rec)
    data, bindings = data_dependencies(rec, hb)
    edges = control_edges(rec) | sync_edges(rec) | data
    races = race_warnings(rec, hb)
    if races:
        log.warning("%d unordered write/read pair(s); first: %s", len(races), races[0])
    return Cpg(
        vertices=dict(sorted(rec.vertices.items())),
        edges=tuple(sorted(edges, key=Edge.sort_key)),
        input_map=dict(rec.input_map),
        input_bindings=tuple(sorted(bindings)),
    )


def topological_order(cpg: Cpg) -> list[SubComputationId]:
    """Raises ``graphlib.CycleError`` if the graph is not a DAG."""
    ts = graphlib.TopologicalSorter({v: () for v in sorted(cpg.vertices)})
    for e in cpg.edges:
        ts.add(e.dst, e.src)
    return list(ts.static_order())


@dataclass(frozen=True)
class Lineage:
    target: SubComputationId
    page: int | None
    vertices: tuple[SubComputationId, ...]
    inputs: tuple[InputBinding, ...]


def lineage(target: SubComputationId, cpg: Cpg, page: int | None = None) -> Lineage:
    """Backward slice over data edges.

    With ``page``, only the target's inbound edges on that page seed the
    walk; everything upstream of those writers is followed in full.
    """
    if target not in cpg.vertices:
        raise UnknownVertex(target)
    preds: dict[SubComputationId, list[Edge]] = defaultdict(list)
    for e in cpg.edges:
        if e.kind == "data":
            preds[e.dst].append(e)
    seen = {target}
    queue = deque()
    for e in preds[target]:
        if page is None or e.page == page:
            queue.append(e.src)
    while queue:
        v = queue.popleft()
        if v in seen:
            continue
        seen.add(v)
        queue.extend(e.src for e in preds[v])
    inputs = tuple(sorted(
        b for b in cpg.input_bindings
        if b.sub in seen and (page is None or b.sub != target or b.page == page)
    ))
    return Lineage(target, page, tuple(sorted(seen)), inputs)


# -- export -------------------------------------------------------------------

_DOT_STYLE = {
    "control": 'style=solid, color=black, label="control"',
    "sync": 'style=dashed, color=blue, label="sync"',
}


def export_dot(cpg: Cpg) -> bytes:
    lines = ["digraph cpg {", "  node [shape=box];"]
    for v in sorted(cpg.vertices):
        lines.append(f'  "{v.name}" [label="{v.name}"];')
    for name in sorted({b.input for b in cpg.input_bindings}):
        lines.append(f'  "input:{name}" [shape=note, label="{name}"];')
    for e in sorted(cpg.edges, key=Edge.sort_key):
        style = _DOT_STYLE.get(e.kind) or f'style=bold, color=red, label="page {e.page}"'
        lines.append(f'  "{e.src.name}" -> "{e.dst.name}" [{style}];')
    for b in sorted(cpg.input_bindings):
        lines.append(f'  "input:{b.input}" -> "{b.sub.name}" [style=dotted, label="page {b.page}"];')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def export_json(cpg: Cpg) -> bytes:
    return dumps_canonical(cpg.to_json()).encode("utf-8")


def load_cpg_json(data: bytes | str) -> Cpg:
    return Cpg.from_json(json.loads(data))


def export(cpg: Cpg, fmt: str) -> bytes:
    if fmt == "dot":
        return export_dot(cpg)
    if fmt == "json":
        return export_json(cpg)
    raise ValueError(f"unknown export format {fmt!r}")
