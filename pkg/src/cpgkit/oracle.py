"""Brute-force reference answers for validating the engine.

Nothing here looks at vector clocks. Happens-before is the transitive
closure of program order plus every (earlier release, later acquire)
pair on the same object; data dependences come from scanning all
writers of a page against that closure.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import _kernels
from .recorder import RecordedExecution
from .types import Edge, SubComputationId

MAX_VERTICES = 500


class OracleSizeError(ValueError):
    pass


def hb_closure(rec: RecordedExecution, limit: int = MAX_VERTICES) -> tuple[list[SubComputationId], np.ndarray]:
    """Return (vertex order, reach) with ``reach[i, j]`` iff i happens before j."""
    ids = sorted(s.id for s in rec.sub_computations)
    if len(ids) > limit:
        raise OracleSizeError(f"{len(ids)} sub-computations exceeds oracle limit {limit}")
    pos = {s: i for i, s in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)), dtype=np.bool_)
    for s in ids:
        nxt = SubComputationId(s.thread, s.index + 1)
        if nxt in pos:
            adj[pos[s], pos[nxt]] = True
    released: dict[str, list[SubComputationId]] = defaultdict(list)
    for ev in rec.sync_events:
        if ev.op == "rel":
            released[ev.obj].append(ev.sub)
        elif ev.sub in pos:
            for r in released[ev.obj]:
                if r != ev.sub:
                    adj[pos[r], pos[ev.sub]] = True
    return ids, _kernels.transitive_closure(adj)


def data_deps_bruteforce(rec: RecordedExecution, limit: int = MAX_VERTICES) -> set[Edge]:
    ids, reach = hb_closure(rec, limit)
    pos = {s: i for i, s in enumerate(ids)}
    subs = {s.id: s for s in rec.sub_computations}
    out = set()
    for b in ids:
        for page in subs[b].read_set:
            before = [a for a in ids if page in subs[a].write_set and reach[pos[a], pos[b]]]
            for a in before:
                if not any(reach[pos[a], pos[c]] for c in before):
                    out.add(Edge(a, b, "data", page))
    return out


def reverse_reachable(target: SubComputationId, edges, kind: str = "data") -> set[SubComputationId]:
    """All vertices with a path to ``target`` over edges of ``kind``, plus the target."""
    seen = {target}
    changed = True
    while changed:
        changed = False
        for e in edges:
            if e.kind == kind and e.dst in seen and e.src not in seen:
                seen.add(e.src)
                changed = True
    return seen
