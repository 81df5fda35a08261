"""Consistent cuts of a recorded execution and a slot-based snapshot ring.

A cut keeps, per thread, a prefix of its sub-computations together with
the sync events that closed them. It is consistent when every included
acquire has every earlier release on the same object included as well.
A created thread's first sub-computation counts as an acquire of its
handle, so including it requires the parent's create.
"""

from __future__ import annotations

import json
import os
from bisect import bisect_right
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .graph import build_cpg
from .recorder import RecordedExecution, SyncEvent
from .types import Cpg, Edge, dumps_canonical

SNAPSHOT_SUFFIX = ".cpgsnap.json"


class InconsistentCut(ValueError):
    pass


@dataclass(frozen=True)
class Cut:
    frontier: dict[int, int]  # thread -> last included sub-computation index, -1 for none
    included_sync: frozenset[int]  # seqs of included explicit sync events

    def __le__(self, other: Cut) -> bool:
        return all(f <= other.frontier.get(t, -1) for t, f in self.frontier.items())

    def contains(self, sid) -> bool:
        return sid.index <= self.frontier.get(sid.thread, -1)

    def to_json(self) -> dict:
        return {
            "frontier": {str(t): f for t, f in sorted(self.frontier.items())},
            "included_sync": sorted(self.included_sync),
        }

    @classmethod
    def from_json(cls, d: dict) -> Cut:
        return cls({int(t): f for t, f in d["frontier"].items()}, frozenset(d["included_sync"]))


@dataclass
class _Thread:
    syncs: list[SyncEvent]  # explicit, in order; syncs[k] closes sub k
    implicit: SyncEvent | None
    has_trailing: bool  # last sub is not closed by a sync event
    end_seq: int


def _threads(rec: RecordedExecution) -> dict[int, _Thread]:
    subs = defaultdict(list)
    for s in rec.sub_computations:
        subs[s.id.thread].append(s)
    out = {}
    for t, ss in subs.items():
        syncs = [e for e in rec.sync_events if e.tid == t and not e.implicit]
        implicit = next((e for e in rec.sync_events if e.tid == t and e.implicit), None)
        last = ss[-1]
        ends = [e.seq for e in syncs]
        if implicit is not None:
            ends.append(implicit.seq)
        if last.span is not None:
            ends.append(last.span[1])
        out[t] = _Thread(syncs, implicit, len(ss) == len(syncs) + 1, max(ends, default=-1))
    return out


def _requirements(rec: RecordedExecution, threads: dict[int, _Thread]):
    """For each acquire, the number of each thread's sync events that must be included."""
    pos = {}
    for t, info in threads.items():
        for k, e in enumerate(info.syncs):
            pos[(e.seq, e.tid)] = k
    released: dict[str, dict[int, int]] = defaultdict(dict)
    req: dict[tuple[int, int, bool], dict[int, int]] = {}
    for e in rec.sync_events:
        if e.op == "rel":
            released[e.obj][e.tid] = pos[(e.seq, e.tid)] + 1
        else:
            req[(e.seq, e.tid, e.implicit)] = dict(released[e.obj])
    return req


def _frontier(info: _Thread, n: int, trailing: bool) -> int:
    return n - 1 + (1 if trailing else 0)


def consistent_cut(rec: RecordedExecution, requested: Mapping[int, int] | None = None) -> Cut:
    """Greatest consistent cut not beyond ``requested`` (thread -> seq).

    Each thread starts at its latest sync event at or before its requested
    seq (all of it when the request reaches the thread's last event or is
    absent). Acquires whose releases are missing are then retracted,
    together with everything after them on their thread, until stable.
    """
    requested = requested or {}
    threads = _threads(rec)
    req = _requirements(rec, threads)
    n: dict[int, int] = {}
    trailing: dict[int, bool] = {}
    for t, info in threads.items():
        q = requested.get(t)
        if q is None:
            n[t] = len(info.syncs)
            trailing[t] = info.has_trailing
        else:
            n[t] = bisect_right([e.seq for e in info.syncs], q)
            trailing[t] = info.has_trailing and n[t] == len(info.syncs) and q >= info.end_seq
            if not info.syncs and info.implicit is not None and q < info.implicit.seq:
                trailing[t] = False

    def satisfied(need: dict[int, int]) -> bool:
        return all(n.get(u, 0) >= k for u, k in need.items())

    changed = True
    while changed:
        changed = False
        for t, info in threads.items():
            if info.implicit is not None and _frontier(info, n[t], trailing[t]) >= 0:
                if not satisfied(req[(info.implicit.seq, t, True)]):
                    n[t], trailing[t] = 0, False
                    changed = True
                    continue
            for k in range(n[t]):
                e = info.syncs[k]
                if e.op == "acq" and not satisfied(req[(e.seq, t, False)]):
                    n[t], trailing[t] = k, False
                    changed = True
                    break
    frontier = {t: _frontier(info, n[t], trailing[t]) for t, info in threads.items()}
    included = frozenset(e.seq for t, info in threads.items() for e in info.syncs[: n[t]])
    return Cut(frontier, included)


def check_cut(rec: RecordedExecution, cut: Cut) -> list[str]:
    """Violations of prefix-closure and release/acquire closure; empty if consistent."""
    problems = []
    threads = _threads(rec)
    for t, info in threads.items():
        f = cut.frontier.get(t, -1)
        inc = [e.seq in cut.included_sync for e in info.syncs]
        k = sum(inc)
        if inc != [True] * k + [False] * (len(inc) - k):
            problems.append(f"thread {t}: included sync events are not a prefix")
        if f not in (k - 1, k) or (f == k and not (info.has_trailing and k == len(info.syncs))):
            problems.append(f"thread {t}: frontier {f} does not match {k} included sync events")
    included = set(cut.included_sync)
    releases = defaultdict(list)
    for e in rec.sync_events:
        if e.op == "rel":
            releases[e.obj].append(e)
            continue
        if e.implicit:
            inside = cut.frontier.get(e.tid, -1) >= 0
        else:
            inside = e.seq in included
        if not inside:
            continue
        for r in releases[e.obj]:
            if r.seq not in included:
                problems.append(f"acquire of {e.obj!r} at seq {e.seq} lacks release at seq {r.seq}")
    return problems


@dataclass(frozen=True)
class Snapshot:
    cut: Cut
    execution: RecordedExecution
    boundary: tuple[Edge, ...]  # full-graph edges leaving the cut

    def to_json(self) -> dict:
        return {
            "cut": self.cut.to_json(),
            "execution": self.execution.to_json(),
            "boundary": [e.to_json() for e in self.boundary],
        }

    def dumps(self) -> str:
        return dumps_canonical(self.to_json())

    @classmethod
    def from_json(cls, d: dict) -> Snapshot:
        return cls(
            Cut.from_json(d["cut"]),
            RecordedExecution.from_json(d["execution"]),
            tuple(Edge.from_json(e) for e in d["boundary"]),
        )


def snapshot(rec: RecordedExecution, cut: Cut, full: Cpg | None = None) -> Snapshot:
    problems = check_cut(rec, cut)
    if problems:
        raise InconsistentCut("; ".join(problems))
    subs = tuple(s for s in rec.sub_computations if cut.contains(s.id))
    events = tuple(
        e for e in rec.sync_events
        if (cut.frontier.get(e.tid, -1) >= 0 if e.implicit else e.seq in cut.included_sync)
    )
    part = RecordedExecution(rec.t, rec.page_shift, subs, events, dict(rec.input_map), rec.name)
    full = full or build_cpg(rec)
    boundary = tuple(e for e in full.edges if cut.contains(e.src) and not cut.contains(e.dst))
    return Snapshot(cut, part, boundary)


def save_snapshot(snap: Snapshot, path: str | os.PathLike) -> Path:
    path = Path(path)
    if not path.name.endswith(SNAPSHOT_SUFFIX):
        path = path.with_name(path.name + SNAPSHOT_SUFFIX)
    path.write_text(snap.dumps(), encoding="utf-8")
    return path


def load_snapshot(path: str | os.PathLike) -> Snapshot:
    return Snapshot.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class SnapshotRing:
    """Fixed number of slots; a push into a full ring evicts the oldest live snapshot."""

    def __init__(self, slot_count: int):
        if slot_count < 1:
            raise ValueError("slot_count must be positive")
        self.slot_count = slot_count
        self.slots: list[Snapshot | None] = [None] * slot_count
        self.cursor = 0
        self._live: deque[int] = deque()

    def __len__(self) -> int:
        return len(self._live)

    def push(self, snap: Snapshot) -> Snapshot | None:
        evicted = None
        if len(self._live) == self.slot_count:
            slot = self._live.popleft()
            evicted = self.slots[slot]
        else:
            slot = self.cursor
            while self.slots[slot] is not None:
                slot = (slot + 1) % self.slot_count
        self.slots[slot] = snap
        self._live.append(slot)
        self.cursor = (slot + 1) % self.slot_count
        return evicted

    def consume(self) -> Snapshot:
        if not self._live:
            raise IndexError("snapshot ring is empty")
        slot = self._live.popleft()
        snap, self.slots[slot] = self.slots[slot], None
        return snap

    def live(self) -> list[Snapshot]:
        return [self.slots[s] for s in self._live]
