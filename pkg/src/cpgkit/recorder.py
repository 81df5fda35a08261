"""Sub-computation recorder driven by a serialized trace.

Each thread runs a small state machine: a sub-computation counter
``alpha``, a thunk counter ``beta`` and a thread clock. Every acquire or
release closes the current sub-computation, bumps ``alpha`` and moves the
thread clock through the sync object's clock; the next sub-computation is
opened immediately, so sub-computations with no instructions still exist
as vertices and indices stay gapless.

The thread clock's own component advances together with ``alpha``. A
release therefore publishes ``alpha`` = (index of the closed
sub-computation) + 1, and ``clock(b)[a.thread] > a.index`` decides
whether sub-computation ``a`` happens before ``b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .trace import Event, Trace, TraceError
from .types import (
    InputRegion,
    SubComputation,
    SubComputationId,
    SyncOp,
    Thunk,
    VectorClock,
    dumps_canonical,
    input_map_from_json,
    input_map_to_json,
)

log = logging.getLogger(__name__)


class RecorderError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyncEvent:
    """One acquire or release as seen by the recorder.

    ``sub`` is the sub-computation closed by a release, or the one opened
    by an acquire. Implicit acquires (a created thread picking up its
    handle) carry ``implicit=True`` and the seq of the child's first event.
    """

    seq: int
    tid: int
    op: str
    obj: str
    kind: str
    sub: SubComputationId
    implicit: bool = False

    def to_json(self) -> dict:
        return {
            "seq": self.seq, "tid": self.tid, "op": self.op, "obj": self.obj,
            "kind": self.kind, "sub": self.sub.to_json(), "implicit": self.implicit,
        }

    @classmethod
    def from_json(cls, d: dict) -> SyncEvent:
        return cls(d["seq"], d["tid"], d["op"], d["obj"], d["kind"],
                   SubComputationId.from_json(d["sub"]), d.get("implicit", False))


@dataclass(frozen=True)
class RecordedExecution:
    t: int
    page_shift: int
    sub_computations: tuple[SubComputation, ...]
    sync_events: tuple[SyncEvent, ...]
    input_map: dict[int, InputRegion] = field(default_factory=dict)
    name: str = ""

    @property
    def vertices(self) -> dict[SubComputationId, SubComputation]:
        v = self.__dict__.get("_vertices")
        if v is None:
            v = {s.id: s for s in self.sub_computations}
            object.__setattr__(self, "_vertices", v)
        return v

    @property
    def page_faults(self) -> int:
        return sum(s.faults for s in self.sub_computations)

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "page_shift": self.page_shift,
            "name": self.name,
            "sub_computations": [s.to_json() for s in self.sub_computations],
            "sync_events": [e.to_json() for e in self.sync_events],
            "input_map": input_map_to_json(self.input_map),
        }

    def dumps(self) -> str:
        return dumps_canonical(self.to_json())

    @classmethod
    def from_json(cls, d: dict) -> RecordedExecution:
        return cls(
            t=d["t"],
            page_shift=d["page_shift"],
            sub_computations=tuple(SubComputation.from_json(s) for s in d["sub_computations"]),
            sync_events=tuple(SyncEvent.from_json(e) for e in d["sync_events"]),
            input_map=input_map_from_json(d["input_map"]),
            name=d.get("name", ""),
        )


@dataclass
class _OpenSub:
    index: int
    clock: VectorClock
    reads: set[int] = field(default_factory=set)
    writes: set[int] = field(default_factory=set)
    thunks: list[Thunk] = field(default_factory=list)
    first_seq: int | None = None
    last_seq: int | None = None
    faults: int = 0
    # page -> "r" (read-only so far) or "w" (writable)
    protection: dict[int, str] = field(default_factory=dict)


@dataclass
class ThreadState:
    tid: int
    alpha: int
    beta: int
    clock: list[int]
    current: _OpenSub | None = None
    exited: bool = False


@dataclass
class SyncState:
    obj: str
    clock: list[int]


class Recorder:
    """Stateful recorder; feed events in seq order, then call ``finish``."""

    def __init__(self, t: int, page_shift: int = 12, name: str = ""):
        self.t = t
        self.page_shift = page_shift
        self.name = name
        self.threads: dict[int, ThreadState] = {}
        # all sync clocks start at zero
        self.syncs: dict[str, SyncState] = {}
        self.handles: dict[int, tuple[str, int]] = {}  # child -> (handle, create seq)
        self.done: list[SubComputation] = []
        self.sync_events: list[SyncEvent] = []
        self.input_map: dict[int, InputRegion] = {}

    # -- subroutines ---------------------------------------------------------

    def init_thread(self, tid: int) -> ThreadState:
        if tid in self.threads:
            raise RecorderError(f"thread {tid} initialized twice")
        if not 1 <= tid <= self.t:
            raise RecorderError(f"unknown thread {tid}")
        ts = ThreadState(tid=tid, alpha=0, beta=0, clock=[0] * self.t)
        self.threads[tid] = ts
        return ts

    def start_sub_computation(self, ts: ThreadState, entry_label: str | None = None) -> _OpenSub:
        ts.beta = 0
        ts.clock[ts.tid - 1] = ts.alpha
        sub = _OpenSub(index=ts.alpha, clock=VectorClock(tuple(ts.clock)))
        if entry_label is not None:
            sub.thunks.append(Thunk(0, entry_label))
        ts.current = sub
        return sub

    def on_memory_access(self, ts: ThreadState, kind: str, page: int) -> None:
        sub = ts.current
        mode = sub.protection.get(page)
        if kind == "load":
            sub.reads.add(page)
            if mode is None:
                sub.protection[page] = "r"
                sub.faults += 1
        else:
            sub.writes.add(page)
            if mode != "w":
                sub.protection[page] = "w"
                sub.faults += 1

    def on_branch(self, ts: ThreadState, label: str | None, taken: str | None) -> None:
        ts.beta += 1
        ts.current.thunks.append(Thunk(ts.beta, label, taken))

    def on_synchronization(self, ts: ThreadState, op: str, obj: str) -> None:
        s = self.syncs.get(obj)
        if s is None:
            s = self.syncs[obj] = SyncState(obj, [0] * self.t)
        if op == "rel":
            s.clock = [max(a, b) for a, b in zip(s.clock, ts.clock)]
        elif op == "acq":
            ts.clock = [max(a, b) for a, b in zip(s.clock, ts.clock)]
        else:
            raise RecorderError(f"unknown sync op {op!r}")

    # -- driver ---------------------------------------------------------------

    def _close(self, ts: ThreadState, terminator: SyncOp | None) -> SubComputationId:
        sub = ts.current
        sid = SubComputationId(ts.tid, sub.index)
        span = None if sub.first_seq is None else (sub.first_seq, sub.last_seq)
        self.done.append(SubComputation(
            id=sid, clock=sub.clock, read_set=frozenset(sub.reads),
            write_set=frozenset(sub.writes), thunks=tuple(sub.thunks),
            terminator=terminator, span=span, faults=sub.faults,
        ))
        ts.current = None
        return sid

    def _thread_for(self, e: Event) -> ThreadState:
        ts = self.threads.get(e.tid)
        if ts is None:
            ts = self.init_thread(e.tid)
            handle = self.handles.get(e.tid)
            if handle is not None:
                # a created thread starts by acquiring its handle
                self.on_synchronization(ts, "acq", handle[0])
                self.sync_events.append(SyncEvent(
                    e.seq, e.tid, "acq", handle[0], "thread_handle",
                    SubComputationId(e.tid, 0), implicit=True))
            self.start_sub_computation(ts)
        elif ts.exited:
            raise RecorderError(f"seq {e.seq}: event for exited thread {e.tid}")
        return ts

    def feed(self, e: Event) -> None:
        if e.ev == "map_input":
            self._thread_for(e)
            lo, hi = e.range
            for p in range(lo, hi):
                off = (p - lo) << self.page_shift
                self.input_map[p] = InputRegion(e.input, off, off + (1 << self.page_shift))
            return
        ts = self._thread_for(e)
        if e.is_sync:
            self._sync(ts, e)
            return
        sub = ts.current
        if not sub.thunks:
            sub.thunks.append(Thunk(0, e.label))
        if sub.first_seq is None:
            sub.first_seq = e.seq
        sub.last_seq = e.seq
        if e.ev in ("load", "store"):
            self.on_memory_access(ts, e.ev, e.page)
        elif e.ev == "branch":
            self.on_branch(ts, e.label, e.taken)

    def _sync(self, ts: ThreadState, e: Event) -> None:
        op = e.sync_op
        kind = "thread_handle" if e.ev in ("create", "exit") else e.kind
        closed = self._close(ts, SyncOp(e.seq, op, e.obj, kind))
        ts.alpha += 1
        ts.clock[ts.tid - 1] = ts.alpha
        self.on_synchronization(ts, op, e.obj)
        if e.ev == "create":
            self.handles[e.child] = (e.obj, e.seq)
        if e.ev == "exit":
            ts.exited = True
            self.sync_events.append(SyncEvent(e.seq, ts.tid, op, e.obj, kind, closed))
            return
        opened = self.start_sub_computation(ts)
        sub = closed if op == "rel" else SubComputationId(ts.tid, opened.index)
        self.sync_events.append(SyncEvent(e.seq, ts.tid, op, e.obj, kind, sub))

    def finish(self) -> RecordedExecution:
        for tid in sorted(self.threads):
            ts = self.threads[tid]
            if ts.current is not None:
                self._close(ts, None)
        subs = tuple(sorted(self.done, key=lambda s: s.id))
        return RecordedExecution(
            t=self.t, page_shift=self.page_shift, sub_computations=subs,
            sync_events=tuple(self.sync_events), input_map=dict(self.input_map),
            name=self.name,
        )


def record(trace: Trace) -> RecordedExecution:
    rec = Recorder(trace.t, trace.page_shift, trace.header.name)
    for e in trace.events:
        try:
            rec.feed(e)
        except TraceError:
            raise
        except (RecorderError, KeyError, TypeError) as exc:
            raise RecorderError(f"seq {e.seq}: {exc}") from exc
    out = rec.finish()
    log.debug("recorded %d sub-computations, %d sync events", len(out.sub_computations), len(out.sync_events))
    return out
