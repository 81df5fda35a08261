"""Deterministic interpreter with release-consistent shared memory.

Every thread reads and writes a private view of the shared variables.
At each acquire or release step the thread first commits: variables
whose value differs from the view's baseline are copied into the shared
image, so commits applied later in sync order win on overlap. An
acquire then refreshes the whole view from the shared image. Writes made
after a thread's last sync step are committed when the run ends, in
thread-id order.
"""

from __future__ import annotations

import copy
import random
import re
from dataclasses import dataclass, field

from ..trace import Event, Trace, TraceHeader
from ..types import vc_merge, VectorClock
from .dsl import SYNC_PRIMS, Instr, Program, evaluate


class SimulationError(RuntimeError):
    pass


class InfeasibleSchedule(SimulationError):
    pass


class Deadlock(SimulationError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Either run quanta ``(tid, steps)`` or an order of sync steps (one tid per step)."""

    quanta: tuple[tuple[int, int], ...] | None = None
    sync_order: tuple[int, ...] | None = None

    @classmethod
    def parse(cls, text: str) -> Schedule:
        """``"1,1,2,2"`` is a sync order, ``"1:3,2:5"`` a list of quanta."""
        text = text.strip()
        if text.startswith("sync:"):
            text = text[5:]
        if not text:
            return cls(sync_order=())
        items = [s.strip() for s in re.split(r"[,\s]+", text) if s.strip()]
        try:
            if all(":" in s for s in items):
                return cls(quanta=tuple((int(a), int(b)) for a, b in (s.split(":") for s in items)))
            return cls(sync_order=tuple(int(s) for s in items))
        except ValueError:
            raise ValueError(f"bad schedule {text!r}") from None

    def __str__(self) -> str:
        if self.quanta is not None:
            return ",".join(f"{t}:{n}" for t, n in self.quanta)
        return ",".join(str(t) for t in self.sync_order or ())


@dataclass
class MemoryImage:
    shared: dict[str, int]
    private: dict[int, dict[str, int]] = field(default_factory=dict)
    dirty: dict[int, set[str]] = field(default_factory=dict)


@dataclass
class RunResult:
    trace: Trace
    memory: MemoryImage
    sync_order: tuple[int, ...]
    races: list[str]


@dataclass
class _Thread:
    tid: int
    code: list[Instr]
    status: str  # "ready", "unstarted", "done"
    pc: int = 0
    phase: int = 0
    locals: dict[str, int] = field(default_factory=dict)
    view: dict[str, int] = field(default_factory=dict)
    base: dict[str, int] = field(default_factory=dict)
    dirty: set[str] = field(default_factory=set)
    vc: list[int] = field(default_factory=list)
    barrier_gen: int = 0


class Machine:
    def __init__(self, program: Program, seed: int = 0, emit: bool = True):
        self.program = program
        self.rng = random.Random(seed)
        self.emit = emit
        self.events: list[Event] = []
        self.seq = 0
        self.shared = {v: init for v, (init, _) in program.globals.items()}
        width = program.t
        self.threads: dict[int, _Thread] = {}
        for tid, tc in program.threads.items():
            th = _Thread(tid, tc.code, "unstarted" if tc.spawned else "ready", vc=[0] * width)
            th.vc[tid - 1] = 1
            if not tc.spawned:
                self._refresh(th)
            self.threads[tid] = th
        self.owner: dict[str, int | None] = {}
        self.tokens: dict[str, int] = {}
        self.arrivals: dict[str, int] = {}
        self.waiters: dict[str, list[int]] = {}
        self.woken: dict[str, set[int]] = {}
        for name, (kind, param) in program.objects.items():
            if kind == "semaphore":
                self.tokens[name] = param
            elif kind == "barrier":
                self.arrivals[name] = 0
            elif kind == "condvar":
                self.waiters[name] = []
                self.woken[name] = set()
        self.sync_vc: dict[str, list[int]] = {}
        self.sync_order: list[int] = []
        self.spawned_view: dict[int, dict[str, int]] = {}
        self.races: list[str] = []
        self._race_seen: set[tuple] = set()
        # var -> (tid, epoch) of last write; var -> {tid: epoch} of reads since
        self.last_write: dict[str, tuple[int, int]] = {}
        self.reads: dict[str, dict[int, int]] = {}

    # -- events ----------------------------------------------------------------

    def _emit(self, tid: int, ev: str, **fields) -> None:
        if self.emit:
            self.events.append(Event(seq=self.seq, tid=tid, ev=ev, **fields))
        self.seq += 1

    # -- memory ----------------------------------------------------------------

    def _refresh(self, th: _Thread, image: dict[str, int] | None = None) -> None:
        th.view = dict(self.shared if image is None else image)
        th.base = dict(th.view)
        th.dirty = set()

    def _commit(self, th: _Thread) -> None:
        for var in sorted(th.dirty):
            if th.view[var] != th.base[var]:
                self.shared[var] = th.view[var]
        th.base = dict(th.view)
        th.dirty = set()

    def _ordered(self, th: _Thread, other: int, epoch: int) -> bool:
        return other == th.tid or epoch <= th.vc[other - 1]

    def _race(self, kind: str, var: str, a: int, b: int) -> None:
        key = (kind, var, min(a, b), max(a, b))
        if key not in self._race_seen:
            self._race_seen.add(key)
            self.races.append(f"data race ({kind}) on {var!r} between threads {a} and {b}")

    def _load(self, th: _Thread, var: str, ins: Instr) -> int:
        self._emit(th.tid, "load", page=self.program.page(var), label=ins.label)
        w = self.last_write.get(var)
        if w is not None and not self._ordered(th, *w):
            self._race("write/read", var, w[0], th.tid)
        self.reads.setdefault(var, {})[th.tid] = th.vc[th.tid - 1]
        return th.view[var]

    def _store(self, th: _Thread, var: str, value: int, ins: Instr) -> None:
        self._emit(th.tid, "store", page=self.program.page(var), label=ins.label)
        w = self.last_write.get(var)
        if w is not None and not self._ordered(th, *w):
            self._race("write/write", var, w[0], th.tid)
        for u, e in self.reads.get(var, {}).items():
            if not self._ordered(th, u, e):
                self._race("read/write", var, u, th.tid)
        self.last_write[var] = (th.tid, th.vc[th.tid - 1])
        self.reads[var] = {}
        th.view[var] = value
        th.dirty.add(var)

    def _eval(self, th: _Thread, ins: Instr) -> int:
        def lookup(name):
            if name in th.locals:
                return th.locals[name]
            return self._load(th, name, ins)
        try:
            return evaluate(ins.expr.tree, lookup)
        except ZeroDivisionError:
            raise SimulationError(f"thread {th.tid} line {ins.line}: division by zero") from None

    # -- local steps -------------------------------------------------------------

    def current(self, tid: int) -> Instr:
        th = self.threads[tid]
        return th.code[th.pc]

    def at_sync(self, tid: int) -> bool:
        th = self.threads[tid]
        return th.status == "ready" and th.code[th.pc].op in ("sync", "exit")

    def _start(self, th: _Thread) -> None:
        if th.status == "unstarted":
            raise SimulationError(f"thread {th.tid} has not been spawned")

    def step_local(self, tid: int) -> None:
        """Execute one non-sync instruction."""
        th = self.threads[tid]
        ins = th.code[th.pc]
        op = ins.op
        if op == "assign":
            value = self._eval(th, ins)
            if ins.target in th.locals:
                th.locals[ins.target] = value
            else:
                self._store(th, ins.target, value, ins)
        elif op == "local":
            th.locals[ins.target] = self._eval(th, ins)
        elif op == "read":
            self._load(th, ins.target, ins)
        elif op == "if":
            taken = bool(self._eval(th, ins))
            self._emit(tid, "branch", label=ins.label, taken="taken" if taken else "not_taken")
            if not taken:
                th.pc = ins.jump
                return
        elif op == "jump":
            th.pc = ins.jump
            return
        elif op == "loop_init":
            th.locals[ins.target] = self._eval(th, ins)
        elif op == "loop_test":
            left = th.locals[ins.target]
            self._emit(tid, "branch", label=ins.label, taken="taken" if left > 0 else "not_taken")
            if left <= 0:
                th.pc = ins.jump
                return
            th.locals[ins.target] = left - 1
        elif op == "map_input":
            pages = [self.program.page(v) for v in ins.args]
            self._emit(tid, "map_input", input=ins.target, range=(min(pages), max(pages) + 1))
        elif op == "end":
            th.status = "done"
            return
        else:
            raise SimulationError(f"step_local on {op}")
        th.pc += 1

    def run_local(self, tid: int) -> None:
        """Run until the thread reaches a sync step or finishes."""
        th = self.threads[tid]
        self._start(th)
        while th.status == "ready" and th.code[th.pc].op not in ("sync", "exit"):
            self.step_local(tid)

    # -- sync steps ----------------------------------------------------------------

    def _step_kind(self, th: _Thread) -> tuple[str, str, str]:
        """(op, object, kind) of the thread's pending sync step."""
        ins = th.code[th.pc]
        if ins.op == "exit":
            return "rel", self.program.handle(th.tid), "thread_handle"
        prim, args = ins.prim, ins.args
        if prim == "spawn":
            return "rel", self.program.handle(args[0]), "thread_handle"
        if prim == "join":
            return "acq", self.program.handle(args[0]), "thread_handle"
        if prim == "barrier":
            return ("rel", "acq")[th.phase], args[0], "barrier"
        if prim == "cond_wait":
            cond, mutex = args
            return [("rel", mutex, "mutex"), ("acq", cond, "condvar"), ("acq", mutex, "mutex")][th.phase]
        kind = self.program.objects[args[0]][0]
        op = "acq" if prim in ("lock", "sem_wait") else "rel"
        return op, args[0], kind

    def feasible(self, tid: int) -> bool:
        th = self.threads[tid]
        if not self.at_sync(tid):
            return False
        ins = th.code[th.pc]
        if ins.op == "exit":
            return True
        prim, args = ins.prim, ins.args
        if prim == "lock" or (prim == "cond_wait" and th.phase == 2):
            return self.owner.get(args[-1]) is None
        if prim == "sem_wait":
            return self.tokens[args[0]] > 0
        if prim == "barrier" and th.phase == 1:
            return self.arrivals[args[0]] >= (th.barrier_gen + 1) * self.program.objects[args[0]][1]
        if prim == "cond_wait" and th.phase == 1:
            return tid in self.woken[args[0]]
        if prim == "join":
            return self.threads[args[0]].status == "done"
        return True

    def do_sync(self, tid: int) -> None:
        th = self.threads[tid]
        if not self.feasible(tid):
            raise InfeasibleSchedule(f"thread {tid} cannot perform its next sync step ({self.describe(tid)})")
        ins = th.code[th.pc]
        op, obj, kind = self._step_kind(th)
        prim = "exit" if ins.op == "exit" else ins.prim
        # semantics of the primitive
        if prim in ("lock",) or (prim == "cond_wait" and th.phase == 2):
            self.owner[obj] = tid
        elif prim == "unlock" or (prim == "cond_wait" and th.phase == 0):
            if self.owner.get(obj) != tid:
                raise SimulationError(f"thread {tid} line {ins.line}: releases mutex {obj!r} it does not hold")
            self.owner[obj] = None
            if prim == "cond_wait":
                self.waiters[ins.args[0]].append(tid)
        elif prim == "cond_wait" and th.phase == 1:
            self.woken[obj].discard(tid)
        elif prim == "sem_wait":
            self.tokens[obj] -= 1
        elif prim == "sem_post":
            self.tokens[obj] += 1
        elif prim == "barrier" and th.phase == 0:
            th.barrier_gen = self.arrivals[obj] // self.program.objects[obj][1]
            self.arrivals[obj] += 1
        elif prim == "cond_signal":
            if self.waiters[obj]:
                self.woken[obj].add(self.waiters[obj].pop(0))
        elif prim == "cond_broadcast":
            self.woken[obj].update(self.waiters[obj])
            self.waiters[obj].clear()
        # memory: commit, then refresh on acquire
        self._commit(th)
        if op == "acq":
            self._refresh(th)
        # event + race-detector clocks
        if prim == "spawn":
            self._emit(tid, "create", obj=obj, kind=kind, child=ins.args[0], label=ins.label)
        elif prim == "exit":
            self._emit(tid, "exit", obj=obj, kind=kind)
        else:
            self._emit(tid, op, obj=obj, kind=kind, label=ins.label)
        width = len(th.vc)
        if op == "rel":
            s = self.sync_vc.get(obj, [0] * width)
            self.sync_vc[obj] = list(vc_merge(VectorClock(tuple(s)), VectorClock(tuple(th.vc))).counters)
            th.vc[tid - 1] += 1
        else:
            s = self.sync_vc.get(obj, [0] * width)
            th.vc = list(vc_merge(VectorClock(tuple(s)), VectorClock(tuple(th.vc))).counters)
        if prim == "spawn":
            child = self.threads[ins.args[0]]
            if child.status != "unstarted":
                raise SimulationError(f"thread {child.tid} spawned twice")
            child.status = "ready"
            self._refresh(child, self.shared)
            child.vc = list(vc_merge(VectorClock(tuple(self.sync_vc[obj])), VectorClock(tuple(child.vc))).counters)
        self.sync_order.append(tid)
        # advance
        steps = SYNC_PRIMS[prim][1] if prim != "exit" else 1
        th.phase += 1
        if th.phase >= steps:
            th.phase = 0
            if prim == "exit":
                th.status = "done"
            else:
                th.pc += 1

    def sync_step(self, tid: int) -> None:
        """Run ``tid``'s local code up to its next sync step, then perform it."""
        if tid not in self.threads:
            raise InfeasibleSchedule(f"no thread {tid}")
        th = self.threads[tid]
        if th.status != "ready":
            raise InfeasibleSchedule(f"thread {tid} is {th.status}")
        self.run_local(tid)
        if th.status != "ready":
            raise InfeasibleSchedule(f"thread {tid} finished without another sync step")
        self.do_sync(tid)

    def quantum(self, tid: int, steps: int) -> None:
        th = self.threads.get(tid)
        if th is None or th.status != "ready":
            raise InfeasibleSchedule(f"quantum for thread {tid} which is not runnable")
        if self.at_sync(tid) and not self.feasible(tid):
            raise InfeasibleSchedule(f"quantum for blocked thread {tid} ({self.describe(tid)})")
        for _ in range(steps):
            if th.status != "ready":
                break
            if self.at_sync(tid):
                if not self.feasible(tid):
                    break
                self.do_sync(tid)
            else:
                self.step_local(tid)

    # -- scheduling ------------------------------------------------------------------

    def live(self) -> list[int]:
        return [t for t, th in self.threads.items() if th.status == "ready"]

    def can_progress(self, tid: int) -> bool:
        return not self.at_sync(tid) or self.feasible(tid)

    def describe(self, tid: int) -> str:
        th = self.threads[tid]
        if th.status != "ready":
            return th.status
        ins = th.code[th.pc]
        if ins.op == "exit":
            return "exiting"
        op, obj, kind = self._step_kind(th)
        what = f"{ins.prim} step {th.phase + 1} ({op} {kind} {obj!r}) at line {ins.line}"
        if kind == "mutex" and self.owner.get(obj) is not None:
            what += f", held by thread {self.owner[obj]}"
        return what

    def drain(self) -> None:
        while True:
            live = self.live()
            if not live:
                break
            runnable = [t for t in live if self.can_progress(t)]
            if not runnable:
                blocked = "; ".join(f"thread {t}: {self.describe(t)}" for t in live)
                held = ", ".join(f"{m} by thread {o}" for m, o in sorted(self.owner.items()) if o is not None)
                raise Deadlock(f"deadlock: {blocked}" + (f"; held mutexes: {held}" if held else ""))
            tid = self.rng.choice(runnable)
            self.run_local(tid)
            if self.threads[tid].status == "ready" and self.feasible(tid):
                self.do_sync(tid)
        unstarted = [t for t, th in self.threads.items() if th.status == "unstarted"]
        if unstarted:
            raise SimulationError(f"thread(s) {unstarted} declared spawned but never spawned")

    def finish(self) -> RunResult:
        for tid in sorted(self.threads):
            self._commit(self.threads[tid])
        objs = self.program.objects
        header = TraceHeader(
            t=self.program.t,
            page_shift=self.program.page_shift,
            name=self.program.name,
            free={n: p for n, (k, p) in objs.items() if k == "semaphore" and p > 0},
            arity={n: p for n, (k, p) in objs.items() if k == "barrier"},
        )
        memory = MemoryImage(
            shared=dict(self.shared),
            private={t: dict(th.view) for t, th in self.threads.items()},
            dirty={t: set(th.dirty) for t, th in self.threads.items()},
        )
        return RunResult(Trace(header, tuple(self.events)), memory, tuple(self.sync_order), list(self.races))

    def clone(self) -> Machine:
        return copy.deepcopy(self)


def run(program: Program, schedule: Schedule | None = None, seed: int = 0, strict: bool = False) -> RunResult:
    """Execute ``program`` under ``schedule``; leftover work is scheduled from ``seed``.

    With ``strict`` a detected data race raises instead of being reported.
    """
    m = Machine(program, seed)
    if schedule is not None and schedule.sync_order is not None:
        for tid in schedule.sync_order:
            m.sync_step(tid)
    elif schedule is not None and schedule.quanta is not None:
        for tid, steps in schedule.quanta:
            m.quantum(tid, steps)
    m.drain()
    result = m.finish()
    if strict and result.races:
        raise SimulationError(result.races[0])
    return result


class BoundExceeded(SimulationError):
    pass


def enumerate_schedules(program: Program, bound: int = 50) -> list[Schedule]:
    """Every feasible, deadlock-free order of sync steps, sorted.

    Local code between sync steps is deterministic, so a sync order fixes
    the whole execution. Raises BoundExceeded if any path needs more than
    ``bound`` sync steps.
    """
    found: set[tuple[int, ...]] = set()
    stack = [Machine(program, emit=False)]
    while stack:
        m = stack.pop()
        for tid in m.live():
            m.run_local(tid)
        live = m.live()
        if not live:
            found.add(tuple(m.sync_order))
            continue
        choices = [t for t in live if m.feasible(t)]
        if choices and len(m.sync_order) >= bound:
            raise BoundExceeded(f"more than {bound} sync steps")
        for i, tid in enumerate(choices):
            nxt = m if i == len(choices) - 1 else m.clone()
            nxt.do_sync(tid)
            stack.append(nxt)
    return [Schedule(sync_order=o) for o in sorted(found)]
