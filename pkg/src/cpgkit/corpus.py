"""Seeded generator of valid random traces for property tests.

Each trace mixes memory accesses and branches with mutexes, semaphores,
barriers, condition variables (wait = release mutex, acquire condvar,
reacquire mutex), thread creation/exit/join and input mappings. Every
emitted trace passes validation by construction.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .trace import Event, Trace, TraceHeader, validate_trace
from .types import TAKEN_TAGS


@dataclass
class _T:
    tid: int
    state: str = "running"  # unstarted, running, cond (waiting for a signal), relock, exited
    held: set[str] = field(default_factory=set)
    cond: str | None = None
    mutex: str | None = None
    signalled: bool = False
    spawned: bool = False
    joined: bool = False


class _Gen:
    def __init__(self, seed: int, max_threads: int, max_events: int, pages: int):
        self.rng = random.Random(seed)
        rng = self.rng
        self.t = rng.randint(1, max_threads)
        static = rng.randint(1, self.t)
        self.threads = {i: _T(i, "running" if i <= static else "unstarted", spawned=i > static)
                        for i in range(1, self.t + 1)}
        self.pages = pages
        self.target = rng.randint(1, max_events)
        self.mutexes = [f"m{i}" for i in range(rng.randint(1, 3))]
        self.owner: dict[str, int] = {}
        self.sems = {f"s{i}": rng.randint(0, 2) for i in range(rng.randint(0, 2))}
        self.tokens = dict(self.sems)
        self.conds = [f"c{i}" for i in range(rng.randint(0, 2))]
        self.arity: dict[str, int] = {}
        self.events: list[Event] = []

    def emit(self, tid: int, ev: str, **kw) -> None:
        self.events.append(Event(seq=len(self.events), tid=tid, ev=ev, **kw))

    def running(self) -> list[_T]:
        return [th for th in self.threads.values() if th.state == "running"]

    def actions(self, th: _T) -> list:
        rng = self.rng
        acts = [self.access, self.access, self.access, self.branch]
        free = [m for m in self.mutexes if m not in self.owner]
        if free:
            acts.append(lambda th: self.lock(th, rng.choice(free)))
        if th.held:
            acts.append(lambda th: self.unlock(th, rng.choice(sorted(th.held))))
            if self.conds:
                acts.append(self.cond_wait)
        if self.sems:
            acts.append(lambda th: self.sem_post(th, rng.choice(sorted(self.sems))))
            ready = [s for s, n in self.tokens.items() if n > 0]
            if ready:
                acts.append(lambda th: self.sem_wait(th, rng.choice(ready)))
        if self.conds:
            acts.append(self.signal)
        if len(self.running()) >= 2 and rng.random() < 0.4:
            acts.append(self.barrier)
        if any(u.state == "unstarted" for u in self.threads.values()):
            acts.append(self.create)
        if th.spawned and not th.held:
            acts.append(self.exit)
        if any(u.state == "exited" and not u.joined and u.tid != th.tid for u in self.threads.values()):
            acts.append(self.join)
        if rng.random() < 0.3:
            acts.append(self.map_input)
        return acts

    # -- actions ------------------------------------------------------------------

    def access(self, th: _T) -> None:
        ev = self.rng.choice(("load", "store"))
        self.emit(th.tid, ev, page=self.rng.randrange(self.pages), label=f"L{self.rng.randrange(20)}")

    def branch(self, th: _T) -> None:
        self.emit(th.tid, "branch", label=f"L{self.rng.randrange(20)}", taken=self.rng.choice(TAKEN_TAGS))

    def map_input(self, th: _T) -> None:
        lo = self.rng.randrange(self.pages)
        hi = self.rng.randint(lo + 1, self.pages)
        self.emit(th.tid, "map_input", input=f"in{self.rng.randrange(3)}", range=(lo, hi))

    def lock(self, th: _T, m: str) -> None:
        self.owner[m] = th.tid
        th.held.add(m)
        self.emit(th.tid, "acq", obj=m, kind="mutex")

    def unlock(self, th: _T, m: str) -> None:
        del self.owner[m]
        th.held.discard(m)
        self.emit(th.tid, "rel", obj=m, kind="mutex")

    def sem_post(self, th: _T, s: str) -> None:
        self.tokens[s] += 1
        self.emit(th.tid, "rel", obj=s, kind="semaphore")

    def sem_wait(self, th: _T, s: str) -> None:
        self.tokens[s] -= 1
        self.emit(th.tid, "acq", obj=s, kind="semaphore")

    def cond_wait(self, th: _T) -> None:
        m = self.rng.choice(sorted(th.held))
        self.unlock(th, m)
        th.state, th.cond, th.mutex, th.signalled = "cond", self.rng.choice(self.conds), m, False

    def signal(self, th: _T) -> None:
        c = self.rng.choice(self.conds)
        self.emit(th.tid, "rel", obj=c, kind="condvar")
        waiters = [u for u in self.threads.values() if u.state == "cond" and u.cond == c and not u.signalled]
        if waiters:
            if self.rng.random() < 0.5:
                waiters = waiters[:1]
            for u in waiters:
                u.signalled = True

    def barrier(self, th: _T) -> None:
        others = [u for u in self.running() if u.tid != th.tid]
        group = [th] + self.rng.sample(others, self.rng.randint(1, len(others)))
        name = f"b{len(group)}"
        self.arity[name] = len(group)
        for u in group:
            self.emit(u.tid, "rel", obj=name, kind="barrier")
        self.rng.shuffle(group)
        for u in group:
            self.emit(u.tid, "acq", obj=name, kind="barrier")

    def create(self, th: _T) -> None:
        child = self.rng.choice([u for u in self.threads.values() if u.state == "unstarted"])
        self.emit(th.tid, "create", obj=f"h{child.tid}", kind="thread_handle", child=child.tid)
        child.state = "running"

    def exit(self, th: _T) -> None:
        self.emit(th.tid, "exit", obj=f"h{th.tid}", kind="thread_handle")
        th.state = "exited"

    def join(self, th: _T) -> None:
        done = [u for u in self.threads.values() if u.state == "exited" and not u.joined and u.tid != th.tid]
        child = self.rng.choice(done)
        child.joined = True
        self.emit(th.tid, "acq", obj=f"h{child.tid}", kind="thread_handle")

    # -- blocked threads ---------------------------------------------------------

    def wake(self) -> bool:
        """Advance one blocked condvar waiter if possible."""
        for th in self.threads.values():
            if th.state == "cond" and th.signalled:
                self.emit(th.tid, "acq", obj=th.cond, kind="condvar")
                th.state = "relock"
                return True
            if th.state == "relock" and th.mutex not in self.owner:
                self.lock(th, th.mutex)
                th.state, th.cond, th.mutex = "running", None, None
                return True
        return False

    def generate(self) -> Trace:
        while len(self.events) < self.target:
            if self.rng.random() < 0.3 and self.wake():
                continue
            live = self.running()
            if not live:
                if not self.wake():
                    break
                continue
            th = self.rng.choice(live)
            self.rng.choice(self.actions(th))(th)
        header = TraceHeader(
            t=self.t,
            page_shift=12,
            name="random",
            free={s: n for s, n in self.sems.items() if n > 0},
            arity=dict(self.arity),
        )
        return Trace(header, tuple(self.events[: max(self.target, 0)]))


def random_trace(seed: int, max_threads: int = 8, max_events: int = 200, pages: int = 6) -> Trace:
    """A valid trace with at most ``max_threads`` threads and ``max_events`` events."""
    trace = _Gen(seed, max_threads, max_events, pages).generate()
    validate_trace(trace)
    return trace
