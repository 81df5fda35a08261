"""Execution trace schema, line-delimited JSON I/O and validation.

A trace file is UTF-8 text with one JSON object per line. The first line
is the header::

    {"t":2,"page_shift":12,"name":"fig1"}

optionally carrying ``"free": {obj: tokens}`` for objects that may be
acquired before any release (semaphores with a positive initial count)
and ``"arity": {obj: n}`` for barriers. Every further line is an event::

    {"seq":3,"tid":1,"ev":"store","page":1,"label":"L9"}

``ev`` is one of load, store, branch, acq, rel, create, exit, map_input.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable

from .types import DEFAULT_PAGE_SHIFT, SYNC_KINDS, TAKEN_TAGS

EVENT_KINDS = ("load", "store", "branch", "acq", "rel", "create", "exit", "map_input")
SYNC_EVENTS = frozenset({"acq", "rel", "create", "exit"})

# serialization order of optional event fields
_FIELD_ORDER = ("page", "obj", "kind", "child", "input", "range", "label", "taken")


class TraceError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class Event:
    seq: int
    tid: int
    ev: str
    page: int | None = None
    obj: str | None = None
    kind: str | None = None
    label: str | None = None
    taken: str | None = None
    child: int | None = None
    input: str | None = None
    range: tuple[int, int] | None = None

    @property
    def is_sync(self) -> bool:
        return self.ev in SYNC_EVENTS

    @property
    def sync_op(self) -> str | None:
        """'acq' or 'rel' for synchronization events, None otherwise."""
        if self.ev == "acq":
            return "acq"
        if self.ev in ("rel", "create", "exit"):
            return "rel"
        return None

    def to_json(self) -> dict:
        d = {"seq": self.seq, "tid": self.tid, "ev": self.ev}
        for name in _FIELD_ORDER:
            value = getattr(self, name)
            if value is not None:
                d[name] = list(value) if name == "range" else value
        return d

    @classmethod
    def from_json(cls, d: dict) -> Event:
        unknown = set(d) - {"seq", "tid", "ev", *_FIELD_ORDER}
        if unknown:
            raise TraceError(f"unknown event field(s) {sorted(unknown)}")
        rng = d.get("range")
        if rng is not None:
            if not (isinstance(rng, list) and len(rng) == 2):
                raise TraceError("range must be a two-element list")
            rng = (rng[0], rng[1])
        try:
            return cls(
                seq=d["seq"], tid=d["tid"], ev=d["ev"], page=d.get("page"),
                obj=d.get("obj"), kind=d.get("kind"), label=d.get("label"),
                taken=d.get("taken"), child=d.get("child"), input=d.get("input"), range=rng,
            )
        except KeyError as exc:
            raise TraceError(f"missing event field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class TraceHeader:
    t: int
    page_shift: int = DEFAULT_PAGE_SHIFT
    name: str = ""
    free: dict[str, int] = field(default_factory=dict)
    arity: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"t": self.t, "page_shift": self.page_shift, "name": self.name}
        if self.free:
            d["free"] = dict(sorted(self.free.items()))
        if self.arity:
            d["arity"] = dict(sorted(self.arity.items()))
        return d

    @classmethod
    def from_json(cls, d: dict) -> TraceHeader:
        if "t" not in d:
            raise TraceError("header is missing 't'", 1)
        free = d.get("free", {})
        if isinstance(free, list):
            free = dict.fromkeys(free, 1)
        return cls(
            t=d["t"],
            page_shift=d.get("page_shift", DEFAULT_PAGE_SHIFT),
            name=d.get("name", ""),
            free={str(k): int(v) for k, v in free.items()},
            arity={str(k): int(v) for k, v in d.get("arity", {}).items()},
        )


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    events: tuple[Event, ...] = ()

    @property
    def t(self) -> int:
        return self.header.t

    @property
    def page_shift(self) -> int:
        return self.header.page_shift


def _require(cond: bool, message: str, line: int | None) -> None:
    if not cond:
        raise TraceError(message, line)


class _Validator:
    """Single forward pass enforcing schema and synchronization invariants."""

    def __init__(self, header: TraceHeader):
        _require(isinstance(header.t, int) and header.t >= 0, "header 't' must be a non-negative integer", 1)
        _require(isinstance(header.page_shift, int) and 0 <= header.page_shift < 64, "bad page_shift", 1)
        self.header = header
        self.last_seq: int | None = None
        self.started: set[int] = set()
        self.created: dict[int, int] = {}  # child -> seq of create
        self.handle_owner: dict[str, int] = {}
        self.exited: set[int] = set()
        self.kinds: dict[str, str] = {}
        self.mutex_owner: dict[str, int] = {}
        self.tokens: dict[str, int] = dict(header.free)
        self.releases: dict[str, int] = {}
        self.barrier_arrivals: dict[tuple[str, int], int] = {}

    def check(self, e: Event, line: int) -> None:
        _require(isinstance(e.seq, int), "seq must be an integer", line)
        if self.last_seq is not None and e.seq <= self.last_seq:
            raise TraceError(f"non-monotonic seq {e.seq} after {self.last_seq}", line)
        self.last_seq = e.seq
        _require(e.ev in EVENT_KINDS, f"unknown event kind {e.ev!r}", line)
        _require(isinstance(e.tid, int) and 1 <= e.tid <= self.header.t, f"unknown ThreadId {e.tid}", line)
        _require(e.tid not in self.exited, f"event for exited thread {e.tid}", line)
        self.started.add(e.tid)
        getattr(self, "_ev_" + e.ev)(e, line)

    def _page(self, e: Event, line: int) -> None:
        _require(isinstance(e.page, int) and e.page >= 0, f"{e.ev} needs a non-negative integer 'page'", line)

    _ev_load = _page
    _ev_store = _page

    def _ev_branch(self, e: Event, line: int) -> None:
        _require(e.taken is None or e.taken in TAKEN_TAGS, f"bad taken tag {e.taken!r}", line)

    def _ev_map_input(self, e: Event, line: int) -> None:
        _require(isinstance(e.input, str) and e.input != "", "map_input needs 'input'", line)
        _require(e.range is not None and 0 <= e.range[0] < e.range[1], "map_input needs a non-empty 'range'", line)

    def _object(self, e: Event, line: int, kind: str | None = None) -> str:
        _require(isinstance(e.obj, str) and e.obj != "", f"{e.ev} needs 'obj'", line)
        kind = kind or e.kind
        _require(kind in SYNC_KINDS, f"bad sync object kind {kind!r}", line)
        _require(e.kind is None or e.kind == kind, f"{e.ev} on {e.obj!r} must have kind {kind!r}", line)
        known = self.kinds.setdefault(e.obj, kind)
        _require(known == kind, f"object {e.obj!r} changed kind from {known!r} to {kind!r}", line)
        return kind

    def _ev_create(self, e: Event, line: int) -> None:
        self._object(e, line, "thread_handle")
        c = e.child
        _require(isinstance(c, int) and 1 <= c <= self.header.t, f"create of unknown ThreadId {c}", line)
        _require(c != e.tid, "thread cannot create itself", line)
        _require(c not in self.created and c not in self.started, f"thread {c} already started", line)
        _require(e.obj not in self.handle_owner, f"handle {e.obj!r} reused", line)
        self.created[c] = e.seq
        self.handle_owner[e.obj] = c
        self.started.add(c)
        self.releases[e.obj] = self.releases.get(e.obj, 0) + 1

    def _ev_exit(self, e: Event, line: int) -> None:
        self._object(e, line, "thread_handle")
        _require(self.handle_owner.get(e.obj) == e.tid, f"thread {e.tid} exits through foreign handle {e.obj!r}", line)
        self.exited.add(e.tid)
        self.releases[e.obj] = self.releases.get(e.obj, 0) + 1

    def _ev_rel(self, e: Event, line: int) -> None:
        kind = self._object(e, line)
        obj = e.obj
        if kind == "mutex":
            _require(self.mutex_owner.get(obj) == e.tid, f"release of mutex {obj!r} not held by thread {e.tid}", line)
            del self.mutex_owner[obj]
        elif kind == "semaphore":
            self.tokens[obj] = self.tokens.get(obj, 0) + 1
        elif kind == "barrier":
            gen = 0
            key = (obj, e.tid)
            _require(key not in self.barrier_arrivals, f"thread {e.tid} arrives twice at barrier {obj!r}", line)
            arity = self.header.arity.get(obj)
            arrived = self.releases.get(obj, 0)
            if arity is not None:
                gen = arrived // arity
            self.barrier_arrivals[key] = gen
        elif kind == "thread_handle":
            raise TraceError("thread handles are released only by create/exit", line)
        self.releases[obj] = self.releases.get(obj, 0) + 1

    def _ev_acq(self, e: Event, line: int) -> None:
        kind = self._object(e, line)
        obj = e.obj
        if kind == "mutex":
            owner = self.mutex_owner.get(obj)
            _require(owner is None, f"acquire of held-exclusive mutex {obj!r} (held by thread {owner})", line)
            self.mutex_owner[obj] = e.tid
            return
        if kind == "semaphore":
            _require(self.tokens.get(obj, 0) > 0, f"acquire without prior release on semaphore {obj!r}", line)
            self.tokens[obj] -= 1
            return
        if kind == "barrier":
            gen = self.barrier_arrivals.pop((obj, e.tid), None)
            _require(gen is not None, f"thread {e.tid} leaves barrier {obj!r} without arriving", line)
            arity = self.header.arity.get(obj)
            if arity is not None:
                _require(
                    self.releases.get(obj, 0) >= (gen + 1) * arity,
                    f"barrier {obj!r} left before all {arity} participants arrived",
                    line,
                )
            return
        if kind == "thread_handle":
            child = self.handle_owner.get(obj)
            _require(child is not None, f"join on unknown handle {obj!r}", line)
            _require(child in self.exited, f"join on thread {child} before it exited", line)
            return
        _require(
            self.releases.get(obj, 0) > 0 or obj in self.header.free,
            f"acquire without prior release on {kind} {obj!r}",
            line,
        )


def validate_trace(trace: Trace) -> Trace:
    """Raise ``TraceError`` unless ``trace`` is well formed; return it otherwise."""
    v = _Validator(trace.header)
    for i, e in enumerate(trace.events):
        v.check(e, i + 2)
    return trace


def _lines(source) -> Iterable[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        return source.splitlines()
    return (ln.decode("utf-8") if isinstance(ln, bytes) else ln for ln in source)


def load_trace(source: bytes | str | IO) -> Trace:
    """Parse and validate a trace from bytes, text, or a (binary or text) stream."""
    header: TraceHeader | None = None
    validator: _Validator | None = None
    events: list[Event] = []
    for lineno, raw in enumerate(_lines(source), start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceError(f"parse error: {exc.msg}", lineno) from None
        if not isinstance(obj, dict):
            raise TraceError("record is not a JSON object", lineno)
        if header is None:
            header = TraceHeader.from_json(obj)
            validator = _Validator(header)
            continue
        try:
            e = Event.from_json(obj)
        except TraceError as exc:
            raise TraceError(str(exc), lineno) from None
        validator.check(e, lineno)
        events.append(e)
    if header is None:
        raise TraceError("empty trace: missing header line", 1)
    return Trace(header, tuple(events))


def read_trace(path: str | os.PathLike) -> Trace:
    with open(path, "rb") as fh:
        return load_trace(fh)


def save_trace(trace: Trace) -> bytes:
    """Canonical byte form; ``load_trace(save_trace(t)) == t``."""
    out = io.StringIO()
    sep = (",", ":")
    out.write(json.dumps(trace.header.to_json(), separators=sep) + "\n")
    for e in trace.events:
        out.write(json.dumps(e.to_json(), separators=sep) + "\n")
    return out.getvalue().encode("utf-8")


def write_trace(trace: Trace, path: str | os.PathLike) -> None:
    Path(path).write_bytes(save_trace(trace))


def rebucket(trace: Trace, page_shift: int) -> Trace:
    """Re-express page ids at a coarser ``page_shift``.

    Pages can only be merged, never split: the new shift must be at least
    the trace's own.
    """
    delta = page_shift - trace.page_shift
    if delta < 0:
        raise ValueError(f"cannot refine page_shift {trace.page_shift} to {page_shift}")
    if delta == 0:
        return trace
    events = []
    for e in trace.events:
        if e.page is not None:
            e = replace(e, page=e.page >> delta)
        elif e.range is not None:
            lo, hi = e.range
            e = replace(e, range=(lo >> delta, ((hi - 1) >> delta) + 1))
        events.append(e)
    return Trace(replace(trace.header, page_shift=page_shift), tuple(events))


# -- primitive desugaring ----------------------------------------------------

def desugar_primitive(prim: str, *objs: str) -> list[tuple[str, str]]:
    """Map a pthreads-style call onto the calling thread's (op, obj) steps.

    ``thread_create(handle)`` yields the parent's release only; the child
    performs an implicit acquire of the same handle before its first event.
    """
    def arity(n):
        if len(objs) != n:
            raise ValueError(f"{prim} takes {n} object(s), got {len(objs)}")

    if prim in ("lock", "sem_wait", "thread_join"):
        arity(1)
        return [("acq", objs[0])]
    if prim in ("unlock", "sem_post", "cond_signal", "cond_broadcast", "thread_create", "thread_exit"):
        arity(1)
        return [("rel", objs[0])]
    if prim == "barrier_wait":
        arity(1)
        return [("rel", objs[0]), ("acq", objs[0])]
    if prim == "cond_wait":
        arity(2)
        cond, mutex = objs
        return [("rel", mutex), ("acq", cond), ("acq", mutex)]
    raise ValueError(f"unknown primitive {prim!r}")
