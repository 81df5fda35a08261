"""Value types shared by every stage of the pipeline.

All types are immutable and serialize to a canonical JSON shape through
``to_json``/``from_json`` pairs. Thread ids are 1-based; vector clock
component ``t - 1`` belongs to thread ``t``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

DEFAULT_PAGE_SHIFT = 12

SYNC_KINDS = ("mutex", "semaphore", "barrier", "condvar", "thread_handle")
TAKEN_TAGS = ("taken", "not_taken", "indirect")
EDGE_KINDS = ("control", "sync", "data")


class StructuralError(ValueError):
    """Raised when values of incompatible shape are combined."""


def page_of(addr: int, page_shift: int = DEFAULT_PAGE_SHIFT) -> int:
    if addr < 0:
        raise ValueError(f"negative address {addr}")
    return addr >> page_shift


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True, order=True)
class SyncObjectId:
    obj: str
    kind: str

    def __post_init__(self):
        if self.kind not in SYNC_KINDS:
            raise ValueError(f"unknown sync object kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"obj": self.obj, "kind": self.kind}

    @classmethod
    def from_json(cls, d: dict) -> SyncObjectId:
        return cls(d["obj"], d["kind"])


@dataclass(frozen=True)
class VectorClock:
    counters: tuple[int, ...]

    @classmethod
    def zeros(cls, width: int) -> VectorClock:
        return cls((0,) * width)

    def __len__(self) -> int:
        return len(self.counters)

    def __getitem__(self, thread: int) -> int:
        """Component of 1-based thread id ``thread``."""
        return self.counters[thread - 1]

    def merge(self, other: VectorClock) -> VectorClock:
        return vc_merge(self, other)

    def __le__(self, other: VectorClock) -> bool:
        return vc_leq(self, other)

    def to_json(self) -> list[int]:
        return list(self.counters)

    @classmethod
    def from_json(cls, d: Iterable[int]) -> VectorClock:
        return cls(tuple(int(x) for x in d))


def _check_width(a: VectorClock, b: VectorClock) -> None:
    if len(a.counters) != len(b.counters):
        raise StructuralError(
            f"vector clock width mismatch: {len(a.counters)} != {len(b.counters)}"
        )


def vc_merge(a: VectorClock, b: VectorClock) -> VectorClock:
    """Componentwise maximum."""
    _check_width(a, b)
    return VectorClock(tuple(max(x, y) for x, y in zip(a.counters, b.counters)))


def vc_leq(a: VectorClock, b: VectorClock) -> bool:
    _check_width(a, b)
    return all(x <= y for x, y in zip(a.counters, b.counters))


_SUB_NAME = re.compile(r"^[tT](\d+)\.(\d+)$")


@dataclass(frozen=True, order=True)
class SubComputationId:
    thread: int
    index: int

    @property
    def name(self) -> str:
        return f"t{self.thread}.{self.index}"

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str) -> SubComputationId:
        m = _SUB_NAME.match(text.strip())
        if not m:
            raise ValueError(f"bad sub-computation name {text!r}, expected t<thread>.<index>")
        return cls(int(m.group(1)), int(m.group(2)))

    def to_json(self) -> dict:
        return {"thread": self.thread, "index": self.index}

    @classmethod
    def from_json(cls, d: dict) -> SubComputationId:
        return cls(d["thread"], d["index"])


@dataclass(frozen=True)
class Thunk:
    index: int
    entry_label: str | None
    taken: str | None = None

    def to_json(self) -> dict:
        return {"index": self.index, "entry_label": self.entry_label, "taken": self.taken}

    @classmethod
    def from_json(cls, d: dict) -> Thunk:
        return cls(d["index"], d["entry_label"], d["taken"])


@dataclass(frozen=True)
class SyncOp:
    """The synchronization event that ended a sub-computation."""

    seq: int
    op: str
    obj: str
    kind: str

    def to_json(self) -> dict:
        return {"seq": self.seq, "op": self.op, "obj": self.obj, "kind": self.kind}

    @classmethod
    def from_json(cls, d: dict) -> SyncOp:
        return cls(d["seq"], d["op"], d["obj"], d["kind"])


@dataclass(frozen=True)
class SubComputation:
    id: SubComputationId
    clock: VectorClock
    read_set: frozenset[int] = frozenset()
    write_set: frozenset[int] = frozenset()
    thunks: tuple[Thunk, ...] = ()
    terminator: SyncOp | None = None
    span: tuple[int, int] | None = None
    # modeled protection traps: 1 per first touch of a page, +1 on read->write upgrade
    faults: int = 0

    def to_json(self) -> dict:
        return {
            "id": self.id.to_json(),
            "clock": self.clock.to_json(),
            "read_set": sorted(self.read_set),
            "write_set": sorted(self.write_set),
            "thunks": [t.to_json() for t in self.thunks],
            "terminator": None if self.terminator is None else self.terminator.to_json(),
            "span": None if self.span is None else list(self.span),
            "faults": self.faults,
        }

    @classmethod
    def from_json(cls, d: dict) -> SubComputation:
        return cls(
            id=SubComputationId.from_json(d["id"]),
            clock=VectorClock.from_json(d["clock"]),
            read_set=frozenset(d["read_set"]),
            write_set=frozenset(d["write_set"]),
            thunks=tuple(Thunk.from_json(t) for t in d["thunks"]),
            terminator=None if d["terminator"] is None else SyncOp.from_json(d["terminator"]),
            span=None if d["span"] is None else (d["span"][0], d["span"][1]),
            faults=d.get("faults", 0),
        )


@dataclass(frozen=True)
class Edge:
    src: SubComputationId
    dst: SubComputationId
    kind: str
    page: int | None = None

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if (self.kind == "data") != (self.page is not None):
            raise ValueError("data edges carry exactly one page; other kinds carry none")

    def sort_key(self) -> tuple:
        return (self.src, self.dst, EDGE_KINDS.index(self.kind), -1 if self.page is None else self.page)

    def to_json(self) -> dict:
        d = {"from": self.src.to_json(), "to": self.dst.to_json(), "kind": self.kind}
        if self.page is not None:
            d["page"] = self.page
        return d

    @classmethod
    def from_json(cls, d: dict) -> Edge:
        return cls(
            SubComputationId.from_json(d["from"]),
            SubComputationId.from_json(d["to"]),
            d["kind"],
            d.get("page"),
        )


@dataclass(frozen=True, order=True)
class InputRegion:
    """Where a page's bytes came from: ``input`` at byte offsets [lo, hi)."""

    input: str
    lo: int
    hi: int

    def to_json(self) -> dict:
        return {"input": self.input, "offset_range": [self.lo, self.hi]}


@dataclass(frozen=True, order=True)
class InputBinding:
    input: str
    page: int
    sub: SubComputationId

    def to_json(self) -> dict:
        return {"input": self.input, "page": self.page, "sub": self.sub.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> InputBinding:
        return cls(d["input"], d["page"], SubComputationId.from_json(d["sub"]))


def input_map_to_json(input_map: dict[int, InputRegion]) -> list[dict]:
    return [{"page": p, **input_map[p].to_json()} for p in sorted(input_map)]


def input_map_from_json(items: list[dict]) -> dict[int, InputRegion]:
    return {d["page"]: InputRegion(d["input"], *d["offset_range"]) for d in items}


@dataclass(frozen=True)
class Cpg:
    vertices: dict[SubComputationId, SubComputation]
    edges: tuple[Edge, ...]
    input_map: dict[int, InputRegion] = field(default_factory=dict)
    input_bindings: tuple[InputBinding, ...] = ()

    def edges_of(self, kind: str) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]

    def edge_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(EDGE_KINDS, 0)
        for e in self.edges:
            counts[e.kind] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "vertices": [self.vertices[k].to_json() for k in sorted(self.vertices)],
            "edges": [e.to_json() for e in sorted(self.edges, key=Edge.sort_key)],
            "input_map": input_map_to_json(self.input_map),
            "input_bindings": [b.to_json() for b in sorted(self.input_bindings)],
        }

    @classmethod
    def from_json(cls, d: dict) -> Cpg:
        subs = [SubComputation.from_json(v) for v in d["vertices"]]
        return cls(
            vertices={s.id: s for s in subs},
            edges=tuple(sorted((Edge.from_json(e) for e in d["edges"]), key=Edge.sort_key)),
            input_map=input_map_from_json(d["input_map"]),
            input_bindings=tuple(sorted(InputBinding.from_json(b) for b in d["input_bindings"])),
        )
