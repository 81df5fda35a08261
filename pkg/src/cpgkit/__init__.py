"""Provenance graphs for multithreaded executions.

Pipeline: trace (or simulated program) -> recorded sub-computations ->
provenance graph -> queries, snapshots and export.
"""

from __future__ import annotations

from pathlib import Path

from .graph import build_cpg, export, happens_before, lineage
from .recorder import RecordedExecution, record
from .snapshot import SnapshotRing, consistent_cut, snapshot
from .trace import load_trace, read_trace, save_trace, validate_trace, write_trace
from .types import Cpg, Edge, SubComputationId, VectorClock

__version__ = "0.1.0"

FIXTURES = Path(__file__).with_name("fixtures")


def fixture(name: str) -> Path:
    """Path of a bundled DSL program, e.g. ``fixture("fig1")``."""
    path = FIXTURES / (name if name.endswith(".dsl") else name + ".dsl")
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def bundled_fixtures() -> list[str]:
    return sorted(p.stem for p in FIXTURES.glob("*.dsl"))


__all__ = [
    "Cpg", "Edge", "FIXTURES", "RecordedExecution", "SnapshotRing", "SubComputationId",
    "VectorClock", "build_cpg", "bundled_fixtures", "consistent_cut", "export", "fixture",
    "happens_before", "lineage", "load_trace", "read_trace", "record", "save_trace",
    "snapshot", "validate_trace", "write_trace",
]
