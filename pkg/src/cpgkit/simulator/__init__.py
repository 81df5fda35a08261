"""Workload DSL interpreter producing traces under explicit schedules."""

from .dsl import DslError, Program, load_program, parse_program
from .machine import (
    BoundExceeded,
    Deadlock,
    InfeasibleSchedule,
    MemoryImage,
    RunResult,
    Schedule,
    SimulationError,
    enumerate_schedules,
    run,
)
from .replay import sequential_replay

__all__ = [
    "BoundExceeded", "Deadlock", "DslError", "InfeasibleSchedule", "MemoryImage",
    "Program", "RunResult", "Schedule", "SimulationError", "enumerate_schedules",
    "load_program", "parse_program", "run", "sequential_replay",
]
