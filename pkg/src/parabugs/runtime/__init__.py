"""Multi-worker execution of computation schedules."""

from .collectives import (
    Communicator,
    ProcessGroup,
    SoloCommunicator,
    ThreadGroup,
    all_gather,
    all_reduce_sum,
)
from .engine import RunResult, WorkerGroup, expected_collectives, run_chains, run_iteration
from .streams import RngStreams

__all__ = [
    "Communicator",
    "ProcessGroup",
    "RngStreams",
    "RunResult",
    "SoloCommunicator",
    "ThreadGroup",
    "WorkerGroup",
    "all_gather",
    "all_reduce_sum",
    "expected_collectives",
    "run_chains",
    "run_iteration",
]
