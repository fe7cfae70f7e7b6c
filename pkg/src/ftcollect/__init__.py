"""Fault-tolerant reduce and allreduce collectives with correction
groups, plus a deterministic simulator, a brute-force oracle, and a TCP
transport."""

from .collectives import (
    ROOT_FAILED,
    CandidatesExhausted,
    CollectiveConfig,
    FailureInfo,
    NoFailureFreeSubtree,
    ReducePayload,
    run_allreduce,
    run_broadcast,
    run_reduce,
)
from .failmodel import PREOPERATIONAL, FailurePoint, FailureScript
from .oracle import Scenario, Verdict, check_trace
from .runner import run_scenario
from .simnet import DeadlockError, RunResult, Simulator
from .topology import build_if_tree, correction_group, subtree_index
from .transport import SENDER_FAILED

__all__ = [
    "ROOT_FAILED",
    "SENDER_FAILED",
    "PREOPERATIONAL",
    "CandidatesExhausted",
    "CollectiveConfig",
    "DeadlockError",
    "FailureInfo",
    "FailurePoint",
    "FailureScript",
    "NoFailureFreeSubtree",
    "ReducePayload",
    "RunResult",
    "Scenario",
    "Simulator",
    "Verdict",
    "build_if_tree",
    "check_trace",
    "correction_group",
    "run_allreduce",
    "run_broadcast",
    "run_reduce",
    "run_scenario",
    "subtree_index",
]
