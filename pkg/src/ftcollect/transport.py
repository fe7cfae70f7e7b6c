"""The transport contract shared by the simulator and the TCP backend.

Protocol code is written in blocking style against this interface and
must not care which backend provides it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Protocol, runtime_checkable

PHASE_UP = "up_correction"
PHASE_TREE = "tree"
PHASE_BTREE = "broadcast_tree"
PHASE_BCORR = "broadcast_correction"


class _SenderFailed:
    """Singleton result of a receive whose sender was confirmed failed."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "SENDER_FAILED"


SENDER_FAILED = _SenderFailed()


@dataclass(frozen=True)
class Envelope:
    op_id: int
    src: int
    dst: int
    phase: str
    payload: Any


@runtime_checkable
class Transport(Protocol):
    """Reliable point-to-point sends and blocking receives with failure
    confirmation.  Sends to failed processes succeed silently."""

    @property
    def pid(self) -> int: ...

    @property
    def n(self) -> int: ...

    def send(self, to: int, op_id: int, phase: str, payload: Any) -> None: ...

    def recv_from(self, sender: int, op_id: int, phase: str) -> Any:
        """Payload from sender, or SENDER_FAILED."""
        ...

    def recv_any(
        self, candidates: Iterable[int], op_id: int, phases: Iterable[str]
    ) -> tuple[int, Any]:
        """(sender, payload) for the first matching message, or
        (c, SENDER_FAILED) for a confirmed-failed candidate with nothing
        pending.  Queued messages always win over confirmations."""
        ...

    def record_init(self, op_id: int, note: str = "") -> None: ...

    def record_deliver(self, op_id: int, note: str = "") -> None: ...
