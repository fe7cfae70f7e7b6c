"""Trace events and their stable line format.

One event per line, fixed key order, so identical (seed, scenario) runs
can be compared byte for byte or by hash.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

KINDS = ("send", "recv", "fail", "init", "deliver", "confirm_failed")
PHASES = ("up_correction", "tree", "broadcast_tree", "broadcast_correction")

# Sub-operation ids used by allreduce rounds: round k of top-level op A
# runs a reduce under A*OPID_STRIDE + 2k and a broadcast under
# A*OPID_STRIDE + 2k + 1.  Top-level op ids must stay below OPID_STRIDE.
OPID_STRIDE = 1000


def reduce_round_op(op_id: int, rnd: int) -> int:
    return op_id * OPID_STRIDE + 2 * rnd


def bcast_round_op(op_id: int, rnd: int) -> int:
    return op_id * OPID_STRIDE + 2 * rnd + 1


def rounds_in(op_id: int, op_ids: Iterable[int]) -> list[int]:
    """Round numbers whose reduce sub-op shows up in op_ids."""
    rounds = {
        (o % OPID_STRIDE) // 2
        for o in op_ids
        if o >= OPID_STRIDE and o // OPID_STRIDE == op_id and o % 2 == 0
    }
    return sorted(rounds)


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    time: int
    kind: str
    actor: int
    peer: int | None = None
    op_id: int | None = None
    phase: str | None = None
    note: str = ""

    def format(self) -> str:
        peer = "-" if self.peer is None else str(self.peer)
        op = "-" if self.op_id is None else str(self.op_id)
        phase = "-" if self.phase is None else self.phase
        return (
            f"seq={self.seq} t={self.time} ev={self.kind} actor={self.actor} "
            f"peer={peer} op={op} phase={phase} note={self.note}"
        )

    @classmethod
    def parse(cls, line: str) -> "TraceEvent":
        head, sep, note = line.partition(" note=")
        if not sep:
            raise ValueError(f"malformed trace line: {line!r}")
        fields: dict[str, str] = {}
        for tok in head.split():
            key, _, val = tok.partition("=")
            fields[key] = val
        try:
            return cls(
                seq=int(fields["seq"]),
                time=int(fields["t"]),
                kind=fields["ev"],
                actor=int(fields["actor"]),
                peer=None if fields["peer"] == "-" else int(fields["peer"]),
                op_id=None if fields["op"] == "-" else int(fields["op"]),
                phase=None if fields["phase"] == "-" else fields["phase"],
                note=note,
            )
        except KeyError as exc:
            raise ValueError(f"malformed trace line: {line!r}") from exc


def format_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(ev.format() + "\n" for ev in events)


def parse_trace(text: str) -> list[TraceEvent]:
    return [TraceEvent.parse(line) for line in text.splitlines() if line.strip()]


def trace_hash(events: Iterable[TraceEvent]) -> str:
    return hashlib.sha256(format_trace(events).encode()).hexdigest()
