"""Declarative crash-failure scripts and the failure-monitor contract.

A process either fails preoperationally (it never takes part) or after a
fixed number of successful protocol sends.  Failure-at-send keeps
injection deterministic: after_sends(s) suppresses the (s+1)-th send and
every later one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol


@dataclass(frozen=True)
class FailurePoint:
    """after_sends is None for a preoperational failure."""
    after_sends: int | None = None

    def __post_init__(self) -> None:
        if self.after_sends is not None and self.after_sends < 0:
            raise ValueError("after_sends must be >= 0")

    @property
    def preoperational(self) -> bool:
        return self.after_sends is None


PREOPERATIONAL = FailurePoint()


@dataclass(frozen=True)
class FailureScript:
    entries: dict[int, FailurePoint] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def point(self, p: int) -> FailurePoint | None:
        return self.entries.get(p)

    def preoperational(self, p: int) -> bool:
        fp = self.entries.get(p)
        return fp is not None and fp.preoperational

    def directives(self) -> list[str]:
        return [format_fail_directive(p, fp) for p, fp in sorted(self.entries.items())]


def fails_before_sending(script: FailureScript, p: int, sent_so_far: int) -> bool:
    """True iff the script kills p at or before its next (the
    (sent_so_far+1)-th) send."""
    if sent_so_far < 0:
        raise ValueError("sent_so_far must be >= 0")
    fp = script.entries.get(p)
    if fp is None:
        return False
    if fp.preoperational:
        return True
    return sent_so_far >= fp.after_sends


def parse_fail_directive(tokens: Iterable[str]) -> tuple[int, FailurePoint]:
    """Parse ["<pid>", "pre"] or ["<pid>", "after-sends", "<s>"]."""
    toks = list(tokens)
    if len(toks) == 2 and toks[1] == "pre":
        return int(toks[0]), PREOPERATIONAL
    if len(toks) == 3 and toks[1] == "after-sends":
        return int(toks[0]), FailurePoint(int(toks[2]))
    raise ValueError(f"bad fail directive: {' '.join(toks)!r}")


def format_fail_directive(p: int, fp: FailurePoint) -> str:
    if fp.preoperational:
        return f"fail {p} pre"
    return f"fail {p} after-sends {fp.after_sends}"


class FailureMonitor(Protocol):
    """Answers liveness-confirmation queries.  Never confirms a live
    process (accuracy); eventually confirms every failed one
    (completeness).  Once true, stays true."""

    def confirm_failed(self, p: int) -> bool: ...
