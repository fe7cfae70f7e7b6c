"""Fault-tolerant reduce, broadcast, and allreduce over the transport
contract.

Reduce runs an up-correction phase (groups of f+1 exchange their
original inputs) followed by a plain reduction up the correction tree.
The root picks the first child report that carries no failure for its
subtree.  Allreduce is reduce to a rotating root candidate followed by a
broadcast of the result; a preoperationally failed root is detected
consistently and the next candidate is tried.

The broadcast here is a reference implementation of the semantic
contract allreduce relies on (tree dissemination plus down-correction
within the same groups); it is not tuned beyond that.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Any, Callable

from .topology import (
    CorrectionGroup,
    IfTree,
    build_if_tree,
    correction_group,
    subtree_index,
    swap_with_zero,
)
from .trace import bcast_round_op, reduce_round_op
from .transport import (
    PHASE_BCORR,
    PHASE_BTREE,
    PHASE_TREE,
    PHASE_UP,
    SENDER_FAILED,
    Transport,
)

SCHEMES = ("list", "count", "bit")

REDUCTIONS: dict[str, Callable[[Any, Any], Any]] = {
    "sum": operator.add,
    "max": max,
    "bor": operator.or_,
}


class NoFailureFreeSubtree(RuntimeError):
    """Every child of the root failed or reported a failed subtree; only
    reachable with more than f failures."""


class CandidatesExhausted(RuntimeError):
    """All root candidates were tried; only reachable with more than f
    candidate failures."""


class SchemeMismatch(ValueError):
    pass


class _RootFailed:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ROOT_FAILED"


ROOT_FAILED = _RootFailed()


@dataclass(frozen=True)
class FailureInfo:
    """Failure description accumulated up the tree, in one of three
    schemes: full id list, count plus subtree bit, or bare bit."""

    scheme: str
    failed: frozenset[int] = frozenset()
    count: int = 0
    bit: bool = False

    @classmethod
    def empty(cls, scheme: str) -> "FailureInfo":
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        return cls(scheme)

    def with_group_failure(self, p: int) -> "FailureInfo":
        """Record a partner that failed during up-correction.  The bit
        scheme is untouched in this phase."""
        if self.scheme == "list":
            return FailureInfo("list", self.failed | {p})
        if self.scheme == "count":
            return FailureInfo("count", count=self.count + 1, bit=self.bit)
        return self

    def with_tree_failure(self, p: int) -> "FailureInfo":
        """Record a child that failed during the tree phase."""
        if self.scheme == "list":
            return FailureInfo("list", self.failed | {p})
        if self.scheme == "count":
            return FailureInfo("count", count=self.count + 1, bit=True)
        return FailureInfo("bit", bit=True)

    def merged(self, other: "FailureInfo") -> "FailureInfo":
        if self.scheme != other.scheme:
            raise SchemeMismatch(f"{self.scheme} vs {other.scheme}")
        if self.scheme == "list":
            return FailureInfo("list", self.failed | other.failed)
        if self.scheme == "count":
            return FailureInfo(
                "count", count=self.count + other.count, bit=self.bit or other.bit
            )
        return FailureInfo("bit", bit=self.bit or other.bit)

    def flags_subtree(self, k: int, f: int) -> bool:
        """Does this info indicate a failure inside subtree k?  The list
        scheme answers by residue membership; the others carry the
        tree-phase bit."""
        if self.scheme == "list":
            return any(q >= 1 and subtree_index(q, f) == k for q in self.failed)
        return self.bit

    def note(self) -> str:
        if self.scheme == "list":
            return "list:" + ",".join(str(q) for q in sorted(self.failed))
        if self.scheme == "count":
            return f"count:{self.count}:{int(self.bit)}"
        return f"bit:{int(self.bit)}"


def merge_failure_info(scheme: str, acc: FailureInfo, incoming: FailureInfo) -> FailureInfo:
    if acc.scheme != scheme or incoming.scheme != scheme:
        raise SchemeMismatch(f"expected {scheme}")
    return acc.merged(incoming)


@dataclass(frozen=True)
class ReducePayload:
    value: Any
    failinfo: FailureInfo | None = None

    def trace_note(self) -> str:
        if self.failinfo is None:
            return f"v={self.value}"
        return f"v={self.value} fi={self.failinfo.note()}"


@dataclass(frozen=True)
class CollectiveConfig:
    n: int
    f: int
    op: Callable[[Any, Any], Any] = operator.add
    scheme: str = "list"
    candidates: tuple[int, ...] = ()

    def root_candidates(self) -> tuple[int, ...]:
        if self.candidates:
            return self.candidates
        return tuple(range(min(self.f + 1, self.n)))


@dataclass(frozen=True)
class RootState:
    """What the root needs to complete a child's report: its group (if
    any), its raw input, and its post-up-correction accumulator."""

    group: CorrectionGroup | None
    own_value: Any
    up_value: Any


class _Renumbered:
    """Transport view in which `root` and process 0 trade ids, so the
    protocol can always treat process 0 as the root."""

    def __init__(self, inner: Transport, root: int):
        self._inner = inner
        self._root = root

    def _m(self, p: int) -> int:
        return swap_with_zero(p, self._root)

    @property
    def pid(self) -> int:
        return self._m(self._inner.pid)

    @property
    def n(self) -> int:
        return self._inner.n

    def send(self, to: int, op_id: int, phase: str, payload: Any) -> None:
        self._inner.send(self._m(to), op_id, phase, payload)

    def recv_from(self, sender: int, op_id: int, phase: str) -> Any:
        return self._inner.recv_from(self._m(sender), op_id, phase)

    def recv_any(self, candidates, op_id, phases) -> tuple[int, Any]:
        s, res = self._inner.recv_any([self._m(c) for c in candidates], op_id, phases)
        return self._m(s), res

    def record_init(self, op_id: int, note: str = "") -> None:
        self._inner.record_init(op_id, note)

    def record_deliver(self, op_id: int, note: str = "") -> None:
        self._inner.record_deliver(op_id, note)


def up_correction(
    tp: Transport, cfg: CollectiveConfig, op_id: int, value: Any, group: CorrectionGroup
) -> tuple[Any, FailureInfo]:
    """Exchange ORIGINAL inputs within the group and fold received ones
    into a local accumulator.  Sending the original input (never the
    running accumulator) is what keeps every value exactly once per
    subtree."""
    acc = value
    fi = FailureInfo.empty(cfg.scheme)
    me = tp.pid
    for p in group.members:
        if p == me:
            continue
        tp.send(p, op_id, PHASE_UP, ReducePayload(value))
        res = tp.recv_from(p, op_id, PHASE_UP)
        if res is SENDER_FAILED:
            fi = fi.with_group_failure(p)
        else:
            acc = cfg.op(acc, res.value)
    return acc, fi


def root_combine(cfg: CollectiveConfig, received: Any, sender: int, state: RootState) -> Any:
    """Complete a clean child report.  If the root's group has a member
    in the sender's subtree, the report already contains the group's
    values (including the root's); otherwise the root folds in its own
    contribution."""
    if state.group is None:
        return cfg.op(state.own_value, received)
    k = subtree_index(sender, cfg.f)
    if any(m != 0 and subtree_index(m, cfg.f) == k for m in state.group.members):
        return received
    return cfg.op(state.up_value, received)


def reduce_root(
    tp: Transport, cfg: CollectiveConfig, op_id: int, value: Any, tree: IfTree
) -> Any:
    tp.record_init(op_id)
    group = correction_group(0, cfg.n, cfg.f)
    if group is not None and len(group.members) > 1:
        up_value, _ = up_correction(tp, cfg, op_id, value, group)
    else:
        group = None
        up_value = value
    state = RootState(group, value, up_value)
    remaining = set(tree.children(0))
    if not remaining:
        tp.record_deliver(op_id, f"value={value}")
        return value
    while remaining:
        sender, res = tp.recv_any(remaining, op_id, (PHASE_TREE,))
        remaining.discard(sender)
        if res is SENDER_FAILED:
            continue
        assert res.failinfo is not None
        if res.failinfo.flags_subtree(subtree_index(sender, cfg.f), cfg.f):
            continue
        result = root_combine(cfg, res.value, sender, state)
        tp.record_deliver(op_id, f"value={result}")
        return result
    if cfg.n - 1 <= cfg.f:
        # Degenerate tree: every process is grouped with the root, so the
        # up-correction accumulator already covers all received values.
        tp.record_deliver(op_id, f"value={up_value}")
        return up_value
    raise NoFailureFreeSubtree(
        f"op {op_id}: every subtree failed or reported a failure"
    )


def reduce_non_root(
    tp: Transport, cfg: CollectiveConfig, op_id: int, value: Any, tree: IfTree
) -> None:
    tp.record_init(op_id)
    me = tp.pid
    group = correction_group(me, cfg.n, cfg.f)
    assert group is not None
    if len(group.members) > 1:
        acc, fi = up_correction(tp, cfg, op_id, value, group)
    else:
        acc, fi = value, FailureInfo.empty(cfg.scheme)
    for c in tree.children(me):
        res = tp.recv_from(c, op_id, PHASE_TREE)
        if res is SENDER_FAILED:
            fi = fi.with_tree_failure(c)
        else:
            acc = cfg.op(acc, res.value)
            fi = fi.merged(res.failinfo)
    parent = tree.parent(me)
    assert parent is not None
    tp.send(parent, op_id, PHASE_TREE, ReducePayload(acc, fi))
    tp.record_deliver(op_id, f"value={acc}")


def run_reduce(
    tp: Transport, cfg: CollectiveConfig, op_id: int, root: int, value: Any
) -> Any:
    """Dispatch to the root or non-root side; only the root's call
    returns the reduction."""
    if not 0 <= root < cfg.n:
        raise ValueError(f"root {root} out of range")
    if root != 0:
        tp = _Renumbered(tp, root)
    tree = build_if_tree(cfg.n, cfg.f)
    if tp.pid == 0:
        return reduce_root(tp, cfg, op_id, value, tree)
    reduce_non_root(tp, cfg, op_id, value, tree)
    return None


def run_broadcast(
    tp: Transport, cfg: CollectiveConfig, op_id: int, root: int, value: Any = None
) -> Any:
    """Disseminate the root's value down the tree, then flood each
    up-correction group sideways so one surviving tree path per group
    reaches everyone.  Returns the value, or ROOT_FAILED consistently at
    all live processes when the root failed preoperationally."""
    if root != 0:
        tp = _Renumbered(tp, root)
    tree = build_if_tree(cfg.n, cfg.f)
    me = tp.pid
    group = correction_group(me, cfg.n, cfg.f)
    partners = group.partners_of(me) if group is not None else ()
    tp.record_init(op_id)
    if me == 0:
        for c in tree.children(0):
            tp.send(c, op_id, PHASE_BTREE, ReducePayload(value))
        for m in partners:
            tp.send(m, op_id, PHASE_BCORR, ReducePayload(value))
        tp.record_deliver(op_id, f"value={value}")
        return value
    parent = tree.parent(me)
    sources = set(partners) | {parent, 0}
    received_from: set[int] = set()
    val = None
    got = False
    while not got:
        sender, res = tp.recv_any(sources, op_id, (PHASE_BTREE, PHASE_BCORR))
        if res is SENDER_FAILED:
            if sender == 0:
                return ROOT_FAILED
            sources.discard(sender)
            continue
        received_from.add(sender)
        val = res.value
        got = True
    for c in tree.children(me):
        tp.send(c, op_id, PHASE_BTREE, ReducePayload(val))
    for m in partners:
        if m not in received_from:
            tp.send(m, op_id, PHASE_BCORR, ReducePayload(val))
    tp.record_deliver(op_id, f"value={val}")
    return val


def successor(r: int, candidates: tuple[int, ...]) -> int:
    """Next root candidate in the fixed order shared by all processes."""
    i = candidates.index(r)
    if i + 1 >= len(candidates):
        raise CandidatesExhausted(f"no candidate after {r} in {candidates}")
    return candidates[i + 1]


def run_allreduce(tp: Transport, cfg: CollectiveConfig, op_id: int, value: Any) -> Any:
    """Reduce to the current candidate root, broadcast the result, and
    rotate the root until a broadcast succeeds."""
    cands = cfg.root_candidates()
    tp.record_init(op_id)
    r = cands[0]
    rnd = 0
    while True:
        red = run_reduce(tp, cfg, reduce_round_op(op_id, rnd), r, value)
        res = run_broadcast(tp, cfg, bcast_round_op(op_id, rnd), r, red)
        if res is not ROOT_FAILED:
            tp.record_deliver(op_id, f"value={res}")
            return res
        r = successor(r, cands)
        rnd += 1
