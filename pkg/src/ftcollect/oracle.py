"""Independent brute-force checkers for reduce and allreduce runs.

Everything here works from the scenario, closed-form count formulas, and
the trace alone; protocol internals are never consulted.  The standard
probe input is value(p) = 2**p with integer sum, which turns inclusion
multiplicity into an exactly decodable bit set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

from .failmodel import FailureScript
from .trace import OPID_STRIDE, TraceEvent, rounds_in


class MalformedTrace(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    n: int
    f: int
    script: FailureScript = field(default_factory=FailureScript)
    op: str = "sum"
    collective: str = "reduce"
    root: int = 0
    candidates: tuple[int, ...] = ()
    scheme: str = "list"
    seed: int = 0
    op_id: int = 1
    inputs: str = "probe"
    latency: tuple[int, int] = (1, 10)
    transport: str = "sim"

    def root_candidates(self) -> tuple[int, ...]:
        if self.candidates:
            return self.candidates
        return tuple(range(min(self.f + 1, self.n)))


@dataclass
class Verdict:
    violated: list[str] = field(default_factory=list)
    evidence: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violated

    def fail(self, prop: str, why: str) -> None:
        self.violated.append(prop)
        self.evidence.append(f"{prop}: {why}")

    def render(self, props: Iterable[str]) -> str:
        lines = []
        for p in props:
            mark = "FAIL" if p in self.violated else "pass"
            extra = next((e for e in self.evidence if e.startswith(p + ":")), "")
            lines.append(f"{p} {mark}{' ' + extra if extra else ''}")
        return "\n".join(lines)


# -- closed-form counts ----------------------------------------------


def expected_upcorrection_messages(n: int, f: int) -> int:
    """f(f+1)*floor((n-1)/(f+1)) + a(a-1) with a = ((n-1) mod (f+1)) + 1."""
    if n < 1 or f < 0:
        raise ValueError(f"invalid n={n}, f={f}")
    a = (n - 1) % (f + 1) + 1
    return f * (f + 1) * ((n - 1) // (f + 1)) + a * (a - 1)


def expected_tree_messages(n: int) -> int:
    return n - 1


def expected_reduce_messages(n: int, f: int) -> int:
    return expected_upcorrection_messages(n, f) + expected_tree_messages(n)


def expected_broadcast_messages_upper(n: int, f: int) -> int:
    """Failure-free ceiling for the reference broadcast: tree sends plus
    one full group-flood (corrections shrink when they race ahead)."""
    return expected_tree_messages(n) + expected_upcorrection_messages(n, f)


# -- failure classification and acceptable results -------------------


def classify(n: int, script: FailureScript) -> tuple[set[int], set[int], set[int]]:
    """(live, inoperational, preoperational) by the script alone."""
    pre = {p for p in range(n) if script.preoperational(p)}
    inop = {p for p in range(n) if p in script.entries and p not in pre}
    live = set(range(n)) - pre - inop
    return live, inop, pre


@dataclass(frozen=True)
class InclusionFamily:
    """All acceptable root inclusion sets: live ⊆ S ⊆ live ∪ inop."""

    required: frozenset[int]
    optional: frozenset[int]

    def __contains__(self, s) -> bool:
        s = frozenset(s)
        return self.required <= s <= self.required | self.optional

    def enumerate(self) -> list[frozenset[int]]:
        opts = sorted(self.optional)
        sets = []
        for r in range(len(opts) + 1):
            for extra in combinations(opts, r):
                sets.append(self.required | frozenset(extra))
        return sets


def acceptable_inclusion_sets(scenario: Scenario) -> InclusionFamily:
    live, inop, _pre = classify(scenario.n, scenario.script)
    return InclusionFamily(frozenset(live), frozenset(inop))


def decode_bitset(value: int) -> set[int]:
    if value < 0:
        raise ValueError("probe results are non-negative")
    return {i for i in range(value.bit_length()) if value >> i & 1}


# -- trace helpers ---------------------------------------------------


def _note_value(ev: TraceEvent) -> int:
    for tok in ev.note.split():
        if tok.startswith("value="):
            return int(tok[len("value="):])
    raise MalformedTrace(f"deliver event without value: {ev.format()}")


def _ops_of(scenario: Scenario, trace: list[TraceEvent]) -> set[int]:
    """All op ids belonging to this scenario's operation (the top-level
    id plus any allreduce round sub-ids)."""
    top = scenario.op_id
    return {
        ev.op_id
        for ev in trace
        if ev.op_id is not None
        and (ev.op_id == top or ev.op_id // OPID_STRIDE == top)
    }


def _count_sends(trace: list[TraceEvent], phases: tuple[str, ...], ops: set[int]) -> int:
    return sum(
        1 for ev in trace if ev.kind == "send" and ev.phase in phases and ev.op_id in ops
    )


# -- reduce checks ---------------------------------------------------

REDUCE_PROPS = ("R1", "R2", "R3", "R4", "R5", "counts")
ALLREDUCE_PROPS = ("A1", "A2", "A3", "A4", "A5", "counts")


def check_reduce_trace(trace: list[TraceEvent], scenario: Scenario) -> Verdict:
    """R1..R5 plus message counts on a single-reduce trace.

    Bit-set decoding (R3/R4) applies only to probe inputs.
    """
    v = Verdict()
    n, op_id, root = scenario.n, scenario.op_id, scenario.root
    live, _inop, _pre = classify(n, scenario.script)
    for ev in trace:
        if ev.kind not in ("send", "recv", "fail", "init", "deliver", "confirm_failed"):
            raise MalformedTrace(f"unknown event kind {ev.kind!r}")

    inits = {ev.actor: ev.seq for ev in trace if ev.kind == "init" and ev.op_id == op_id}
    delivers = [ev for ev in trace if ev.kind == "deliver" and ev.op_id == op_id]
    root_delivers = [ev for ev in delivers if ev.actor == root]

    # R1: root delivery implies every live process init'ed before it.
    if root_delivers:
        first = min(ev.seq for ev in root_delivers)
        late = [p for p in live if p not in inits or inits[p] > first]
        if late:
            v.fail("R1", f"live processes {sorted(late)} without init before root deliver")

    # R2: at most one deliver per process per op.
    per_actor: dict[int, int] = {}
    for ev in delivers:
        per_actor[ev.actor] = per_actor.get(ev.actor, 0) + 1
    dups = {p: c for p, c in per_actor.items() if c > 1}
    if dups:
        v.fail("R2", f"multiple delivers: {dups}")

    # R3/R4: decoded root result lies in the acceptable inclusion family.
    if scenario.inputs == "probe":
        if root in live and not root_delivers:
            v.fail("R3", "live root never delivered a result")
        elif root_delivers:
            value = _note_value(root_delivers[0])
            decoded = decode_bitset(value)
            family = acceptable_inclusion_sets(scenario)
            if decoded not in family or value != sum(1 << p for p in decoded):
                v.fail(
                    "R3",
                    f"decoded {sorted(decoded)} (value {value}) outside "
                    f"live={sorted(family.required)} +opt={sorted(family.optional)}",
                )

    # R5: every live process delivers.
    missing = [p for p in live if p not in per_actor]
    if missing:
        v.fail("R5", f"live processes {sorted(missing)} never delivered")

    _check_reduce_counts(v, trace, scenario, {op_id})
    return v


def _check_reduce_counts(
    v: Verdict, trace: list[TraceEvent], scenario: Scenario, ops: set[int]
) -> None:
    n, f = scenario.n, scenario.f
    ups = _count_sends(trace, ("up_correction",), ops)
    trees = _count_sends(trace, ("tree",), ops)
    if len(scenario.script) == 0:
        if ups != expected_upcorrection_messages(n, f):
            v.fail("counts", f"up-correction sends {ups} != "
                             f"{expected_upcorrection_messages(n, f)}")
        if trees != expected_tree_messages(n):
            v.fail("counts", f"tree sends {trees} != {n - 1}")
        return
    total = ups + trees
    ceiling = expected_reduce_messages(n, f)
    # A failed root sends nothing extra to begin with, so the strict
    # decrease is only claimed for non-root failures that actually fired.
    nonroot_fail = any(
        ev.kind == "fail" and ev.actor != scenario.root for ev in trace
    )
    if nonroot_fail and total >= ceiling:
        v.fail("counts", f"sends {total} not below failure-free {ceiling}")
    elif total > ceiling:
        v.fail("counts", f"sends {total} above failure-free {ceiling}")


# -- allreduce checks ------------------------------------------------


def check_allreduce_trace(trace: list[TraceEvent], scenario: Scenario) -> Verdict:
    v = Verdict()
    n, f, op_id = scenario.n, scenario.f, scenario.op_id
    live, _inop, _pre = classify(n, scenario.script)

    inits = {ev.actor: ev.seq for ev in trace if ev.kind == "init" and ev.op_id == op_id}
    delivers = [ev for ev in trace if ev.kind == "deliver" and ev.op_id == op_id]

    # A1: any delivery implies every live process init'ed before it.
    if delivers:
        first = min(ev.seq for ev in delivers)
        late = [p for p in live if p not in inits or inits[p] > first]
        if late:
            v.fail("A1", f"live processes {sorted(late)} without init before first deliver")

    per_actor: dict[int, list[TraceEvent]] = {}
    for ev in delivers:
        per_actor.setdefault(ev.actor, []).append(ev)
    dups = {p: len(evs) for p, evs in per_actor.items() if len(evs) > 1}
    if dups:
        v.fail("A2", f"multiple delivers: {dups}")

    missing = [p for p in live if p not in per_actor]
    if missing:
        v.fail("A3", f"live processes {sorted(missing)} never delivered")

    if scenario.inputs == "probe" and per_actor:
        values = {p: _note_value(evs[0]) for p, evs in per_actor.items()}
        distinct = set(values.values())
        if len(distinct) != 1:
            v.fail("A5", f"disagreeing results: {values}")
        else:
            value = distinct.pop()
            decoded = decode_bitset(value)
            family = acceptable_inclusion_sets(scenario)
            if not family.required <= decoded:
                v.fail("A4", f"decoded {sorted(decoded)} misses live "
                             f"{sorted(family.required - decoded)}")
            if decoded not in family or value != sum(1 << p for p in decoded):
                v.fail("A5", f"decoded {sorted(decoded)} (value {value}) not acceptable")

    ops = _ops_of(scenario, trace)
    total = _count_sends(
        trace,
        ("up_correction", "tree", "broadcast_tree", "broadcast_correction"),
        ops,
    )
    per_round = expected_reduce_messages(n, f) + expected_broadcast_messages_upper(n, f)
    if total > (f + 1) * per_round:
        v.fail("counts", f"sends {total} above (f+1)-fold bound {(f + 1) * per_round}")
    return v


def allreduce_rounds(trace: list[TraceEvent], scenario: Scenario) -> list[int]:
    return rounds_in(
        scenario.op_id, {ev.op_id for ev in trace if ev.op_id is not None}
    )


def check_trace(trace: list[TraceEvent], scenario: Scenario) -> Verdict:
    if scenario.collective == "reduce":
        return check_reduce_trace(trace, scenario)
    if scenario.collective == "allreduce":
        return check_allreduce_trace(trace, scenario)
    raise ValueError(f"unknown collective {scenario.collective!r}")


def verdict_props(scenario: Scenario) -> tuple[str, ...]:
    return REDUCE_PROPS if scenario.collective == "reduce" else ALLREDUCE_PROPS


# -- failure-information scheme equivalence --------------------------


def tree_failinfo_notes(trace: list[TraceEvent]) -> list[tuple[int, int, int, str]]:
    """(actor, peer, op, fi-note) for every tree-phase send."""
    out = []
    for ev in trace:
        if ev.kind != "send" or ev.phase != "tree":
            continue
        fi = next((tok[3:] for tok in ev.note.split() if tok.startswith("fi=")), None)
        if fi is None:
            raise MalformedTrace(f"tree send without failure info: {ev.format()}")
        out.append((ev.actor, ev.peer, ev.op_id, fi))
    return out


def check_scheme_equivalence(
    list_trace: list[TraceEvent],
    count_trace: list[TraceEvent],
    bit_trace: list[TraceEvent],
) -> Verdict:
    """On identical runs, the count scheme's count must equal the list's
    cardinality and the bit must match at every tree-phase message."""
    v = Verdict()
    lst = tree_failinfo_notes(list_trace)
    cnt = tree_failinfo_notes(count_trace)
    bit = tree_failinfo_notes(bit_trace)
    keys = [t[:3] for t in lst]
    if [t[:3] for t in cnt] != keys or [t[:3] for t in bit] != keys:
        v.fail("scheme", "message sequences differ between schemes")
        return v
    for (a, p, o, li), (_, _, _, ci), (_, _, _, bi) in zip(lst, cnt, bit):
        ids = [x for x in li[len("list:"):].split(",") if x]
        ccount, cbit = ci[len("count:"):].split(":")
        bbit = bi[len("bit:"):]
        if int(ccount) != len(ids):
            v.fail("scheme", f"send {a}->{p} op {o}: count {ccount} != |list| {len(ids)}")
        if cbit != bbit:
            v.fail("scheme", f"send {a}->{p} op {o}: bits differ ({ci} vs {bi})")
    return v
