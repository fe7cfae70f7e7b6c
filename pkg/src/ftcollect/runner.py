"""Wire a Scenario to the simulator: inputs, entry functions, and a
single-call runner."""
from __future__ import annotations

from typing import Any, Callable

from .collectives import (
    REDUCTIONS,
    CollectiveConfig,
    run_allreduce,
    run_reduce,
)
from .oracle import Scenario
from .simnet import RunResult, SimTransport, Simulator


def input_values(scenario: Scenario, override: list[int] | None = None) -> dict[int, int]:
    if override is not None:
        if len(override) != scenario.n:
            raise ValueError(f"need {scenario.n} input values, got {len(override)}")
        return dict(enumerate(override))
    kind = scenario.inputs
    if kind == "probe":
        return {p: 1 << p for p in range(scenario.n)}
    if kind == "ids":
        return {p: p for p in range(scenario.n)}
    if kind == "ones":
        return {p: 1 for p in range(scenario.n)}
    raise ValueError(f"unknown inputs kind {kind!r}")


def collective_config(scenario: Scenario) -> CollectiveConfig:
    try:
        op = REDUCTIONS[scenario.op]
    except KeyError:
        raise ValueError(f"unknown reduction {scenario.op!r}") from None
    return CollectiveConfig(
        n=scenario.n,
        f=scenario.f,
        op=op,
        scheme=scenario.scheme,
        candidates=scenario.candidates,
    )


def make_entry(
    scenario: Scenario, pid: int, values: dict[int, int]
) -> Callable[[SimTransport], Any]:
    cfg = collective_config(scenario)
    if scenario.collective == "reduce":
        return lambda tp: run_reduce(tp, cfg, scenario.op_id, scenario.root, values[tp.pid])
    if scenario.collective == "allreduce":
        return lambda tp: run_allreduce(tp, cfg, scenario.op_id, values[tp.pid])
    raise ValueError(f"unknown collective {scenario.collective!r}")


def run_scenario(scenario: Scenario, inputs: list[int] | None = None) -> RunResult:
    values = input_values(scenario, inputs)
    entries = {p: make_entry(scenario, p, values) for p in range(scenario.n)}
    sim = Simulator(
        scenario.n,
        entries,
        script=scenario.script,
        seed=scenario.seed,
        latency=scenario.latency,
    )
    return sim.run()
