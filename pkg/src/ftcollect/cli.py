"""Operator harness: run scenarios (simulator or sockets), sweep (n, f)
grids against the count formulas, and re-check traces offline.

Exit codes: 0 oracle pass, 1 property violation, 2 usage/parse error.
"""
from __future__ import annotations

import argparse
import random
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from .collectives import CandidatesExhausted, NoFailureFreeSubtree
from .failmodel import FailurePoint, FailureScript
from .oracle import (
    MalformedTrace,
    Scenario,
    allreduce_rounds,
    check_trace,
    classify,
    decode_bitset,
    expected_upcorrection_messages,
    verdict_props,
)
from .runner import collective_config, input_values, run_scenario
from .scenariofile import format_scenario, parse_scenario
from .simnet import DeadlockError
from .tcpnet import TcpTransport, WorkerKilled, format_registry, free_ports, parse_registry
from .trace import format_trace, parse_trace


def _phase_counts(trace) -> dict[str, int]:
    counts = {p: 0 for p in ("up_correction", "tree", "broadcast_tree", "broadcast_correction")}
    for ev in trace:
        if ev.kind == "send":
            counts[ev.phase] += 1
    return counts


def cmd_run(args) -> int:
    try:
        scn = parse_scenario(Path(args.scenario).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.inputs:
        scn = _replace(scn, inputs=args.inputs)
    if scn.transport == "tcp":
        return _run_tcp(scn, args)
    try:
        res = run_scenario(scn)
    except (DeadlockError, CandidatesExhausted, NoFailureFreeSubtree) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    if args.trace:
        Path(args.trace).write_text(format_trace(res.trace))
    live, _, _ = classify(scn.n, scn.script)
    if scn.collective == "reduce":
        value = res.returns.get(scn.root)
        print(f"result {value}")
    else:
        values = {p: res.returns[p] for p in sorted(res.returns) if p in live}
        uniq = sorted(set(values.values()))
        print(f"result {uniq[0] if len(uniq) == 1 else values}")
        value = uniq[0] if len(uniq) == 1 else None
    if scn.inputs == "probe" and isinstance(value, int):
        print(f"decoded {sorted(decode_bitset(value))}")
    counts = _phase_counts(res.trace)
    print("messages " + " ".join(f"{k}={v}" for k, v in counts.items()))
    if len(scn.script) > scn.f:
        print(f"note: {len(scn.script)} scripted failures exceed f={scn.f}; "
              "guarantees do not apply, checking observed properties only")
    verdict = check_trace(res.trace, scn)
    if not args.quiet:
        print(verdict.render(verdict_props(scn)))
    return 0 if verdict.ok else 1


def cmd_check(args) -> int:
    try:
        scn = parse_scenario(Path(args.scenario).read_text())
        trace = parse_trace(Path(args.trace).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        verdict = check_trace(trace, scn)
    except MalformedTrace as exc:
        print(f"malformed trace: {exc}", file=sys.stderr)
        return 2
    print(verdict.render(verdict_props(scn)))
    return 0 if verdict.ok else 1


def _parse_range(spec: str) -> range:
    lo, _, hi = spec.partition(":")
    return range(int(lo), int(hi or lo) + 1)


def cmd_sweep(args) -> int:
    rng = random.Random(args.seed)
    rows = []
    ok = True
    for n in _parse_range(args.n_range):
        for f in _parse_range(args.f_range):
            ff = run_scenario(Scenario(n=n, f=f, seed=args.seed))
            counts = _phase_counts(ff.trace)
            formula = expected_upcorrection_messages(n, f)
            exact = counts["up_correction"] == formula and counts["tree"] == n - 1
            passed = 0
            max_rounds = 1
            for t in range(args.trials):
                scn = _random_scenario(rng, n, f)
                res = run_scenario(scn)
                v = check_trace(res.trace, scn)
                if v.ok:
                    passed += 1
                if scn.collective == "allreduce":
                    max_rounds = max(max_rounds, len(allreduce_rounds(res.trace, scn)))
            ok = ok and exact and passed == args.trials
            rows.append((n, f, formula, counts["up_correction"], n - 1,
                         counts["tree"], f"{passed}/{args.trials}", max_rounds))
    header = ("n", "f", "up_formula", "up_measured", "tree_formula",
              "tree_measured", "trials_pass", "max_rounds")
    widths = [max(len(str(x)) for x in [h] + [r[i] for r in rows])
              for i, h in enumerate(header)]
    print("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(str(x).rjust(w) for x, w in zip(row, widths)))
    if args.records:
        with open(args.records, "w") as fh:
            for row in rows:
                fh.write(" ".join(f"{k}={v}" for k, v in zip(header, row)) + "\n")
    return 0 if ok else 1


def _random_scenario(rng: random.Random, n: int, f: int) -> Scenario:
    collective = rng.choice(("reduce", "allreduce"))
    cands = tuple(range(min(f + 1, n)))
    k = rng.randint(0, f)
    entries: dict[int, FailurePoint] = {}
    for p in rng.sample(range(n), min(k, n)):
        if collective == "allreduce" and p in cands:
            entries[p] = FailurePoint()
        elif rng.random() < 0.5:
            entries[p] = FailurePoint()
        else:
            entries[p] = FailurePoint(rng.randint(0, f + 2))
    if collective == "allreduce" and all(c in entries for c in cands):
        entries.pop(cands[-1])  # keep one live candidate
    if collective == "reduce" and 0 in entries:
        entries.pop(0)  # reduce guarantees assume a live root
    return Scenario(
        n=n, f=f, collective=collective, script=FailureScript(entries),
        scheme=rng.choice(("list", "count", "bit")), seed=rng.randrange(1 << 30),
    )


def _replace(scn: Scenario, **kw) -> Scenario:
    from dataclasses import replace
    return replace(scn, **kw)


# -- TCP orchestration -----------------------------------------------


def launch_local(
    scn: Scenario,
    probe_timeout: float = 0.5,
    probes: int = 3,
    kill_after_ready: tuple[int, ...] = (),
    timeout: float = 60.0,
) -> dict[int, str]:
    """Run the scenario with one worker process per rank on localhost.

    Returns the result line per participating pid.  Workers named in
    kill_after_ready are SIGKILLed between startup and GO, emulating an
    unscripted preoperational crash.
    """
    with tempfile.TemporaryDirectory() as tmp:
        ports = free_ports(scn.n)
        reg = {p: ("127.0.0.1", ports[p]) for p in range(scn.n)}
        regfile = Path(tmp) / "registry.txt"
        regfile.write_text(format_registry(reg))
        scnfile = Path(tmp) / "scenario.scn"
        scnfile.write_text(format_scenario(scn))
        procs: dict[int, subprocess.Popen] = {}
        for pid in range(scn.n):
            if scn.script.preoperational(pid):
                continue  # never started: preoperational failure
            procs[pid] = subprocess.Popen(
                [sys.executable, "-m", "ftcollect", "worker",
                 "--scenario", str(scnfile), "--registry", str(regfile),
                 "--pid", str(pid), "--sync",
                 "--probe-timeout", str(probe_timeout), "--probes", str(probes)],
                stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True,
            )
        deadline = time.monotonic() + timeout
        try:
            for pid, proc in procs.items():
                line = proc.stdout.readline().strip()
                if line != "READY":
                    raise RuntimeError(f"worker {pid} failed to start: {line!r}")
            for pid in kill_after_ready:
                procs[pid].kill()
            running = {p: w for p, w in procs.items() if p not in kill_after_ready}
            for proc in running.values():
                proc.stdin.write("GO\n")
                proc.stdin.flush()
            results: dict[int, str] = {}
            for pid, proc in running.items():
                results[pid] = proc.stdout.readline().strip()
                if time.monotonic() > deadline:
                    raise RuntimeError("tcp run timed out")
            for proc in running.values():
                try:
                    proc.stdin.write("EXIT\n")
                    proc.stdin.flush()
                except OSError:
                    pass  # workers with a scripted failure exit on their own
            for proc in running.values():
                proc.wait(timeout=max(1.0, deadline - time.monotonic()))
            return results
        finally:
            for proc in procs.values():
                if proc.poll() is None:
                    proc.kill()


def _run_tcp(scn: Scenario, args) -> int:
    results = launch_local(scn)
    live, _, _ = classify(scn.n, scn.script)
    for pid in sorted(results):
        print(f"worker {pid}: {results[pid]}")
    values = {
        pid: int(line.split()[1])
        for pid, line in results.items()
        if line.startswith("RESULT")
    }
    if scn.collective == "reduce":
        value = values.get(scn.root)
        print(f"result {value}")
        return 0 if value is not None else 1
    uniq = sorted(set(values[p] for p in values if p in live))
    print(f"result {uniq[0] if len(uniq) == 1 else values}")
    return 0 if len(uniq) == 1 else 1


def cmd_worker(args) -> int:
    from .collectives import run_allreduce, run_reduce

    scn = parse_scenario(Path(args.scenario).read_text())
    registry = parse_registry(Path(args.registry).read_text())
    pid = args.pid
    fp = scn.script.point(pid)
    if fp is not None and fp.preoperational:
        print("PREFAILED", flush=True)
        return 0
    values = input_values(scn)
    tp = TcpTransport(
        pid, registry, probe_timeout=args.probe_timeout, probes=args.probes,
        fail_point=fp,
    )
    if args.sync:
        print("READY", flush=True)
        if sys.stdin.readline().strip() != "GO":
            tp.close()
            return 2
    cfg = collective_config(scn)
    try:
        if scn.collective == "reduce":
            res = run_reduce(tp, cfg, scn.op_id, scn.root, values[pid])
        else:
            res = run_allreduce(tp, cfg, scn.op_id, values[pid])
    except WorkerKilled:
        tp.close()  # a failed process stops acking probes immediately
        print("KILLED", flush=True)
        return 0
    print("DONE" if res is None else f"RESULT {res}", flush=True)
    if args.sync:
        sys.stdin.readline()  # hold sockets open (acking probes) until EXIT
    else:
        time.sleep(args.linger)
    tp.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftcollect",
        description="Fault-tolerant reduce/allreduce harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and check it")
    p.add_argument("scenario")
    p.add_argument("--trace", help="write the event trace to this path")
    p.add_argument("--quiet", action="store_true", help="suppress per-property lines")
    p.add_argument("--inputs", choices=("probe", "ids", "ones"),
                   help="override the scenario's input kind")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="re-check a recorded trace")
    p.add_argument("trace")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="sweep an (n, f) grid against the count formulas")
    p.add_argument("--n-range", default="2:16", help="lo:hi inclusive")
    p.add_argument("--f-range", default="0:3", help="lo:hi inclusive")
    p.add_argument("--trials", type=int, default=20,
                   help="random failure scenarios per cell")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--records", help="also write machine-readable records here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("worker", help="run one rank of a tcp scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--pid", type=int, required=True)
    p.add_argument("--sync", action="store_true",
                   help="print READY, then wait for GO/EXIT on stdin")
    p.add_argument("--probe-timeout", type=float, default=0.5)
    p.add_argument("--probes", type=int, default=3)
    p.add_argument("--linger", type=float, default=3.0,
                   help="seconds to keep acking probes after finishing (non-sync)")
    p.set_defaults(func=cmd_worker)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
