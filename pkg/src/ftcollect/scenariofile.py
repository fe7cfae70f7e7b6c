"""Scenario file parsing: one `key value...` pair per line plus `fail`
directives.  Unknown keys are rejected and the format round-trips."""
from __future__ import annotations

from .failmodel import FailureScript, parse_fail_directive
from .oracle import Scenario

_COLLECTIVES = ("reduce", "allreduce")
_OPS = ("sum", "max", "bor")
_SCHEMES = ("list", "count", "bit")
_INPUTS = ("probe", "ids", "ones")
_TRANSPORTS = ("sim", "tcp")


def parse_scenario(text: str) -> Scenario:
    fields: dict[str, object] = {}
    fails: dict[int, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        try:
            if key == "fail":
                pid, fp = parse_fail_directive(rest)
                if pid in fails:
                    raise ValueError(f"duplicate fail directive for {pid}")
                fails[pid] = fp
            elif key in ("n", "f", "root", "seed"):
                (val,) = rest
                fields[key] = int(val)
            elif key == "candidates":
                fields[key] = tuple(int(v) for v in rest)
            elif key == "latency":
                lo, hi = rest
                fields[key] = (int(lo), int(hi))
            elif key in ("collective", "op", "scheme", "inputs", "transport"):
                (val,) = rest
                allowed = {
                    "collective": _COLLECTIVES, "op": _OPS, "scheme": _SCHEMES,
                    "inputs": _INPUTS, "transport": _TRANSPORTS,
                }[key]
                if val not in allowed:
                    raise ValueError(f"{key} must be one of {allowed}, got {val!r}")
                fields[key] = val
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if "n" not in fields or "f" not in fields:
        raise ValueError("scenario must set n and f")
    n = fields["n"]
    for pid in fails:
        if not 0 <= pid < n:
            raise ValueError(f"fail directive for unknown process {pid}")
    scn = Scenario(script=FailureScript(dict(sorted(fails.items()))), **fields)
    if not 0 <= scn.root < scn.n:
        raise ValueError(f"root {scn.root} out of range")
    for c in scn.candidates:
        if not 0 <= c < scn.n:
            raise ValueError(f"candidate {c} out of range")
    return scn


def format_scenario(scn: Scenario) -> str:
    lines = [
        f"n {scn.n}",
        f"f {scn.f}",
        f"collective {scn.collective}",
        f"op {scn.op}",
        f"scheme {scn.scheme}",
        f"root {scn.root}",
    ]
    if scn.candidates:
        lines.append("candidates " + " ".join(str(c) for c in scn.candidates))
    lines += [
        f"inputs {scn.inputs}",
        f"seed {scn.seed}",
        f"latency {scn.latency[0]} {scn.latency[1]}",
        f"transport {scn.transport}",
    ]
    lines += scn.script.directives()
    return "".join(line + "\n" for line in lines)
