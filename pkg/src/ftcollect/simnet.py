"""Deterministic failure-injecting network simulator.

Each simulated process runs its entry function on a private thread, but
exactly one thread is runnable at any moment: the scheduler hands
control to a process and waits until it blocks in a receive, finishes,
or dies at a scripted send.  Virtual time only advances between events,
so identical (seed, scenario) pairs produce byte-identical traces.

Message latencies are drawn from the seeded generator; per-channel FIFO
is enforced by clamping delivery times.  Messages to dead processes are
absorbed without any indication to the sender.
"""
from __future__ import annotations

import heapq
import random
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from .failmodel import FailureScript, fails_before_sending
from .trace import TraceEvent
from .transport import SENDER_FAILED, Envelope


class DeadlockError(RuntimeError):
    """No events remain but a live process is still blocked."""


class _Killed(BaseException):
    """Raised inside a process thread at its scripted failure point."""


_NEW, _RUNNING, _BLOCKED, _DONE, _DEAD = "new", "running", "blocked", "done", "dead"


@dataclass
class RunResult:
    trace: list[TraceEvent]
    returns: dict[int, Any]
    errors: dict[int, BaseException]


def _payload_note(payload: Any) -> str:
    fn = getattr(payload, "trace_note", None)
    return fn() if callable(fn) else repr(payload)


class _Proc:
    def __init__(self, pid: int, entry: Callable[["SimTransport"], Any]):
        self.pid = pid
        self.entry = entry
        self.thread: threading.Thread | None = None
        self.resume = threading.Event()
        self.yielded = threading.Event()
        self.state = _NEW
        self.mailbox: list[Envelope] = []
        self.block: tuple[frozenset, int, frozenset] | None = None
        self.wake: Any = None
        self.kill_on_resume = False
        self.result: Any = None
        self.error: BaseException | None = None
        self.sent = 0


class SimTransport:
    """Per-process view of the simulator, satisfying the transport
    contract."""

    def __init__(self, sim: "Simulator", proc: _Proc):
        self._sim = sim
        self._proc = proc

    @property
    def pid(self) -> int:
        return self._proc.pid

    @property
    def n(self) -> int:
        return self._sim.n

    def send(self, to: int, op_id: int, phase: str, payload: Any) -> None:
        self._sim._send(self._proc, to, op_id, phase, payload)

    def recv_from(self, sender: int, op_id: int, phase: str) -> Any:
        _, res = self._sim._recv(self._proc, (sender,), op_id, (phase,))
        return res

    def recv_any(
        self, candidates: Iterable[int], op_id: int, phases: Iterable[str]
    ) -> tuple[int, Any]:
        cands = tuple(candidates)
        if not cands:
            raise ValueError("recv_any with no candidates")
        return self._sim._recv(self._proc, cands, op_id, tuple(phases))

    def record_init(self, op_id: int, note: str = "") -> None:
        self._sim._trace("init", self._proc.pid, None, op_id, None, note)

    def record_deliver(self, op_id: int, note: str = "") -> None:
        self._sim._trace("deliver", self._proc.pid, None, op_id, None, note)


class Simulator:
    def __init__(
        self,
        n: int,
        entries: dict[int, Callable[[SimTransport], Any]],
        script: FailureScript | None = None,
        seed: int = 0,
        latency: tuple[int, int] = (1, 10),
    ):
        if sorted(entries) != list(range(n)):
            raise ValueError("entries must cover process ids 0..n-1")
        if latency[0] < 1 or latency[1] < latency[0]:
            raise ValueError(f"bad latency bounds {latency}")
        self.n = n
        self._script = script or FailureScript()
        self._rng = random.Random(seed)
        self._lat = latency
        self._now = 0
        self._seq = 0
        self._eseq = 0
        self._heap: list[tuple[int, int, tuple]] = []
        self._chan_last: dict[tuple[int, int], int] = {}
        self._events: list[TraceEvent] = []
        self._dead: set[int] = set()
        self._procs = {pid: _Proc(pid, fn) for pid, fn in entries.items()}

    # -- trace and event plumbing ------------------------------------

    def _trace(
        self,
        kind: str,
        actor: int,
        peer: int | None,
        op_id: int | None,
        phase: str | None,
        note: str = "",
    ) -> None:
        self._events.append(
            TraceEvent(self._seq, self._now, kind, actor, peer, op_id, phase, note)
        )
        self._seq += 1

    def _push(self, time: int, item: tuple) -> None:
        heapq.heappush(self._heap, (time, self._eseq, item))
        self._eseq += 1

    # -- process-thread side -----------------------------------------

    def _proc_main(self, proc: _Proc) -> None:
        try:
            proc.result = proc.entry(SimTransport(self, proc))
            proc.state = _DONE
        except _Killed:
            pass  # state set at the kill site
        except BaseException as exc:  # noqa: BLE001 - surfaced via RunResult
            proc.error = exc
            proc.state = _DONE
        proc.yielded.set()

    def _block_proc(self, proc: _Proc) -> Any:
        proc.state = _BLOCKED
        proc.yielded.set()
        proc.resume.wait()
        proc.resume.clear()
        if proc.kill_on_resume:
            raise _Killed()
        proc.state = _RUNNING
        return proc.wake

    def _kill(self, proc: _Proc, op_id: int | None) -> None:
        proc.state = _DEAD
        self._dead.add(proc.pid)
        self._trace("fail", proc.pid, None, op_id, None, f"after_sends={proc.sent}")
        raise _Killed()

    def _send(self, proc: _Proc, to: int, op_id: int, phase: str, payload: Any) -> None:
        if to == proc.pid or not 0 <= to < self.n:
            raise ValueError(f"bad destination {to} from {proc.pid}")
        if fails_before_sending(self._script, proc.pid, proc.sent):
            self._kill(proc, op_id)
        self._trace("send", proc.pid, to, op_id, phase, _payload_note(payload))
        proc.sent += 1
        arrive = self._now + self._rng.randint(*self._lat)
        chan = (proc.pid, to)
        arrive = max(arrive, self._chan_last.get(chan, 0))
        self._chan_last[chan] = arrive
        self._push(arrive, ("deliver", Envelope(op_id, proc.pid, to, phase, payload)))

    def _matches(self, env: Envelope, cands, op_id: int, phases) -> bool:
        return env.src in cands and env.op_id == op_id and env.phase in phases

    def _pending(self, sender: int, dst: int, op_id: int, phases) -> bool:
        for _, _, item in self._heap:
            if item[0] != "deliver":
                continue
            env = item[1]
            if env.src == sender and env.dst == dst and env.op_id == op_id and env.phase in phases:
                return True
        return False

    def _confirmable(self, proc: _Proc, cands, op_id: int, phases) -> int | None:
        for c in sorted(cands):
            if c in self._dead and not self._pending(c, proc.pid, op_id, phases):
                return c
        return None

    def _recv(self, proc: _Proc, cands, op_id: int, phases) -> tuple[int, Any]:
        for env in proc.mailbox:
            if self._matches(env, cands, op_id, phases):
                proc.mailbox.remove(env)
                self._trace("recv", proc.pid, env.src, op_id, env.phase,
                            _payload_note(env.payload))
                return env.src, env.payload
        c = self._confirmable(proc, cands, op_id, phases)
        if c is not None:
            self._trace("confirm_failed", proc.pid, c, op_id, None)
            return c, SENDER_FAILED
        proc.block = (frozenset(cands), op_id, frozenset(phases))
        res = self._block_proc(proc)
        proc.block = None
        return res

    # -- scheduler side ----------------------------------------------

    def _step(self, proc: _Proc) -> None:
        proc.resume.set()
        proc.yielded.wait()
        proc.yielded.clear()

    def _start(self, pid: int) -> None:
        proc = self._procs[pid]
        proc.state = _RUNNING
        proc.thread = threading.Thread(
            target=self._proc_main, args=(proc,), daemon=True, name=f"simproc-{pid}"
        )
        proc.thread.start()
        proc.yielded.wait()
        proc.yielded.clear()

    def _deliver(self, env: Envelope) -> None:
        rcv = self._procs[env.dst]
        if rcv.state == _DEAD:
            return  # absorbed: fail-stop gives the sender no indication
        rcv.mailbox.append(env)
        if rcv.state == _BLOCKED and self._matches(env, *rcv.block):
            rcv.mailbox.remove(env)
            self._trace("recv", rcv.pid, env.src, env.op_id, env.phase,
                        _payload_note(env.payload))
            rcv.block = None
            rcv.wake = (env.src, env.payload)
            self._step(rcv)

    def _resolve_blocked(self) -> None:
        progress = True
        while progress:
            progress = False
            for pid in sorted(self._procs):
                proc = self._procs[pid]
                if proc.state != _BLOCKED:
                    continue
                cands, op_id, phases = proc.block
                c = self._confirmable(proc, cands, op_id, phases)
                if c is None:
                    continue
                self._trace("confirm_failed", pid, c, op_id, None)
                proc.block = None
                proc.wake = (c, SENDER_FAILED)
                self._step(proc)
                progress = True

    def run(self) -> RunResult:
        for pid in sorted(self._procs):
            if self._script.preoperational(pid):
                proc = self._procs[pid]
                proc.state = _DEAD
                self._dead.add(pid)
                self._trace("fail", pid, None, None, None, "preoperational")
            else:
                self._push(0, ("start", pid))
        while self._heap:
            time, _, item = heapq.heappop(self._heap)
            self._now = time
            if item[0] == "start":
                self._start(item[1])
            else:
                self._deliver(item[1])
            self._resolve_blocked()
        blocked = [p.pid for p in self._procs.values() if p.state == _BLOCKED]
        if blocked:
            for pid in blocked:
                proc = self._procs[pid]
                proc.kill_on_resume = True
                self._step(proc)
            self._join()
            raise DeadlockError(f"processes {blocked} blocked with no events left")
        self._join()
        returns = {p.pid: p.result for p in self._procs.values() if p.state == _DONE}
        errors = {
            p.pid: p.error for p in self._procs.values() if p.error is not None
        }
        return RunResult(self._events, returns, errors)

    def _join(self) -> None:
        for proc in self._procs.values():
            if proc.thread is not None:
                proc.thread.join(timeout=5)


def run(
    n: int,
    entries: dict[int, Callable[[SimTransport], Any]],
    script: FailureScript | None = None,
    seed: int = 0,
    latency: tuple[int, int] = (1, 10),
) -> RunResult:
    """Run all processes to quiescence and return the full trace."""
    return Simulator(n, entries, script, seed, latency).run()
