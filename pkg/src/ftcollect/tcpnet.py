"""Real-socket transport: framed wire protocol, liveness probing, and a
localhost launcher for multi-process runs.

The collectives code runs unmodified over this backend.  TCP can signal
a dead peer on send; that indication is deliberately suppressed (sends
to dead processes "succeed") to preserve the fail-stop model.  A peer is
treated as failed only after the probe protocol times out, which keeps
the monitor accurate: live-but-slow peers are never confirmed.
"""
from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Any, Iterable

from .collectives import FailureInfo, ReducePayload
from .failmodel import FailurePoint
from .transport import (
    PHASE_BCORR,
    PHASE_BTREE,
    PHASE_TREE,
    PHASE_UP,
    SENDER_FAILED,
    Envelope,
)

WIRE_VERSION = 1
KIND_DATA = 1
KIND_PROBE = 2
KIND_PROBE_ACK = 3

_PHASE_CODE = {None: 0, PHASE_UP: 1, PHASE_TREE: 2, PHASE_BTREE: 3, PHASE_BCORR: 4}
_CODE_PHASE = {v: k for k, v in _PHASE_CODE.items()}
_SCHEME_CODE = {None: 0, "list": 1, "count": 2, "bit": 3}
_CODE_SCHEME = {v: k for k, v in _SCHEME_CODE.items()}

_HEADER = struct.Struct(">BBQBIIB")  # version kind op_id phase from to scheme


class MalformedFrame(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class WorkerKilled(Exception):
    """Raised at this worker's scripted failure point."""


def encode_int(value: int) -> bytes:
    if value == 0:
        return b""
    length = (value.bit_length() + 8) // 8  # one spare bit for the sign
    return value.to_bytes(length, "big", signed=True)


def decode_int(data: bytes) -> int:
    if not data:
        return 0
    return int.from_bytes(data, "big", signed=True)


def _encode_failinfo(fi: FailureInfo | None) -> tuple[int, bytes]:
    if fi is None:
        return 0, b""
    if fi.scheme == "list":
        ids = sorted(fi.failed)
        return 1, struct.pack(">H", len(ids)) + b"".join(struct.pack(">I", q) for q in ids)
    if fi.scheme == "count":
        return 2, struct.pack(">IB", fi.count, int(fi.bit))
    return 3, struct.pack(">B", int(fi.bit))


def _decode_failinfo(code: int, data: bytes) -> FailureInfo | None:
    try:
        scheme = _CODE_SCHEME[code]
    except KeyError:
        raise MalformedFrame(f"unknown failure-info scheme code {code}") from None
    if scheme is None:
        if data:
            raise MalformedFrame("unexpected failure-info bytes")
        return None
    try:
        if scheme == "list":
            (count,) = struct.unpack_from(">H", data)
            ids = struct.unpack_from(f">{count}I", data, 2)
            if len(data) != 2 + 4 * count:
                raise MalformedFrame("trailing failure-info bytes")
            return FailureInfo("list", frozenset(ids))
        if scheme == "count":
            count, bit = struct.unpack(">IB", data)
            return FailureInfo("count", count=count, bit=bool(bit))
        (bit,) = struct.unpack(">B", data)
        return FailureInfo("bit", bit=bool(bit))
    except struct.error as exc:
        raise MalformedFrame(f"bad failure-info encoding: {exc}") from None


def encode_frame(env: Envelope) -> bytes:
    """Length-prefixed data frame for one envelope."""
    payload = env.payload
    scheme, fi = _encode_failinfo(payload.failinfo)
    value = encode_int(payload.value)
    body = (
        _HEADER.pack(
            WIRE_VERSION, KIND_DATA, env.op_id, _PHASE_CODE[env.phase],
            env.src, env.dst, scheme,
        )
        + struct.pack(">H", len(fi)) + fi
        + struct.pack(">H", len(value)) + value
    )
    return struct.pack(">I", len(body)) + body


def encode_probe(kind: int, src: int, dst: int) -> bytes:
    body = _HEADER.pack(WIRE_VERSION, kind, 0, 0, src, dst, 0)
    body += struct.pack(">H", 0) + struct.pack(">H", 0)
    return struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> tuple[int, Envelope]:
    """(kind, envelope) from one full frame including the length prefix."""
    if len(data) < 4:
        raise MalformedFrame("truncated length prefix")
    (length,) = struct.unpack_from(">I", data)
    body = data[4:]
    if len(body) != length:
        raise MalformedFrame(f"frame length {length} != body {len(body)}")
    if length < _HEADER.size + 4:
        raise MalformedFrame("frame too short")
    version, kind, op_id, phase_code, src, dst, scheme = _HEADER.unpack_from(body)
    if version != WIRE_VERSION:
        raise VersionMismatch(f"wire version {version}, expected {WIRE_VERSION}")
    if kind not in (KIND_DATA, KIND_PROBE, KIND_PROBE_ACK):
        raise MalformedFrame(f"unknown frame kind {kind}")
    off = _HEADER.size
    (fi_len,) = struct.unpack_from(">H", body, off)
    off += 2
    if off + fi_len + 2 > length:
        raise MalformedFrame("truncated failure info")
    fi = _decode_failinfo(scheme, body[off:off + fi_len])
    off += fi_len
    (val_len,) = struct.unpack_from(">H", body, off)
    off += 2
    if off + val_len != length:
        raise MalformedFrame("bad value length")
    value = decode_int(body[off:off + val_len])
    try:
        phase = _CODE_PHASE[phase_code]
    except KeyError:
        raise MalformedFrame(f"unknown phase code {phase_code}") from None
    return kind, Envelope(op_id, src, dst, phase, ReducePayload(value, fi))


def parse_registry(text: str) -> dict[int, tuple[str, int]]:
    """Lines of `<pid> <host> <port>`; must cover 0..n-1 with distinct
    addresses."""
    reg: dict[int, tuple[str, int]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        pid_s, host, port_s = line.split()
        reg[int(pid_s)] = (host, int(port_s))
    if sorted(reg) != list(range(len(reg))):
        raise ValueError("registry must cover process ids 0..n-1")
    if len(set(reg.values())) != len(reg):
        raise ValueError("registry addresses must be distinct")
    return reg


def format_registry(reg: dict[int, tuple[str, int]]) -> str:
    return "".join(f"{pid} {host} {port}\n" for pid, (host, port) in sorted(reg.items()))


@dataclass
class _Peer:
    misses: int = 0
    acks: int = 0


class TcpTransport:
    """Transport-contract implementation over lazily connected sockets."""

    def __init__(
        self,
        pid: int,
        registry: dict[int, tuple[str, int]],
        probe_timeout: float = 0.5,
        probes: int = 3,
        fail_point: FailurePoint | None = None,
        connect_wait: float = 5.0,
    ):
        self._pid = pid
        self._registry = registry
        self._probe_timeout = probe_timeout
        self._probes = probes
        self._fail_point = fail_point
        self._connect_wait = connect_wait
        self._sent = 0
        self._cond = threading.Condition()
        self._inbox: list[Envelope] = []
        self._peers = {p: _Peer() for p in registry}
        self._confirmed: set[int] = set()
        self._conns: dict[int, socket.socket] = {}
        self._conn_lock = threading.Lock()
        self._send_locks: dict[socket.socket, threading.Lock] = {}
        self._closing = False
        host, port = registry[pid]
        self._listener = socket.create_server((host, port))
        threading.Thread(target=self._accept_loop, daemon=True).start()

    # -- socket plumbing ---------------------------------------------

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(sock,), daemon=True).start()

    def _reader(self, sock: socket.socket) -> None:
        buf = b""
        while True:
            try:
                chunk = sock.recv(65536)
            except OSError:
                chunk = b""
            if not chunk:
                try:
                    sock.close()
                except OSError:
                    pass
                return
            buf += chunk
            while len(buf) >= 4:
                (length,) = struct.unpack_from(">I", buf)
                if len(buf) < 4 + length:
                    break
                frame, buf = buf[: 4 + length], buf[4 + length:]
                try:
                    kind, env = decode_frame(frame)
                except (MalformedFrame, VersionMismatch):
                    continue  # drop garbage; the model has no corruption
                if kind == KIND_DATA:
                    with self._cond:
                        self._inbox.append(env)
                        self._cond.notify_all()
                elif kind == KIND_PROBE:
                    self._raw_send(sock, encode_probe(KIND_PROBE_ACK, self._pid, env.src))
                elif kind == KIND_PROBE_ACK:
                    with self._cond:
                        self._peers[env.src].acks += 1
                        self._cond.notify_all()

    def _raw_send(self, sock: socket.socket, data: bytes) -> bool:
        lock = self._send_locks.setdefault(sock, threading.Lock())
        try:
            with lock:
                sock.sendall(data)
            return True
        except OSError:
            return False

    def _get_conn(self, peer: int, wait: float) -> socket.socket | None:
        with self._conn_lock:
            sock = self._conns.get(peer)
        if sock is not None:
            return sock
        deadline = time.monotonic() + wait
        while True:
            try:
                sock = socket.create_connection(self._registry[peer], timeout=0.5)
                sock.settimeout(None)  # the timeout governs connect only
                break
            except OSError:
                if time.monotonic() >= deadline:
                    return None
                time.sleep(0.05)
        with self._conn_lock:
            existing = self._conns.get(peer)
            if existing is not None:
                sock.close()
                return existing
            self._conns[peer] = sock
        threading.Thread(target=self._reader, args=(sock,), daemon=True).start()
        return sock

    def _drop_conn(self, peer: int) -> None:
        with self._conn_lock:
            sock = self._conns.pop(peer, None)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    # -- transport contract ------------------------------------------

    @property
    def pid(self) -> int:
        return self._pid

    @property
    def n(self) -> int:
        return len(self._registry)

    def send(self, to: int, op_id: int, phase: str, payload: Any) -> None:
        if self._fail_point is not None and not self._fail_point.preoperational:
            if self._sent >= self._fail_point.after_sends:
                raise WorkerKilled(f"scripted failure after {self._sent} sends")
        frame = encode_frame(Envelope(op_id, self._pid, to, phase, payload))
        self._sent += 1  # counts as sent regardless: no failure indication
        if to in self._confirmed:
            return  # absorbed: the peer is known-failed, and failures are final
        for _ in range(2):  # one retry in case a cached connection went stale
            sock = self._get_conn(to, self._connect_wait)
            if sock is None:
                return
            if self._raw_send(sock, frame):
                return
            self._drop_conn(to)

    def probe_liveness(self, peer: int, timeout: float | None = None,
                       retries: int | None = None) -> bool:
        """Probe until an ack arrives or the budget is spent; a spent
        budget marks the peer failed (monotone)."""
        timeout = self._probe_timeout if timeout is None else timeout
        retries = self._probes if retries is None else retries
        if peer in self._confirmed:
            return False
        for _ in range(retries):
            with self._cond:
                base = self._peers[peer].acks
            sock = self._get_conn(peer, min(timeout, 0.3))
            if sock is not None and not self._raw_send(
                sock, encode_probe(KIND_PROBE, self._pid, peer)
            ):
                self._drop_conn(peer)
                sock = None
            deadline = time.monotonic() + timeout
            with self._cond:
                while self._peers[peer].acks == base:
                    remain = deadline - time.monotonic()
                    if remain <= 0 or sock is None:
                        break
                    self._cond.wait(remain)
                if self._peers[peer].acks > base:
                    return True
        with self._cond:
            self._confirmed.add(peer)
            self._cond.notify_all()
        return False

    def confirm_failed(self, peer: int) -> bool:
        return peer in self._confirmed

    def _pop_match(self, cands, op_id: int, phases) -> Envelope | None:
        for env in self._inbox:
            if env.src in cands and env.op_id == op_id and env.phase in phases:
                self._inbox.remove(env)
                return env
        return None

    def _recv(self, cands: tuple[int, ...], op_id: int, phases: tuple[str, ...]):
        grace = True
        while True:
            with self._cond:
                env = self._pop_match(cands, op_id, phases)
                if env is not None:
                    return env.src, env.payload
                dead = sorted(c for c in cands if c in self._confirmed)
                if dead:
                    return dead[0], SENDER_FAILED
                if grace:
                    # give data a chance to arrive before probing anyone
                    self._cond.wait(self._probe_timeout)
                    grace = False
                    continue
            for c in sorted(cands):
                if c not in self._confirmed:
                    self.probe_liveness(c)
                with self._cond:
                    env = self._pop_match(cands, op_id, phases)
                    if env is not None:
                        return env.src, env.payload
            grace = True  # wait again before the next probe round

    def recv_from(self, sender: int, op_id: int, phase: str) -> Any:
        _, res = self._recv((sender,), op_id, (phase,))
        return res

    def recv_any(self, candidates: Iterable[int], op_id: int,
                 phases: Iterable[str]) -> tuple[int, Any]:
        cands = tuple(candidates)
        if not cands:
            raise ValueError("recv_any with no candidates")
        return self._recv(cands, op_id, tuple(phases))

    def record_init(self, op_id: int, note: str = "") -> None:
        pass

    def record_deliver(self, op_id: int, note: str = "") -> None:
        pass

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_lock:
            socks = list(self._conns.values())
            self._conns.clear()
        for sock in socks:
            try:
                sock.close()
            except OSError:
                pass


def free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    socks = [socket.create_server((host, 0)) for _ in range(count)]
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports
