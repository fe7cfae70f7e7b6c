"""Wire format and socket transport tests (all on localhost)."""

import operator
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftcollect.collectives import CollectiveConfig, FailureInfo, ReducePayload, run_reduce
from ftcollect.tcpnet import (
    MalformedFrame,
    TcpTransport,
    VersionMismatch,
    decode_frame,
    decode_int,
    encode_frame,
    encode_int,
    format_registry,
    free_ports,
    parse_registry,
)
from ftcollect.transport import SENDER_FAILED, Envelope


failinfos = st.one_of(
    st.none(),
    st.builds(lambda ids: FailureInfo("list", frozenset(ids)),
              st.frozensets(st.integers(min_value=0, max_value=2**31), max_size=8)),
    st.builds(lambda c, b: FailureInfo("count", count=c, bit=b),
              st.integers(min_value=0, max_value=2**31), st.booleans()),
    st.builds(lambda b: FailureInfo("bit", bit=b), st.booleans()),
)

envelopes = st.builds(
    Envelope,
    op_id=st.integers(min_value=0, max_value=2**63 - 1),
    src=st.integers(min_value=0, max_value=2**31),
    dst=st.integers(min_value=0, max_value=2**31),
    phase=st.sampled_from(("up_correction", "tree", "broadcast_tree",
                           "broadcast_correction")),
    payload=st.builds(ReducePayload,
                      st.integers(min_value=-(2**200), max_value=2**200),
                      failinfos),
)


class TestFraming:
    @given(st.integers(min_value=-(2**300), max_value=2**300))
    def test_int_round_trip(self, v):
        assert decode_int(encode_int(v)) == v

    @given(envelopes)
    @settings(max_examples=300)
    def test_frame_round_trip(self, env):
        kind, out = decode_frame(encode_frame(env))
        assert kind == 1
        assert out == env

    @given(envelopes, st.integers(min_value=1, max_value=20))
    @settings(max_examples=100)
    def test_truncation_detected(self, env, cut):
        data = encode_frame(env)
        cut = min(cut, len(data) - 1)
        with pytest.raises(MalformedFrame):
            decode_frame(data[:-cut])

    def test_version_mismatch(self):
        data = bytearray(encode_frame(
            Envelope(1, 0, 1, "tree", ReducePayload(5, None))))
        data[4] = 99  # first body byte is the version
        with pytest.raises(VersionMismatch):
            decode_frame(bytes(data))

    def test_list_scheme_wire_shape(self):
        env = Envelope(1, 0, 1, "tree",
                       ReducePayload(0, FailureInfo("list", frozenset({1, 5}))))
        _, out = decode_frame(encode_frame(env))
        assert out.payload.failinfo.failed == frozenset({1, 5})


class TestRegistry:
    def test_round_trip(self):
        reg = {0: ("127.0.0.1", 9000), 1: ("127.0.0.1", 9001)}
        assert parse_registry(format_registry(reg)) == reg

    def test_rejects_gaps_and_duplicates(self):
        with pytest.raises(ValueError):
            parse_registry("0 127.0.0.1 9000\n2 127.0.0.1 9001\n")
        with pytest.raises(ValueError):
            parse_registry("0 127.0.0.1 9000\n1 127.0.0.1 9000\n")


def _registry(n):
    return {p: ("127.0.0.1", port) for p, port in enumerate(free_ports(n))}


class TestTransport:
    def test_send_recv_and_probe(self):
        reg = _registry(2)
        a = TcpTransport(0, reg, probe_timeout=0.3)
        b = TcpTransport(1, reg, probe_timeout=0.3)
        try:
            a.send(1, 7, "tree", ReducePayload(41, None))
            got = b.recv_from(0, 7, "tree")
            assert got.value == 41
            assert a.probe_liveness(1) is True
        finally:
            a.close()
            b.close()

    def test_dead_peer_confirmed_within_budget(self):
        reg = _registry(2)
        timeout, probes = 0.2, 3
        a = TcpTransport(0, reg, probe_timeout=timeout, probes=probes)
        # peer 1 never starts; budget is timeout * probes, allow 2x
        try:
            start = time.monotonic()
            got = a.recv_from(1, 7, "tree")
            elapsed = time.monotonic() - start
            assert got is SENDER_FAILED
            assert elapsed <= 2 * timeout * probes + 1.0
        finally:
            a.close()

    def test_slow_but_live_peer_is_not_confirmed(self):
        # a peer that acks probes but sends nothing keeps the receiver
        # waiting: detector accuracy wins over liveness under fail-stop
        reg = _registry(2)
        a = TcpTransport(0, reg, probe_timeout=0.2, probes=2)
        b = TcpTransport(1, reg, probe_timeout=0.2, probes=2)
        try:
            def late_send():
                time.sleep(1.5)
                b.send(0, 7, "tree", ReducePayload(9, None))

            t = threading.Thread(target=late_send)
            t.start()
            got = a.recv_from(1, 7, "tree")
            t.join()
            assert got is not SENDER_FAILED
            assert got.value == 9
        finally:
            a.close()
            b.close()

    def test_reduce_over_sockets_with_missing_peer(self):
        # three live ranks, one rank never started: same collective code
        # as the simulator, real sockets underneath
        n, f = 4, 1
        reg = _registry(n)
        cfg = CollectiveConfig(n=n, f=f, op=operator.add, scheme="list",
                               candidates=())
        tps = {p: TcpTransport(p, reg, probe_timeout=0.2, probes=2)
               for p in range(n) if p != 2}
        results: dict[int, int] = {}

        def work(p):
            results[p] = run_reduce(tps[p], cfg, 1, 0, 1 << p)

        try:
            threads = [threading.Thread(target=work, args=(p,)) for p in tps]
            for t in threads:
                t.start()
            for t in threads:
                t.join(timeout=30)
            assert results[0] == (1 << 0) + (1 << 1) + (1 << 3)
        finally:
            for tp in tps.values():
                tp.close()
