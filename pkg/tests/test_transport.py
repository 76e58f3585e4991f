import time
import zlib

import numpy as np
import pytest

from synclin.errors import ConfigurationError, ProtocolError, TransportError
from synclin.transport import (
    KIND_BROADCAST,
    KIND_CONTROL,
    KIND_UPDATE,
    OP_STOP,
    OP_T1_PROBE,
    InProcessTransport,
    TcpTransport,
    decode_frame,
    encode_frame,
    measure_t1,
)


def echo_worker(endpoint, scale):
    """Echoes every broadcast back as scale * payload; answers probes."""
    while True:
        msg = endpoint.recv()
        if msg.kind == KIND_CONTROL:
            op = msg.payload[0] if msg.payload.size else OP_STOP
            if op == OP_STOP:
                return
            if op == OP_T1_PROBE:
                endpoint.send_update(msg.round, np.zeros(int(msg.payload[1])))
            continue
        endpoint.send_update(msg.round, scale * msg.payload)


def fixed_payload_worker(endpoint, payload):
    while True:
        msg = endpoint.recv()
        if msg.kind == KIND_CONTROL:
            return
        endpoint.send_update(msg.round, np.asarray(payload, dtype=np.float64))


class TestFraming:
    def test_roundtrip(self):
        payload = np.array([1.5, -2.25, 1e-17])
        raw = encode_frame(KIND_UPDATE, 7, 3, payload)
        buf = bytearray(raw)

        def read_exact(n):
            out = bytes(buf[:n])
            del buf[:n]
            return out

        msg = decode_frame(read_exact)
        assert msg.kind == KIND_UPDATE and msg.round == 7 and msg.worker_id == 3
        np.testing.assert_array_equal(msg.payload, payload)

    def test_corruption_detected(self):
        raw = bytearray(encode_frame(KIND_BROADCAST, 1, 0, np.array([1.0, 2.0])))
        raw[20] ^= 0xFF  # flip a payload byte

        def read_exact(n):
            out = bytes(raw[:n])
            del raw[:n]
            return out

        with pytest.raises(ProtocolError, match="checksum"):
            decode_frame(read_exact)

    def test_bad_magic(self):
        raw = bytearray(encode_frame(KIND_BROADCAST, 1, 0, np.array([])))
        raw[0] = 0
        buf = bytearray(raw)

        def read_exact(n):
            out = bytes(buf[:n])
            del buf[:n]
            return out

        with pytest.raises(ProtocolError, match="magic"):
            decode_frame(read_exact)


class TestInProcess:
    def test_broadcast_reaches_all_workers_identically(self):
        t = InProcessTransport(k=2)
        t.start(echo_worker, [1.0, 1.0])
        try:
            t.broadcast(1, np.array([1.0, 2.0]))
            total = t.reduce_sum(1)
            np.testing.assert_array_equal(total, [2.0, 4.0])
        finally:
            t.shutdown()

    def test_reduce_sum_example(self):
        t = InProcessTransport(k=2)
        t.start(fixed_payload_worker, [np.array([1.0, 1.0]), np.array([2.0, -1.0])])
        try:
            t.broadcast(1, np.zeros(2))
            np.testing.assert_array_equal(t.reduce_sum(1), [3.0, 0.0])
        finally:
            t.shutdown()

    def test_single_worker_identity(self):
        t = InProcessTransport(k=1)
        t.start(fixed_payload_worker, [np.array([4.0, 5.0])])
        try:
            t.broadcast(1, np.zeros(2))
            np.testing.assert_array_equal(t.reduce_sum(1), [4.0, 5.0])
        finally:
            t.shutdown()

    def test_sum_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        payloads = [rng.normal(size=64) for _ in range(5)]
        t = InProcessTransport(k=5)
        t.start(fixed_payload_worker, payloads)
        try:
            t.broadcast(1, np.zeros(64))
            total = t.reduce_sum(1)
            expected = payloads[0].copy()
            for p in payloads[1:]:
                expected += p
            np.testing.assert_array_equal(total, expected)  # fixed order: bitwise
        finally:
            t.shutdown()

    def test_latency_injection_floors_round_time(self):
        t = InProcessTransport(k=2, injected_latency=0.01)
        t.start(echo_worker, [1.0, 1.0])
        try:
            t0 = time.perf_counter()
            t.broadcast(1, np.array([1.0]))
            t.reduce_sum(1)
            assert time.perf_counter() - t0 >= 0.01
        finally:
            t.shutdown()

    def test_worker_death_is_reported(self):
        def dying_worker(endpoint, _):
            msg = endpoint.recv()
            if msg.kind == KIND_CONTROL:
                return
            raise RuntimeError("boom")

        t = InProcessTransport(k=2, timeout=5.0)
        t.start(dying_worker, [None, None])
        try:
            t.broadcast(1, np.array([1.0]))
            with pytest.raises(TransportError, match="worker"):
                t.reduce_sum(1)
        finally:
            t.shutdown()

    def test_timeout_names_missing_workers(self):
        def silent_worker(endpoint, _):
            while True:
                msg = endpoint.recv(timeout=30.0)
                if msg.kind == KIND_CONTROL:
                    return

        t = InProcessTransport(k=2, timeout=0.2)
        t.start(silent_worker, [None, None])
        try:
            t.broadcast(1, np.array([1.0]))
            with pytest.raises(TransportError, match=r"workers \[0, 1\]"):
                t.reduce_sum(1)
        finally:
            t.shutdown()

    def test_duplicate_update_rejected(self):
        def eager_worker(endpoint, _):
            while True:
                msg = endpoint.recv()
                if msg.kind == KIND_CONTROL:
                    return
                endpoint.send_update(msg.round, msg.payload)
                endpoint.send_update(msg.round, msg.payload)

        t = InProcessTransport(k=1)
        t.start(eager_worker, [None])
        try:
            t.broadcast(1, np.array([1.0]))
            t.reduce_sum(1)
            t.broadcast(2, np.array([1.0]))
            with pytest.raises(ProtocolError, match="round 1|duplicate|round 2"):
                t.reduce_sum(2)
        finally:
            t.shutdown()

    def test_dimension_mismatch_rejected(self):
        def sized_worker(endpoint, size):
            while True:
                msg = endpoint.recv()
                if msg.kind == KIND_CONTROL:
                    return
                endpoint.send_update(msg.round, np.zeros(size))

        t = InProcessTransport(k=2)
        t.start(sized_worker, [2, 3])
        try:
            t.broadcast(1, np.zeros(1))
            with pytest.raises(ProtocolError, match="dimension"):
                t.reduce_sum(1)
        finally:
            t.shutdown()

    def test_event_log_synchrony(self):
        t = InProcessTransport(k=2)
        t.start(echo_worker, [1.0, 1.0])
        try:
            for r in (1, 2, 3):
                t.broadcast(r, np.array([1.0]))
                t.reduce_sum(r)
            reduce_done = t.event_log.times("reduce_done:")
            for endpoint in t.endpoints:
                recvs = endpoint.event_log.times(f"recv:{KIND_BROADCAST}:")
                for r in (1, 2):
                    assert recvs[f"recv:{KIND_BROADCAST}:{r + 1}"] >= reduce_done[f"reduce_done:{r}"]
        finally:
            t.shutdown()


class TestMeasureT1:
    def test_positive_and_repeatable(self):
        t = InProcessTransport(k=2)
        t.start(echo_worker, [1.0, 1.0])
        try:
            a = measure_t1(t, payload_dim=10, trials=7)
            b = measure_t1(t, payload_dim=10, trials=7)
            assert a > 0 and b > 0
            assert max(a, b) / min(a, b) < 5.0
        finally:
            t.shutdown()

    def test_honors_injected_latency(self):
        latency = 0.02
        t = InProcessTransport(k=2, injected_latency=latency)
        t.start(echo_worker, [1.0, 1.0])
        try:
            assert measure_t1(t, payload_dim=10, trials=3) >= latency
        finally:
            t.shutdown()

    def test_zero_trials_rejected(self):
        t = InProcessTransport(k=1)
        with pytest.raises(ConfigurationError):
            measure_t1(t, payload_dim=10, trials=0)


@pytest.mark.slow
class TestTcp:
    def test_roundtrip_and_checksum_on_large_payload(self):
        t = TcpTransport(k=2, timeout=60.0)
        t.start(echo_worker, [1.0, 1.0])
        try:
            rng = np.random.default_rng(1)
            payload = rng.normal(size=100_000)
            t.broadcast(1, payload)
            total = t.reduce_sum(1)
            np.testing.assert_array_equal(total, payload + payload)
        finally:
            t.shutdown()

    def test_backend_equivalence_with_inproc(self):
        rng = np.random.default_rng(2)
        payloads = [rng.normal(size=32) for _ in range(3)]
        results = {}
        for cls in (InProcessTransport, TcpTransport):
            t = cls(k=3, timeout=60.0)
            t.start(fixed_payload_worker, payloads)
            try:
                t.broadcast(1, np.zeros(32))
                results[cls.__name__] = t.reduce_sum(1)
            finally:
                t.shutdown()
        np.testing.assert_array_equal(
            results["InProcessTransport"], results["TcpTransport"]
        )

    def test_t1_grows_with_payload_dimension(self):
        t = TcpTransport(k=2, timeout=60.0)
        t.start(echo_worker, [1.0, 1.0])
        try:
            small = measure_t1(t, payload_dim=10, trials=5)
            big = measure_t1(t, payload_dim=1_000_000, trials=5)
            assert big >= small
        finally:
            t.shutdown()
