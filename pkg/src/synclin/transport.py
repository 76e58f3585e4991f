"""Synchronous broadcast/reduce transports with latency injection.

Two interchangeable back-ends: in-process channels (worker threads and
queues) and TCP sockets (worker processes).  One round is exactly one
broadcast followed by one reduce.  The latency shim delays delivery by half
the configured latency on the broadcast path and adds the other half on the
gather path before summation, emulating a fixed per-round communication
cost without owning two clusters; both sleeps run on the master so a round
pays the price exactly once.

TCP wire format, little endian:

    magic(4B) | version(1B) | kind(1B) | round(4B) | worker_id(2B)
    | payload_len(4B) | payload(f64 LE x len) | crc32(4B)

crc32 covers header plus payload.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .errors import ConfigurationError, ProtocolError, TransportError

log = logging.getLogger(__name__)

MAGIC = b"SYNC"
WIRE_VERSION = 1
KIND_BROADCAST = 0
KIND_UPDATE = 1
KIND_CONTROL = 2

MASTER_ID = 0xFFFF

# control opcodes, sent as the first float of a control payload
OP_STOP = 0.0
OP_T1_PROBE = 1.0
OP_FETCH_SHARD = 2.0

_HEADER = struct.Struct("<4sBBIHI")
_CRC = struct.Struct("<I")

DEFAULT_TIMEOUT = 30.0


@dataclass
class WireMessage:
    kind: int
    round: int
    worker_id: int
    payload: np.ndarray


def encode_frame(kind: int, round_no: int, worker_id: int, payload: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(payload, dtype="<f8")
    body = payload.tobytes()
    head = _HEADER.pack(MAGIC, WIRE_VERSION, kind, round_no, worker_id, payload.size)
    return head + body + _CRC.pack(zlib.crc32(head + body))


def decode_frame(read_exact) -> WireMessage:
    """Decode one frame given a ``read_exact(nbytes) -> bytes`` callable."""
    head = read_exact(_HEADER.size)
    magic, version, kind, round_no, worker_id, n = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {version}")
    body = read_exact(8 * n)
    (crc,) = _CRC.unpack(read_exact(_CRC.size))
    if crc != zlib.crc32(head + body):
        raise ProtocolError(f"checksum mismatch on round {round_no} from worker {worker_id}")
    payload = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return WireMessage(kind=kind, round=round_no, worker_id=worker_id, payload=payload)


class _EventLog:
    """Append-only (monotonic timestamp, event) records."""

    def __init__(self):
        self.records: list[tuple[float, str]] = []
        self._lock = threading.Lock()

    def add(self, event: str) -> None:
        with self._lock:
            self.records.append((time.perf_counter(), event))

    def times(self, prefix: str) -> dict[str, float]:
        out = {}
        with self._lock:
            for t, e in self.records:
                if e.startswith(prefix):
                    out[e] = t
        return out


class BaseTransport:
    """Master-side API shared by both back-ends."""

    backend = "base"

    def __init__(self, k: int, injected_latency: float = 0.0,
                 timeout: float = DEFAULT_TIMEOUT):
        if k < 1:
            raise ConfigurationError("transport needs k >= 1 workers")
        if injected_latency < 0:
            raise ConfigurationError("injected latency must be nonnegative")
        self.k = k
        self.injected_latency = injected_latency
        self.timeout = timeout
        self.event_log = _EventLog()
        self.last_reduce_seconds = 0.0
        self._started = False

    # lifecycle ---------------------------------------------------------
    def start(self, worker_fn, worker_args: list) -> None:
        raise NotImplementedError

    def shutdown(self) -> None:
        raise NotImplementedError

    # messaging ---------------------------------------------------------
    def _send_to_worker(self, worker_id: int, msg: WireMessage) -> None:
        raise NotImplementedError

    def _next_from_workers(self, timeout: float) -> tuple[int, WireMessage | None]:
        """Next (worker_id, message) pair; message None signals a dead worker."""
        raise NotImplementedError

    def broadcast(self, round_no: int, payload: np.ndarray, kind: int = KIND_BROADCAST) -> None:
        if not self._started:
            raise TransportError("transport is not started")
        payload = np.asarray(payload, dtype=np.float64)
        # half the injected latency delays delivery; sleeping on the sending
        # side keeps a single sleeper per round instead of K jittery ones
        if self.injected_latency > 0:
            time.sleep(self.injected_latency / 2)
        for k in range(self.k):
            self._send_to_worker(k, WireMessage(kind, round_no, MASTER_ID, payload))
        self.event_log.add(f"broadcast_send:{round_no}")

    def send_control(self, round_no: int, payload) -> None:
        self.broadcast(round_no, np.asarray(payload, dtype=np.float64), kind=KIND_CONTROL)

    def reduce_sum(self, round_no: int) -> np.ndarray:
        """Elementwise sum of exactly one update per worker for this round.

        Arrival order does not affect the result: payloads are summed in
        worker-id order for bitwise reproducibility.
        """
        if not self._started:
            raise TransportError("transport is not started")
        slots: list[np.ndarray | None] = [None] * self.k
        got = 0
        deadline = time.perf_counter() + self.timeout
        while got < self.k:
            remaining = deadline - time.perf_counter()
            missing = [i for i, s in enumerate(slots) if s is None]
            if remaining <= 0:
                raise TransportError(
                    f"timed out waiting for round {round_no} updates from workers {missing}"
                )
            try:
                wid, msg = self._next_from_workers(remaining)
            except TransportError:
                raise TransportError(
                    f"timed out waiting for round {round_no} updates from workers {missing}"
                ) from None
            if msg is None:
                raise TransportError(f"worker {wid} died before completing round {round_no}")
            if msg.kind != KIND_UPDATE:
                raise ProtocolError(f"expected an update, got kind={msg.kind} from worker {wid}")
            if msg.round != round_no:
                raise ProtocolError(
                    f"worker {wid} sent round {msg.round} while reducing round {round_no}"
                )
            if slots[wid] is not None:
                raise ProtocolError(f"duplicate update from worker {wid} in round {round_no}")
            if got and msg.payload.size != next(s.size for s in slots if s is not None):
                raise ProtocolError(
                    f"dimension mismatch in round {round_no}: worker {wid} sent "
                    f"{msg.payload.size} elements"
                )
            slots[wid] = msg.payload
            self.event_log.add(f"update_recv:{round_no}:{wid}")
            got += 1
        if self.injected_latency > 0:
            time.sleep(self.injected_latency / 2)
        t0 = time.perf_counter()
        total = slots[0].copy()
        for s in slots[1:]:
            total += s
        self.last_reduce_seconds = time.perf_counter() - t0
        self.event_log.add(f"reduce_done:{round_no}")
        return total


class _InprocEndpoint:
    """Worker-side view of an in-process transport."""

    def __init__(self, transport: "InProcessTransport", worker_id: int):
        self._transport = transport
        self.worker_id = worker_id
        self.k = transport.k
        self.inbox: queue.SimpleQueue = queue.SimpleQueue()
        self.event_log = _EventLog()

    def recv(self, timeout: float | None = None) -> WireMessage:
        try:
            msg = self.inbox.get(timeout=timeout or self._transport.timeout)
        except queue.Empty:
            raise TransportError(f"worker {self.worker_id} timed out waiting for the master")
        self.event_log.add(f"recv:{msg.kind}:{msg.round}")
        return msg

    def send_update(self, round_no: int, payload: np.ndarray) -> None:
        msg = WireMessage(KIND_UPDATE, round_no, self.worker_id,
                          np.array(payload, dtype=np.float64, copy=True))
        self._transport._inbox.put((self.worker_id, msg))


class InProcessTransport(BaseTransport):
    """Channel transport running workers on threads in this process."""

    backend = "inproc"

    def __init__(self, k: int, injected_latency: float = 0.0,
                 timeout: float = DEFAULT_TIMEOUT):
        super().__init__(k, injected_latency, timeout)
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        self._threads: list[threading.Thread] = []
        self.endpoints: list[_InprocEndpoint] = []
        self.worker_errors: list[BaseException] = []

    def start(self, worker_fn, worker_args: list) -> None:
        if len(worker_args) != self.k:
            raise ConfigurationError(f"need {self.k} worker args, got {len(worker_args)}")
        self._inbox = queue.SimpleQueue()
        self.endpoints = [_InprocEndpoint(self, i) for i in range(self.k)]
        self.worker_errors = []
        self._threads = []
        for i in range(self.k):
            th = threading.Thread(
                target=self._worker_wrapper, args=(worker_fn, i, worker_args[i]),
                name=f"synclin-worker-{i}", daemon=True,
            )
            self._threads.append(th)
            th.start()
        self._started = True

    def _worker_wrapper(self, worker_fn, worker_id: int, arg) -> None:
        try:
            worker_fn(self.endpoints[worker_id], arg)
        except BaseException as exc:  # surface to the master instead of dying silently
            log.exception("worker %d failed", worker_id)
            self.worker_errors.append(exc)
            self._inbox.put((worker_id, None))

    def _send_to_worker(self, worker_id: int, msg: WireMessage) -> None:
        self.endpoints[worker_id].inbox.put(
            WireMessage(msg.kind, msg.round, msg.worker_id,
                        np.array(msg.payload, dtype=np.float64, copy=True))
        )

    def _next_from_workers(self, timeout: float) -> tuple[int, WireMessage | None]:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for worker updates")

    def shutdown(self) -> None:
        if not self._started:
            return
        self.send_control(0xFFFFFFFF & (1 << 30), [OP_STOP])
        for th in self._threads:
            th.join(timeout=self.timeout)
        self._started = False


def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class _TcpWorkerEndpoint:
    """Worker-side socket endpoint (lives in the worker process)."""

    def __init__(self, host: str, port: int, worker_id: int, k: int,
                 injected_latency: float, timeout: float = DEFAULT_TIMEOUT):
        self.worker_id = worker_id
        self.k = k
        self.injected_latency = injected_latency
        self.event_log = _EventLog()
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        # handshake identifies this connection to the master
        self._sock.sendall(encode_frame(KIND_CONTROL, 0, worker_id, np.array([])))

    def recv(self, timeout: float | None = None) -> WireMessage:
        try:
            msg = decode_frame(lambda n: _read_exact(self._sock, n))
        except (ConnectionError, OSError) as exc:
            raise TransportError(f"worker {self.worker_id} lost the master: {exc}") from exc
        self.event_log.add(f"recv:{msg.kind}:{msg.round}")
        return msg

    def send_update(self, round_no: int, payload: np.ndarray) -> None:
        self._sock.sendall(encode_frame(KIND_UPDATE, round_no, self.worker_id, payload))

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def _tcp_worker_entry(host: str, port: int, worker_id: int, k: int,
                      injected_latency: float, worker_fn, arg) -> None:
    endpoint = _TcpWorkerEndpoint(host, port, worker_id, k, injected_latency)
    try:
        worker_fn(endpoint, arg)
    finally:
        endpoint.close()


class TcpTransport(BaseTransport):
    """Socket transport running workers as local processes."""

    backend = "tcp"

    def __init__(self, k: int, injected_latency: float = 0.0,
                 timeout: float = DEFAULT_TIMEOUT, host: str = "127.0.0.1",
                 port: int = 0):
        super().__init__(k, injected_latency, timeout)
        self.host = host
        self.port = port
        self._listener: socket.socket | None = None
        self._conns: dict[int, socket.socket] = {}
        self._readers: list[threading.Thread] = []
        self._procs: list[mp.process.BaseProcess] = []
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()

    def start(self, worker_fn, worker_args: list) -> None:
        if len(worker_args) != self.k:
            raise ConfigurationError(f"need {self.k} worker args, got {len(worker_args)}")
        self._inbox = queue.SimpleQueue()
        self._conns = {}
        self._readers = []
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, self.port))
        bound_port = self._listener.getsockname()[1]
        self._listener.listen(self.k)
        self._listener.settimeout(self.timeout)

        ctx = mp.get_context("spawn")
        self._procs = [
            ctx.Process(
                target=_tcp_worker_entry,
                args=(self.host, bound_port, i, self.k, self.injected_latency,
                      worker_fn, worker_args[i]),
                daemon=True,
            )
            for i in range(self.k)
        ]
        for p in self._procs:
            p.start()

        for _ in range(self.k):
            try:
                conn, _addr = self._listener.accept()
            except socket.timeout:
                raise TransportError("timed out waiting for workers to connect")
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(self.timeout)
            hello = decode_frame(lambda n: _read_exact(conn, n))
            if hello.kind != KIND_CONTROL:
                raise ProtocolError("worker handshake must be a control frame")
            wid = hello.worker_id
            if wid in self._conns or not 0 <= wid < self.k:
                raise ProtocolError(f"bad or duplicate worker id {wid} in handshake")
            conn.settimeout(None)  # master-side waits are enforced via the inbox
            self._conns[wid] = conn
            reader = threading.Thread(target=self._reader_loop, args=(wid, conn), daemon=True)
            self._readers.append(reader)
            reader.start()
        self._started = True

    def _reader_loop(self, worker_id: int, conn: socket.socket) -> None:
        try:
            while True:
                msg = decode_frame(lambda n: _read_exact(conn, n))
                self._inbox.put((worker_id, msg))
        except (ConnectionError, OSError):
            self._inbox.put((worker_id, None))

    def _send_to_worker(self, worker_id: int, msg: WireMessage) -> None:
        try:
            self._conns[worker_id].sendall(
                encode_frame(msg.kind, msg.round, msg.worker_id, msg.payload)
            )
        except (ConnectionError, OSError) as exc:
            raise TransportError(f"failed to send to worker {worker_id}: {exc}") from exc

    def _next_from_workers(self, timeout: float) -> tuple[int, WireMessage | None]:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for worker updates")

    def shutdown(self) -> None:
        if not self._started:
            return
        try:
            self.send_control(0xFFFFFFFF & (1 << 30), [OP_STOP])
        except TransportError:
            pass
        for p in self._procs:
            p.join(timeout=self.timeout)
            if p.is_alive():
                p.terminate()
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        if self._listener is not None:
            self._listener.close()
            self._listener = None
        self._started = False


def make_transport(backend: str, k: int, injected_latency: float = 0.0,
                   timeout: float = DEFAULT_TIMEOUT) -> BaseTransport:
    if backend == "inproc":
        return InProcessTransport(k, injected_latency, timeout)
    if backend == "tcp":
        return TcpTransport(k, injected_latency, timeout)
    raise ConfigurationError(f"unknown transport backend {backend!r}")


_PROBE_ROUND_BASE = 1 << 28


def measure_t1(transport: BaseTransport, payload_dim: int, trials: int) -> float:
    """Median zero-work broadcast+reduce round trip at the given dimension.

    This is the per-round overhead estimate t1 fed to the autotuner; the
    transport must be started and idle (workers answering probes).
    """
    if trials <= 0:
        raise ConfigurationError("measure_t1 needs at least one trial")
    times = []
    for t in range(trials):
        round_no = _PROBE_ROUND_BASE + t
        t0 = time.perf_counter()
        transport.send_control(round_no, [OP_T1_PROBE, float(payload_dim)])
        transport.reduce_sum(round_no)
        times.append(time.perf_counter() - t0)
    return float(median(times))
