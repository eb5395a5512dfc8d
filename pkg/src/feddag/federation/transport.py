"""Center/site transports: in-process queues, a shared directory, and TCP."""
from __future__ import annotations

import abc
import logging
import os
import queue
import re
import socket
import threading
import time
from typing import Callable, Sequence

import numpy as np

from ..errors import ProtocolViolation, TransportFailure
from ..local import LocalSolver
from .wire import (
    Direction,
    RoundMessage,
    deserialize,
    read_frame,
    serialize,
    terminate_message,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
_SITE_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")


class SiteWorker:
    """Stateless-between-rounds site logic: Z, beta, rho2 in, W out."""

    def __init__(self, dataset, diagonal: str = "exact"):
        self.diagonal = diagonal
        self.site_id = dataset.site_id
        self.dim = dataset.dim
        self.solver = LocalSolver(dataset.gram)
        self.last_round = 0

    def handle(self, msg: RoundMessage) -> RoundMessage | None:
        if msg.direction != Direction.CENTER_TO_SITE:
            raise ProtocolViolation(f"site {self.site_id!r} received a site-to-center frame")
        if msg.site_id != self.site_id:
            raise ProtocolViolation(f"frame for {msg.site_id!r} delivered to {self.site_id!r}")
        if msg.is_terminate:
            return None
        if msg.round <= self.last_round:
            raise ProtocolViolation(
                f"site {self.site_id!r}: round {msg.round} after round {self.last_round}"
            )
        if msg.beta is None:
            raise ProtocolViolation("center frame lacks the dual block")
        if msg.dim != self.dim:
            raise ProtocolViolation(f"site {self.site_id!r}: got d={msg.dim}, expected {self.dim}")
        self.last_round = msg.round
        W = self.solver.update(msg.payload, msg.beta, msg.rho, self.diagonal)
        return RoundMessage(msg.round, Direction.SITE_TO_CENTER, self.site_id, W)

    def hello(self) -> RoundMessage:
        return RoundMessage(0, Direction.SITE_TO_CENTER, self.site_id, np.zeros((self.dim, self.dim)))


def site_loop(worker: SiteWorker, recv: Callable[[], bytes], send: Callable[[bytes], None]):
    """Serve rounds until a terminate frame arrives."""
    while True:
        msg = deserialize(recv())
        reply = worker.handle(msg)
        if reply is None:
            return
        send(serialize(reply))


class Transport(abc.ABC):
    """Center-side view of the federation.

    ``open`` registers the sites (launching local workers when datasets are
    supplied), ``broadcast``/``gather`` run one synchronous round, and
    ``close`` sends terminate frames.
    """

    def __init__(self, timeout: float = DEFAULT_TIMEOUT, record: bool = False):
        self.timeout = timeout
        self.record = record
        self.frames: list[bytes] = []
        self.site_ids: list[str] = []
        self.dim: int | None = None
        self._last_round = 0
        self._opened = False

    def _log_frame(self, frame: bytes):
        if self.record:
            self.frames.append(frame)

    @abc.abstractmethod
    def open(self, datasets=None): ...

    @abc.abstractmethod
    def _send(self, site_id: str, frame: bytes): ...

    @abc.abstractmethod
    def _recv(self, site_id: str, deadline: float) -> bytes: ...

    def _shutdown(self):
        pass

    def broadcast(self, rnd: int, payloads: Sequence[tuple]):
        if rnd <= self._last_round:
            raise ProtocolViolation(f"round {rnd} broadcast after round {self._last_round}")
        if len(payloads) != len(self.site_ids):
            raise ValueError(f"{len(payloads)} payloads for {len(self.site_ids)} sites")
        self._last_round = rnd
        for sid, (Z, beta, rho2) in zip(self.site_ids, payloads):
            frame = serialize(RoundMessage(rnd, Direction.CENTER_TO_SITE, sid, Z, beta, rho2))
            self._log_frame(frame)
            self._send(sid, frame)

    def gather(self, rnd: int) -> list[np.ndarray]:
        deadline = time.monotonic() + self.timeout
        out = []
        for sid in self.site_ids:
            frame = self._recv(sid, deadline)
            self._log_frame(frame)
            msg = deserialize(frame)
            if msg.direction != Direction.SITE_TO_CENTER or msg.site_id != sid:
                raise ProtocolViolation(f"unexpected frame from {msg.site_id!r} while gathering {sid!r}")
            if msg.round != rnd:
                raise ProtocolViolation(f"site {sid!r} answered round {msg.round}, expected {rnd}")
            out.append(msg.payload)
        return out

    def close(self):
        if not self._opened:
            return
        self._opened = False
        for sid in self.site_ids:
            frame = serialize(terminate_message(sid))
            self._log_frame(frame)
            try:
                self._send(sid, frame)
            except TransportFailure:
                pass
        self._shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _register(self, site_ids, dim):
        for sid in site_ids:
            if not _SITE_ID.match(sid):
                raise ValueError(f"site id {sid!r} must match {_SITE_ID.pattern}")
        self.site_ids = list(site_ids)
        self.dim = dim
        self._last_round = 0
        self._opened = True


class _ThreadedSites:
    """Runs one site worker per thread and keeps its failure for the center."""

    def __init__(self):
        self.threads: dict[str, threading.Thread] = {}
        self.errors: dict[str, BaseException] = {}

    def start(self, site_id, target):
        def run():
            try:
                target()
            except BaseException as exc:  # reported to the center through gather
                self.errors[site_id] = exc
                log.debug("site %s failed: %r", site_id, exc)

        t = threading.Thread(target=run, name=f"site-{site_id}", daemon=True)
        self.threads[site_id] = t
        t.start()

    def check(self, site_id):
        exc = self.errors.get(site_id)
        if exc is not None:
            if isinstance(exc, ProtocolViolation):
                raise exc
            raise TransportFailure(f"site {site_id!r} failed: {exc!r}", site_id=site_id) from exc
        t = self.threads.get(site_id)
        if t is not None and not t.is_alive():
            raise TransportFailure(f"site {site_id!r} exited", site_id=site_id)

    def join(self, timeout=5.0):
        for t in self.threads.values():
            t.join(timeout)


class InProcessTransport(Transport):
    """Site workers on threads connected by bounded blocking queues."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT, record: bool = False, maxsize: int = 4):
        super().__init__(timeout, record)
        self.maxsize = maxsize
        self._inbox: dict[str, queue.Queue] = {}
        self._outbox: dict[str, queue.Queue] = {}
        self._sites = _ThreadedSites()

    def open(self, datasets=None):
        if datasets is None:
            raise ValueError("the in-process transport needs the site datasets")
        self._register([ds.site_id for ds in datasets], datasets[0].dim)
        for ds in datasets:
            inbox = queue.Queue(self.maxsize)
            outbox = queue.Queue(self.maxsize)
            self._inbox[ds.site_id] = inbox
            self._outbox[ds.site_id] = outbox
            worker = SiteWorker(ds)
            self._sites.start(ds.site_id, lambda w=worker, i=inbox, o=outbox: site_loop(w, i.get, o.put))
        return self

    def _send(self, site_id, frame):
        try:
            self._inbox[site_id].put(frame, timeout=self.timeout)
        except queue.Full as exc:
            raise TransportFailure(f"site {site_id!r} is not consuming frames", site_id=site_id) from exc

    def _recv(self, site_id, deadline):
        q = self._outbox[site_id]
        while True:
            try:
                return q.get(timeout=min(0.05, max(deadline - time.monotonic(), 0.0)))
            except queue.Empty:
                self._sites.check(site_id)
                if time.monotonic() >= deadline:
                    raise TransportFailure(f"timed out waiting for site {site_id!r}", site_id=site_id)

    def _shutdown(self):
        self._sites.join()


def frame_filename(rnd: int, site_id: str, direction: Direction) -> str:
    return f"round_{rnd}_{site_id}_{Direction(direction).name}.fdag"


def _write_atomic(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _wait_for(path, deadline, poll, on_idle=None) -> bytes:
    while True:
        try:
            with open(path, "rb") as fh:
                data = fh.read()
            os.remove(path)
            return data
        except FileNotFoundError:
            pass
        if on_idle is not None:
            on_idle()
        if time.monotonic() >= deadline:
            raise TimeoutError(path)
        time.sleep(poll)


def file_site_loop(dataset, directory, timeout: float = DEFAULT_TIMEOUT, poll: float = 0.0005):
    """Site side of the shared-directory transport."""
    worker = SiteWorker(dataset)
    down = Direction.CENTER_TO_SITE
    pattern = re.compile(rf"^round_(\d+)_{re.escape(worker.site_id)}_{down.name}\.fdag$")
    deadline = time.monotonic() + timeout
    while True:
        rounds = sorted(int(m.group(1)) for f in os.listdir(directory) if (m := pattern.match(f)))
        if not rounds:
            if time.monotonic() >= deadline:
                raise TransportFailure(f"site {worker.site_id!r}: no frame from the center", worker.site_id)
            time.sleep(poll)
            continue
        path = os.path.join(directory, frame_filename(rounds[0], worker.site_id, down))
        data = _wait_for(path, time.monotonic() + timeout, poll)
        reply = worker.handle(deserialize(data))
        if reply is None:
            return
        out = os.path.join(directory, frame_filename(reply.round, worker.site_id, Direction.SITE_TO_CENTER))
        _write_atomic(out, serialize(reply))
        deadline = time.monotonic() + timeout


class FileTransport(Transport):
    """Frames exchanged as files in a shared directory."""

    def __init__(self, directory, timeout: float = DEFAULT_TIMEOUT, record: bool = False,
                 poll: float = 0.0005):
        super().__init__(timeout, record)
        self.directory = os.fspath(directory)
        self.poll = poll
        self._sites = _ThreadedSites()

    def open(self, datasets=None, site_ids=None, dim=None):
        os.makedirs(self.directory, exist_ok=True)
        if datasets is not None:
            self._register([ds.site_id for ds in datasets], datasets[0].dim)
            for ds in datasets:
                self._sites.start(ds.site_id, lambda ds=ds: file_site_loop(ds, self.directory, self.timeout, self.poll))
        else:
            if site_ids is None or dim is None:
                raise ValueError("remote file sites need site_ids and dim")
            self._register(list(site_ids), int(dim))
        return self

    def _send(self, site_id, frame):
        rnd = deserialize(frame).round
        _write_atomic(os.path.join(self.directory, frame_filename(rnd, site_id, Direction.CENTER_TO_SITE)), frame)

    def _recv(self, site_id, deadline):
        path = os.path.join(self.directory, frame_filename(self._last_round, site_id, Direction.SITE_TO_CENTER))
        try:
            return _wait_for(path, deadline, self.poll, on_idle=lambda: self._sites.check(site_id))
        except TimeoutError as exc:
            raise TransportFailure(f"timed out waiting for site {site_id!r}", site_id=site_id) from exc

    def _shutdown(self):
        self._sites.join()


def parse_address(addr: str | None) -> tuple[str, int]:
    """``host:port``; falls back to FEDDAG_BIND_ADDR, then 127.0.0.1 on an ephemeral port."""
    addr = addr or os.environ.get("FEDDAG_BIND_ADDR") or "127.0.0.1:0"
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def tcp_site_loop(dataset, address, timeout: float = DEFAULT_TIMEOUT, connect_retries: int = 200):
    """Site side of the socket transport: connect, register, serve rounds."""
    host, port = parse_address(address) if isinstance(address, str) else address
    worker = SiteWorker(dataset)
    for attempt in range(connect_retries):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            break
        except OSError:
            if attempt == connect_retries - 1:
                raise
            time.sleep(0.05)
    with sock:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        sock.sendall(serialize(worker.hello()))
        site_loop(worker, lambda: read_frame(lambda n: _recv_exact(sock, n)), sock.sendall)


class TcpTransport(Transport):
    """Center listening on TCP; sites connect and register with a round-0 frame."""

    def __init__(self, bind: str | None = None, timeout: float = DEFAULT_TIMEOUT,
                 record: bool = False, site_ids: Sequence[str] | None = None):
        super().__init__(timeout, record)
        self.bind = parse_address(bind)
        self.expected = list(site_ids) if site_ids is not None else None
        self._server = None
        self._conns: dict[str, socket.socket] = {}
        self._sites = _ThreadedSites()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.getsockname()[:2] if self._server else self.bind

    def listen(self):
        if self._server is None:
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            srv.bind(self.bind)
            srv.listen()
            self._server = srv
        return self.address

    def open(self, datasets=None, n_sites: int | None = None):
        """Accept site registrations.

        With ``datasets`` the sites are launched locally on threads (used for
        testing and single-machine runs); otherwise ``n_sites`` remote sites
        (or the expected site ids) must connect within the timeout.
        """
        host, port = self.listen()
        if datasets is not None:
            if self.expected is None:
                self.expected = [ds.site_id for ds in datasets]
            for ds in datasets:
                self._sites.start(ds.site_id, lambda ds=ds: tcp_site_loop(ds, (host, port), self.timeout))
        count = len(self.expected) if self.expected is not None else n_sites
        if not count:
            raise ValueError("number of sites unknown: pass datasets, site_ids or n_sites")
        deadline = time.monotonic() + self.timeout
        dims = {}
        while len(self._conns) < count:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                missing = sorted(set(self.expected or []) - set(self._conns))
                raise TransportFailure(f"sites did not register in time: {missing or count - len(self._conns)}")
            self._server.settimeout(remaining)
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(max(deadline - time.monotonic(), 0.001))
            try:
                frame = read_frame(lambda n: _recv_exact(conn, n))
            except (OSError, ConnectionError) as exc:
                conn.close()
                raise TransportFailure(f"registration failed: {exc}") from exc
            self._log_frame(frame)
            hello = deserialize(frame)
            if hello.round != 0 or hello.direction != Direction.SITE_TO_CENTER:
                conn.close()
                raise ProtocolViolation(f"expected a registration frame, got round {hello.round}")
            if hello.site_id in self._conns or (self.expected and hello.site_id not in self.expected):
                conn.close()
                raise ProtocolViolation(f"unexpected or duplicate site {hello.site_id!r}")
            self._conns[hello.site_id] = conn
            dims[hello.site_id] = hello.dim
        order = self.expected if self.expected is not None else sorted(self._conns)
        if len(set(dims.values())) != 1:
            raise ProtocolViolation(f"sites disagree on d: {dims}")
        self._register(order, next(iter(dims.values())))
        return self

    def _send(self, site_id, frame):
        conn = self._conns[site_id]
        try:
            conn.settimeout(self.timeout)
            conn.sendall(frame)
        except OSError as exc:
            raise TransportFailure(f"cannot reach site {site_id!r}: {exc}", site_id=site_id) from exc

    def _recv(self, site_id, deadline):
        conn = self._conns[site_id]

        def recv_exact(n):
            conn.settimeout(max(deadline - time.monotonic(), 0.001))
            return _recv_exact(conn, n)

        try:
            return read_frame(recv_exact)
        except socket.timeout as exc:
            raise TransportFailure(f"timed out waiting for site {site_id!r}", site_id=site_id) from exc
        except (OSError, ConnectionError) as exc:
            raise TransportFailure(f"site {site_id!r} disconnected: {exc}", site_id=site_id) from exc

    def _shutdown(self):
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        self._conns.clear()
        if self._server is not None:
            self._server.close()
            self._server = None
        self._sites.join()


def make_transport(kind: str, **kwargs) -> Transport:
    kind = kind.lower()
    if kind == "inproc":
        return InProcessTransport(**{k: v for k, v in kwargs.items() if k in ("timeout", "record")})
    if kind == "file":
        import tempfile

        directory = kwargs.get("directory") or tempfile.mkdtemp(prefix="feddag-")
        return FileTransport(directory, **{k: v for k, v in kwargs.items() if k in ("timeout", "record")})
    if kind == "tcp":
        return TcpTransport(**{k: v for k, v in kwargs.items() if k in ("bind", "timeout", "record", "site_ids")})
    raise ValueError(f"unknown transport {kind!r}")


def run_sites(datasets, transport: Transport):
    """Start local site workers for ``datasets`` on ``transport`` and register them."""
    return transport.open(datasets)
