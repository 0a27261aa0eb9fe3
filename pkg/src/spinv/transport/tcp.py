"""TCP backend.

Frames are ``u8 tag | u32 source | u32 length | payload`` (little-endian).
Startup: the master listens; each worker opens its own peer listener,
connects to the master and sends ``u32 rank | u16 peer_port``.  Once all
workers have joined, the master answers each with ``u32 world_size`` followed
by the peer table (``u16 host_len | host | u16 port`` per worker rank).
Workers then connect to every lower-ranked worker (sending ``u32 rank``) and
accept connections from the higher-ranked ones, giving a full mesh.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading

from .core import ConfigError, Endpoint, Message, Tag, TransportError

log = logging.getLogger(__name__)

FRAME = struct.Struct("<BII")
_U32 = struct.Struct("<I")
_HELLO = struct.Struct("<IH")
_U16 = struct.Struct("<H")


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise EOFError
        got += k
    return bytes(buf)


def encode_frame(msg: Message) -> bytes:
    return FRAME.pack(int(msg.tag), msg.source, len(msg.payload)) + msg.payload


def read_frame(sock: socket.socket) -> Message:
    tag, source, length = FRAME.unpack(_recv_exact(sock, FRAME.size))
    payload = _recv_exact(sock, length) if length else b""
    return Message(Tag(tag), source, payload)


def _tune(sock: socket.socket) -> None:
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class TcpEndpoint(Endpoint):
    def __init__(self, rank: int, world_size: int, conns: dict[int, socket.socket],
                 timeout=None):
        super().__init__(rank, world_size, timeout)
        self._conns = conns
        self._locks = {r: threading.Lock() for r in conns}
        self._readers = []
        for peer, sock in conns.items():
            th = threading.Thread(target=self._read_loop, args=(peer, sock),
                                  name=f"tcp-r{rank}<-{peer}", daemon=True)
            th.start()
            self._readers.append(th)

    def _read_loop(self, peer: int, sock: socket.socket) -> None:
        try:
            while True:
                msg = read_frame(sock)
                if msg.source != peer:
                    log.error("rank %d: frame from %d claims source %d", self.rank, peer, msg.source)
                    break
                self.mailbox.put(msg)
        except (EOFError, OSError):
            pass
        finally:
            self.mailbox.mark_closed(peer)
            try:
                sock.close()
            except OSError:
                pass

    def _deliver(self, to: int, msg: Message) -> None:
        sock = self._conns[to]
        header = FRAME.pack(int(msg.tag), msg.source, len(msg.payload))
        try:
            with self._locks[to]:
                if len(msg.payload) < 65536:
                    sock.sendall(header + msg.payload)
                else:
                    sock.sendall(header)
                    sock.sendall(msg.payload)
        except OSError as exc:
            self.mailbox.mark_closed(to)
            raise TransportError(f"rank {self.rank}: send to {to} failed: {exc}") from exc

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        # half-close so in-flight data still reaches peers; readers finish on EOF
        for sock in self._conns.values():
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    def join_readers(self, timeout: float | None = None) -> None:
        for th in self._readers:
            th.join(timeout)


class TcpListener:
    """Master-side listening socket."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, backlog: int = 128):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
        self.sock.listen(backlog)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def accept_workers(self, workers: int, timeout: float | None = 60.0) -> TcpEndpoint:
        if workers < 1:
            raise ConfigError(f"need at least one worker, got {workers}")
        world = workers + 1
        self.sock.settimeout(timeout)
        conns: dict[int, socket.socket] = {}
        peers: dict[int, tuple[str, int]] = {}
        try:
            while len(conns) < workers:
                conn, addr = self.sock.accept()
                conn.settimeout(timeout)
                _tune(conn)
                rank, port = _HELLO.unpack(_recv_exact(conn, _HELLO.size))
                if not 1 <= rank <= workers or rank in conns:
                    conn.close()
                    raise TransportError(f"bad or duplicate worker rank {rank} from {addr}")
                conns[rank] = conn
                peers[rank] = (addr[0], port)
            table = [_U32.pack(world)]
            for r in range(1, world):
                host = peers[r][0].encode()
                table.append(_U16.pack(len(host)) + host + _U16.pack(peers[r][1]))
            blob = b"".join(table)
            for conn in conns.values():
                conn.sendall(blob)
                conn.settimeout(None)
        except (OSError, EOFError) as exc:
            for c in conns.values():
                c.close()
            raise TransportError(f"worker startup failed: {exc}") from exc
        finally:
            self.sock.close()
        return TcpEndpoint(0, world, conns)


def connect_worker(host: str, port: int, rank: int, timeout: float | None = 60.0) -> TcpEndpoint:
    """Join a master at ``host:port`` as ``rank`` and wire up the peer mesh."""
    if rank < 1:
        raise ConfigError(f"worker rank must be >= 1, got {rank}")
    try:
        master = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to master at {host}:{port}: {exc}") from exc
    _tune(master)
    local_host = master.getsockname()[0]
    peer_listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    peer_listener.bind((local_host, 0))
    peer_listener.listen(128)
    peer_listener.settimeout(timeout)
    conns = {0: master}
    try:
        master.sendall(_HELLO.pack(rank, peer_listener.getsockname()[1]))
        (world,) = _U32.unpack(_recv_exact(master, 4))
        table = {}
        for r in range(1, world):
            (hl,) = _U16.unpack(_recv_exact(master, 2))
            h = _recv_exact(master, hl).decode()
            (p,) = _U16.unpack(_recv_exact(master, 2))
            table[r] = (h, p)
        master.settimeout(None)
        for r in range(1, rank):
            s = socket.create_connection(table[r], timeout=timeout)
            _tune(s)
            s.sendall(_U32.pack(rank))
            s.settimeout(None)
            conns[r] = s
        for _ in range(rank + 1, world):
            s, _addr = peer_listener.accept()
            s.settimeout(timeout)
            _tune(s)
            (r,) = _U32.unpack(_recv_exact(s, 4))
            if not rank < r < world or r in conns:
                raise TransportError(f"unexpected peer rank {r}")
            s.settimeout(None)
            conns[r] = s
    except (OSError, EOFError) as exc:
        for c in conns.values():
            c.close()
        raise TransportError(f"rank {rank}: mesh setup failed: {exc}") from exc
    finally:
        peer_listener.close()
    return TcpEndpoint(rank, world, conns)


def spawn_tcp_local(workers: int, host: str = "127.0.0.1", timeout: float | None = None
                    ) -> list[TcpEndpoint]:
    """All endpoints of a TCP world inside this process (ranks wired over loopback)."""
    listener = TcpListener(host, 0)
    port = listener.address[1]
    eps: list = [None] * (workers + 1)
    errors = []

    def join(r):
        try:
            eps[r] = connect_worker(host, port, r)
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=join, args=(r,)) for r in range(1, workers + 1)]
    for th in threads:
        th.start()
    try:
        eps[0] = listener.accept_workers(workers)
    finally:
        for th in threads:
            th.join()
    if errors:
        raise errors[0]
    for ep in eps:
        ep.timeout = timeout
    return eps
