"""Messages, endpoints and receive semantics shared by all backends."""

from __future__ import annotations

import enum
import threading
import time
from collections import deque
from dataclasses import dataclass

ROOT = 0


class Tag(enum.IntEnum):
    REQ = 0
    REQ_STARVED = 1
    WORK = 2
    ADD = 3
    RESULT = 4
    END = 5


@dataclass(frozen=True)
class Message:
    tag: Tag
    source: int
    payload: bytes = b""


class TransportError(RuntimeError):
    """A peer went away or a socket failed."""


class ShutdownError(TransportError):
    """Blocked on a receive that can never complete: the peers are gone."""


class TransportUsageError(RuntimeError):
    """Endpoint API misuse (double wait, receive on a claimed source...)."""


class ConfigError(ValueError):
    pass


class Mailbox:
    """Per-source FIFO queues with fair any-source receive."""

    def __init__(self, world_size: int, owner: int):
        self.owner = owner
        self._cv = threading.Condition()
        self._queues = [deque() for _ in range(world_size)]
        self._closed = [False] * world_size
        self._closed[owner] = True  # never wait on ourselves
        self._claims = [0] * world_size
        self._next = 0
        # ranks whose disconnection aborts a pending any-source receive
        self.watch: set[int] = set()

    def put(self, msg: Message) -> None:
        with self._cv:
            self._queues[msg.source].append(msg)
            self._cv.notify_all()

    def mark_closed(self, rank: int) -> None:
        with self._cv:
            self._closed[rank] = True
            self._cv.notify_all()

    def is_closed(self, rank: int) -> bool:
        return self._closed[rank]

    def _wait(self, pick, timeout, dead):
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cv:
            while True:
                msg = pick()
                if msg is not None:
                    return msg
                if dead():
                    raise ShutdownError(f"rank {self.owner}: no live peer can satisfy the receive")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(f"rank {self.owner}: receive timed out")
                self._cv.wait(remaining)

    def get_any(self, timeout=None) -> Message:
        n = len(self._queues)

        def pick():
            for k in range(n):
                src = (self._next + k) % n
                if self._queues[src] and not self._claims[src]:
                    self._next = src + 1
                    return self._queues[src].popleft()
            return None

        def dead():
            for r in self.watch:
                if self._closed[r] and not self._queues[r]:
                    raise TransportError(f"rank {self.owner}: peer {r} disconnected")
            return all(self._closed[r] or self._claims[r] for r in range(n))

        return self._wait(pick, timeout, dead)

    def get_from(self, src: int, timeout=None, claimed: bool = False) -> Message:
        if not claimed and self._claims[src]:
            raise TransportUsageError(f"source {src} has an outstanding posted receive")

        def pick():
            q = self._queues[src]
            return q.popleft() if q else None

        return self._wait(pick, timeout, lambda: self._closed[src])

    def claim(self, src: int) -> None:
        with self._cv:
            self._claims[src] += 1

    def release(self, src: int) -> None:
        with self._cv:
            self._claims[src] -= 1
            self._cv.notify_all()


class PendingReceive:
    """Handle for a posted receive; complete it with :meth:`wait` exactly once."""

    def __init__(self, endpoint: "Endpoint", source: int):
        self._ep = endpoint
        self.source = source
        self._done = False
        endpoint.mailbox.claim(source)

    def ready(self) -> bool:
        return bool(self._ep.mailbox._queues[self.source])

    def wait(self, timeout=None) -> Message:
        if self._done:
            raise TransportUsageError("posted receive already completed")
        self._done = True
        try:
            msg = self._ep.mailbox.get_from(self.source, timeout, claimed=True)
        finally:
            self._ep.mailbox.release(self.source)
        self._ep.received += 1
        return msg


class Endpoint:
    """One rank's view of the world.  Owned by a single thread of control."""

    def __init__(self, rank: int, world_size: int, timeout: float | None = None):
        self.rank = rank
        self.world_size = world_size
        self.timeout = timeout
        self.mailbox = Mailbox(world_size, rank)
        self.sent = 0
        self.received = 0
        self.closed = False

    @property
    def workers(self) -> range:
        return range(1, self.world_size)

    def _check_dest(self, to: int) -> None:
        if self.closed:
            raise TransportError(f"rank {self.rank}: endpoint is closed")
        if not 0 <= to < self.world_size or to == self.rank:
            raise TransportUsageError(f"rank {self.rank}: invalid destination {to}")
        if self.mailbox.is_closed(to):
            raise TransportError(f"rank {self.rank}: destination {to} has terminated")

    def send(self, to: int, tag: Tag, payload: bytes = b"") -> None:
        self._check_dest(to)
        self._deliver(to, Message(Tag(tag), self.rank, bytes(payload)))
        self.sent += 1

    def _deliver(self, to: int, msg: Message) -> None:
        raise NotImplementedError

    def recv_any(self, timeout=None) -> Message:
        msg = self.mailbox.get_any(self.timeout if timeout is None else timeout)
        self.received += 1
        return msg

    def recv_from(self, src: int, timeout=None) -> Message:
        msg = self.mailbox.get_from(src, self.timeout if timeout is None else timeout)
        self.received += 1
        return msg

    def post_receive(self, src: int) -> PendingReceive:
        return PendingReceive(self, src)

    def close(self) -> None:
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
