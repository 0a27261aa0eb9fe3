from .core import (ROOT, ConfigError, Endpoint, Message, PendingReceive, ShutdownError, Tag,
                   TransportError, TransportUsageError)
from .inproc import spawn_inproc
from .tcp import TcpListener, connect_worker, parse_address, spawn_tcp_local

BACKENDS = ("inproc", "tcp")


def spawn(backend: str, workers: int, timeout: float | None = None) -> list[Endpoint]:
    """Create ``workers + 1`` connected endpoints in this process (rank 0 is the master)."""
    if workers < 1:
        raise ConfigError(f"need at least one worker, got {workers}")
    if backend == "inproc":
        return spawn_inproc(workers, timeout)
    if backend == "tcp":
        return spawn_tcp_local(workers, timeout=timeout)
    raise ConfigError(f"unknown transport backend {backend!r}")


__all__ = [
    "BACKENDS", "ROOT", "ConfigError", "Endpoint", "Message", "PendingReceive", "ShutdownError",
    "Tag", "TcpListener", "TransportError", "TransportUsageError", "connect_worker",
    "parse_address", "spawn",
]
