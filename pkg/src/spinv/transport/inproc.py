from __future__ import annotations

from .core import ConfigError, Endpoint, Message, TransportError


class InprocEndpoint(Endpoint):
    def __init__(self, rank, world_size, hub, timeout=None):
        super().__init__(rank, world_size, timeout)
        self._hub = hub

    def _deliver(self, to: int, msg: Message) -> None:
        peer = self._hub[to]
        if peer.closed:
            raise TransportError(f"rank {self.rank}: destination {to} has terminated")
        peer.mailbox.put(msg)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for peer in self._hub:
            if peer is not self:
                peer.mailbox.mark_closed(self.rank)


def spawn_inproc(workers: int, timeout: float | None = None) -> list[InprocEndpoint]:
    if workers < 1:
        raise ConfigError(f"need at least one worker, got {workers}")
    hub: list[InprocEndpoint] = []
    for rank in range(workers + 1):
        hub.append(InprocEndpoint(rank, workers + 1, hub, timeout))
    return hub
