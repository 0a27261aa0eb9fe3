"""Runtime timers and the two scheme-switching policies.

The ``combined`` scheme starts as plain master-worker.  When the master spends
more time adding polynomials than waiting for results it hands additions to
workers (addworker).  Once in addworker mode, workers that wait longer for
work than they compute tag their requests as starved; if most recent requests
are starved and the master spends more time dispatching additions than
waiting, the remaining work is served through foremen.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace


class Mode(enum.IntEnum):
    MW = 0
    ADDWORKER = 1
    HIER = 2

    @property
    def scheme_name(self) -> str:
        return {Mode.MW: "mw", Mode.ADDWORKER: "addworker", Mode.HIER: "hier"}[self]


@dataclass
class PolicyParams:
    ratio: float = 1.0
    maxresult: int = 16
    window: int = 32
    starvation_fraction: float = 0.5
    foremen_on_switch: int | None = None
    hier_ratio: float = 1.0

    def __post_init__(self):
        if not self.ratio > 0:
            raise ValueError(f"ratio must be positive, got {self.ratio}")
        if self.maxresult < 2:
            # a batch of one polynomial would be re-sent forever
            raise ValueError(f"maxresult must be at least 2, got {self.maxresult}")
        if self.window < 1:
            raise ValueError(f"window must be positive, got {self.window}")
        if not 0 < self.starvation_fraction <= 1:
            raise ValueError("starvation_fraction must lie in (0, 1]")
        if self.foremen_on_switch is not None and self.foremen_on_switch < 1:
            raise ValueError("foremen_on_switch must be positive")
        if not self.hier_ratio > 0:
            raise ValueError("hier_ratio must be positive")

    def foremen_for(self, workers: int) -> int:
        f = self.foremen_on_switch or math.ceil(math.sqrt(workers))
        return max(1, min(f, workers - 1)) if workers > 1 else 1


@dataclass
class MasterTimers:
    t_add: float = 0.0
    t_wait: float = 0.0
    t_send_add: float = 0.0
    iterations: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class WorkerTimers:
    t_compute: float = 0.0
    t_wait_work: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SwitchEvent:
    source: str
    target: str
    item_index: int


def should_switch_to_addworker(t: MasterTimers, p: PolicyParams) -> bool:
    # inf * 0 is nan and compares False, so ratio=inf disables the switch
    return t.t_add > p.ratio * t.t_wait


def worker_starved(t: WorkerTimers) -> bool:
    return t.t_wait_work > t.t_compute


def should_switch_to_hier(votes, m: MasterTimers, p: PolicyParams) -> bool:
    """``votes`` holds one boolean per recent request (True = starved)."""
    recent = list(votes)[-p.window:]
    if len(recent) < p.window:
        return False
    starved = sum(1 for v in recent if v) / p.window
    return starved > p.starvation_fraction and m.t_send_add > p.hier_ratio * m.t_wait


@dataclass
class PolicyState:
    mode: Mode = Mode.MW
    params: PolicyParams = field(default_factory=PolicyParams)
    votes: deque = field(default_factory=deque)
    switches: list[SwitchEvent] = field(default_factory=list)

    def __post_init__(self):
        self.votes = deque(self.votes, maxlen=self.params.window)

    def vote(self, starved: bool) -> None:
        self.votes.append(bool(starved))

    def switch(self, target: Mode, item_index: int) -> SwitchEvent:
        if target <= self.mode:
            raise ValueError(f"mode cannot go from {self.mode.name} to {target.name}")
        if self.switches and item_index < self.switches[-1].item_index:
            raise ValueError("switch events must be monotone in item index")
        ev = SwitchEvent(self.mode.scheme_name, target.scheme_name, item_index)
        self.mode = target
        self.votes.clear()
        self.switches.append(ev)
        return ev


def run_combined(cfg):
    """Run the adaptive ``combined`` scheme; returns ``(InvariantResult, RunStats)``."""
    from .schemes import run  # schemes imports this module
    return run(replace(cfg, scheme="combined"))
