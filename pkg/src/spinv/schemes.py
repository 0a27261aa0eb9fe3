"""Sequential and parallel master-worker executions of the invariant.

Every parallel scheme splits the outer ``(a4, a2, a6)`` triples into
contiguous :class:`WorkItem` chunks, computes :func:`inner_block` on workers
and sums the partial polynomials, so all of them produce the same result.

Message protocol (all payloads little-endian):

* ``REQ`` / ``REQ_STARVED``: empty; a rank asks its boss for something to do.
* ``WORK``: ``u8 kind`` then a body.  ``kind 0`` is a work item
  (``u32 start, u32 count``), ``kind 1`` turns the receiver into a foreman
  (``u16 n`` then ``n`` x ``u32`` pool ranks), ``kind 2`` redirects the
  receiver to a new boss (``u32 rank``).
* ``ADD``: ``u32 n`` then ``n`` x (``u32 len``, serialized polynomial).
* ``RESULT``: one serialized polynomial.
* ``END``: empty.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import subprocess
import sys
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace

from .adapt import (MasterTimers, Mode, PolicyParams, PolicyState, WorkerTimers,
                    should_switch_to_addworker, should_switch_to_hier, worker_starved)
from .invariant import InvariantResult, compute_invariant, half_size, inner_block, triple_at
from .polyarith import ZERO, Polynomial, add, deserialize, serialize, sum_polynomials
from .transport import (ROOT, BACKENDS, ConfigError, Endpoint, Tag, TcpListener,
                        TransportError, spawn)

log = logging.getLogger(__name__)

SCHEMES = ("seq", "mw", "addworker", "hier", "stateful", "combined")

WORK_ITEM, WORK_FOREMAN, WORK_REDIRECT = 0, 1, 2
_ITEM = struct.Struct("<BII")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class WorkItem:
    """``count`` consecutive triples starting at lexicographic index ``start``."""

    start: int
    count: int

    def triples(self, size: int):
        return [triple_at(i, size) for i in range(self.start, self.start + self.count)]

    def split(self, g: int) -> list["WorkItem"]:
        return [WorkItem(s, min(g, self.start + self.count - s))
                for s in range(self.start, self.start + self.count, g)]

    def encode(self) -> bytes:
        return _ITEM.pack(WORK_ITEM, self.start, self.count)


def generate_work_items(size: int, g: int) -> list[WorkItem]:
    total = half_size(size) ** 3
    if not 1 <= g <= total:
        raise ConfigError(f"granularity must be in [1, {total}], got {g}")
    return WorkItem(0, total).split(g)


def encode_foreman(pool) -> bytes:
    return struct.pack(f"<BH{len(pool)}I", WORK_FOREMAN, len(pool), *pool)


def encode_redirect(boss: int) -> bytes:
    return struct.pack("<BI", WORK_REDIRECT, boss)


def decode_work(payload: bytes):
    kind = payload[0]
    if kind == WORK_ITEM:
        _, start, count = _ITEM.unpack(payload)
        return kind, WorkItem(start, count)
    if kind == WORK_FOREMAN:
        (n,) = struct.unpack_from("<H", payload, 1)
        return kind, list(struct.unpack_from(f"<{n}I", payload, 3))
    if kind == WORK_REDIRECT:
        return kind, struct.unpack_from("<I", payload, 1)[0]
    raise ValueError(f"unknown WORK kind {kind}")


def encode_batch(blobs) -> bytes:
    parts = [_U32.pack(len(blobs))]
    for b in blobs:
        parts.append(_U32.pack(len(b)))
        parts.append(b)
    return b"".join(parts)


def decode_batch(payload: bytes) -> list[bytes]:
    (n,) = _U32.unpack_from(payload, 0)
    off = 4
    out = []
    for _ in range(n):
        (k,) = _U32.unpack_from(payload, off)
        off += 4
        out.append(payload[off:off + k])
        off += k
    if off != len(payload):
        raise ValueError("trailing bytes in ADD batch")
    return out


@dataclass
class RunConfig:
    size: int
    scheme: str = "seq"
    workers: int = 1
    granularity: int = 1
    foremen: int | None = None
    policy: PolicyParams = field(default_factory=PolicyParams)
    transport: str = "inproc"
    algorithm: str = "optimized"
    # tcp only: run workers as child processes instead of threads
    processes: bool = False
    # with processes: False means wait for externally started workers
    launch_workers: bool = True
    listen: str = "127.0.0.1:0"
    timeout: float | None = None
    # test hooks
    inject_add_delay_ms: float = 0.0
    inject_compute_delay_ms: float = 0.0
    inject_dispatch_delay_ms: float = 0.0
    force_addworker_at: int | None = None
    force_hier_at: int | None = None
    negate_accumulator: str | None = None

    def validate(self) -> "RunConfig":
        n3 = half_size(self.size) ** 3
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.algorithm not in ("naive", "optimized"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.scheme != "seq" and self.algorithm != "optimized":
            raise ConfigError("parallel schemes run the optimized kernel only")
        if self.transport not in BACKENDS:
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.workers < 1:
            raise ConfigError(f"need at least one worker, got {self.workers}")
        if not 1 <= self.granularity <= n3:
            raise ConfigError(f"granularity must be in [1, {n3}], got {self.granularity}")
        if self.scheme == "hier" and self.workers > 1:
            f = self.foremen_count()
            if not 1 <= f < self.workers:
                raise ConfigError(f"need 1 <= foremen < workers, got {f} foremen for {self.workers}")
        return self

    def foremen_count(self) -> int:
        if self.scheme == "hier":
            if self.workers == 1:
                return 1
            return self.foremen if self.foremen is not None else self.policy.foremen_for(self.workers)
        return self.policy.foremen_for(self.workers)


@dataclass
class RunStats:
    scheme: str
    size: int
    workers: int
    granularity: int
    wall_seconds: float = 0.0
    master: dict = field(default_factory=dict)
    per_rank: dict = field(default_factory=dict)
    messages_sent: int = 0
    messages_received: int = 0
    items_issued: int = 0
    triples_issued: int = 0
    issued_ranges: list = field(default_factory=list)
    switch_events: list = field(default_factory=list)
    result_terms: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def switch_item_index(self) -> int:
        return self.switch_events[0]["item_index"] if self.switch_events else -1

    def as_dict(self) -> dict:
        return asdict(self)


# -- worker side -------------------------------------------------------------


class _WorkerCtx:
    def __init__(self, ep: Endpoint, cfg: RunConfig):
        self.ep = ep
        self.cfg = cfg
        self.timers = WorkerTimers()
        self.items = 0
        self.adds = 0
        self.role = "worker"
        self.pool_messages = 0
        self.upstream_messages = 0

    def compute(self, item: WorkItem) -> Polynomial:
        t0 = time.perf_counter()
        p = inner_block(self.cfg.size, item.triples(self.cfg.size), self.cfg.negate_accumulator)
        if self.cfg.inject_compute_delay_ms:
            time.sleep(self.cfg.inject_compute_delay_ms / 1000)
        self.timers.t_compute += time.perf_counter() - t0
        self.items += 1
        return p

    def add_batch(self, payload: bytes) -> bytes:
        t0 = time.perf_counter()
        s = sum_polynomials(deserialize(b) for b in decode_batch(payload))
        out = serialize(s)
        self.timers.t_compute += time.perf_counter() - t0
        self.adds += 1
        return out

    def request_tag(self) -> Tag:
        return Tag.REQ_STARVED if worker_starved(self.timers) else Tag.REQ

    def stats(self) -> dict:
        return {"rank": self.ep.rank, "role": self.role, **self.timers.as_dict(),
                "items": self.items, "adds": self.adds,
                "pool_messages": self.pool_messages, "upstream_messages": self.upstream_messages,
                "sent": self.ep.sent, "received": self.ep.received}


def worker_loop(ep: Endpoint, cfg: RunConfig, boss: int = ROOT) -> dict:
    """Stateless worker: request, compute or add, reply; obey role changes."""
    ctx = _WorkerCtx(ep, cfg)
    while True:
        ep.send(boss, ctx.request_tag())
        t0 = time.perf_counter()
        msg = ep.recv_from(boss)
        ctx.timers.t_wait_work += time.perf_counter() - t0
        if msg.tag == Tag.END:
            break
        if msg.tag == Tag.ADD:
            ep.send(boss, Tag.RESULT, ctx.add_batch(msg.payload))
        elif msg.tag == Tag.WORK:
            kind, body = decode_work(msg.payload)
            if kind == WORK_ITEM:
                ep.send(boss, Tag.RESULT, serialize(ctx.compute(body)))
            elif kind == WORK_REDIRECT:
                boss = body
            else:
                foreman_loop(ctx, body, boss)
                break
        else:
            raise TransportError(f"rank {ep.rank}: unexpected {msg.tag.name} from {boss}")
    return ctx.stats()


def foreman_loop(ctx: _WorkerCtx, pool: list[int], upstream: int) -> None:
    """Serve coarse items from ``upstream`` to ``pool``, one RESULT per coarse item.

    A foreman with an empty pool computes its fine items itself.
    """
    ep, cfg = ctx.ep, ctx.cfg
    ctx.role = "foreman"
    g = cfg.granularity
    fine: deque = deque()
    coarse: dict[int, list] = {}
    assigned: dict[int, int] = {}
    parked: deque = deque()
    ended: set[int] = set()
    awaiting = upstream_done = False
    next_id = 0
    active = set(pool)
    ep.mailbox.watch = active | {upstream}

    def finish(cid):
        acc = coarse.pop(cid)[0]
        ep.send(upstream, Tag.RESULT, serialize(acc))
        ctx.upstream_messages += 1

    def fold(cid, p):
        t0 = time.perf_counter()
        entry = coarse[cid]
        entry[0] = add(entry[0], p)
        entry[1] -= 1
        ctx.timers.t_compute += time.perf_counter() - t0
        if entry[1] == 0:
            finish(cid)

    if not pool:
        while True:
            ep.send(upstream, ctx.request_tag())
            t0 = time.perf_counter()
            msg = ep.recv_from(upstream)
            ctx.timers.t_wait_work += time.perf_counter() - t0
            if msg.tag == Tag.END:
                return
            _, item = decode_work(msg.payload)
            parts = [ctx.compute(fi) for fi in item.split(g)]
            t0 = time.perf_counter()
            total = sum_polynomials(parts)
            ctx.timers.t_compute += time.perf_counter() - t0
            ep.send(upstream, Tag.RESULT, serialize(total))

    def pump():
        nonlocal awaiting
        while parked and fine:
            w = parked.popleft()
            cid, item = fine.popleft()
            assigned[w] = cid
            ep.send(w, Tag.WORK, item.encode())
        if parked and not fine and not awaiting and not upstream_done:
            ep.send(upstream, ctx.request_tag())
            ctx.upstream_messages += 1
            awaiting = True
        if upstream_done and not fine:
            while parked:
                w = parked.popleft()
                ep.send(w, Tag.END)
                ended.add(w)
                ep.mailbox.watch.discard(w)

    while not (upstream_done and len(ended) == len(pool) and not coarse):
        t0 = time.perf_counter()
        msg = ep.recv_any()
        if msg.source == upstream:
            ctx.timers.t_wait_work += time.perf_counter() - t0
            awaiting = False
            if msg.tag == Tag.END:
                upstream_done = True
                ep.mailbox.watch.discard(upstream)
            elif msg.tag == Tag.WORK:
                _, item = decode_work(msg.payload)
                pieces = item.split(g)
                coarse[next_id] = [ZERO, len(pieces)]
                fine.extend((next_id, p) for p in pieces)
                next_id += 1
            else:
                raise TransportError(f"foreman {ep.rank}: unexpected {msg.tag.name} from upstream")
        elif msg.tag in (Tag.REQ, Tag.REQ_STARVED):
            ctx.pool_messages += 1
            parked.append(msg.source)
        elif msg.tag == Tag.RESULT:
            ctx.pool_messages += 1
            fold(assigned.pop(msg.source), deserialize(msg.payload))
        else:
            raise TransportError(f"foreman {ep.rank}: unexpected {msg.tag.name} from {msg.source}")
        pump()


def reduction_sum(ep: Endpoint, participants: list[int], local: Polynomial,
                  log_edges: list | None = None) -> Polynomial:
    """Binary-tree sum over ``participants``; the first one receives the total.

    In round ``k`` the participant at index ``i`` with ``i % 2**(k+1) == 0``
    receives from index ``i + 2**k``.  Non-root participants return zero.
    """
    idx = participants.index(ep.rank)
    n = len(participants)
    acc = local
    step = 1
    rnd = 0
    while step < n:
        if idx % (2 * step) == 0:
            if idx + step < n:
                src = participants[idx + step]
                msg = ep.recv_from(src)
                if msg.tag != Tag.RESULT:
                    raise TransportError(f"rank {ep.rank}: expected RESULT from {src}, got {msg.tag.name}")
                acc = add(acc, deserialize(msg.payload))
        else:
            dst = participants[idx - step]
            if log_edges is not None:
                log_edges.append((rnd, ep.rank, dst))
            ep.send(dst, Tag.RESULT, serialize(acc))
            return ZERO
        step *= 2
        rnd += 1
    return acc


def stateful_worker(ep: Endpoint, cfg: RunConfig, log_edges: list | None = None) -> dict:
    """Keep a local sum; fold the previous block while the next request is in flight."""
    ctx = _WorkerCtx(ep, cfg)
    ctx.role = "stateful"
    tens = ZERO
    pending = None
    while True:
        ep.send(ROOT, ctx.request_tag())
        req = ep.post_receive(ROOT)
        if pending is not None and not pending.is_zero():
            t0 = time.perf_counter()
            tens = add(tens, pending)
            ctx.timers.t_compute += time.perf_counter() - t0
        pending = None
        t0 = time.perf_counter()
        msg = req.wait()
        ctx.timers.t_wait_work += time.perf_counter() - t0
        if msg.tag == Tag.END:
            break
        _, item = decode_work(msg.payload)
        pending = ctx.compute(item)
    participants = list(range(1, ep.world_size))
    edges = [] if log_edges is None else log_edges
    total = reduction_sum(ep, participants, tens, edges)
    if ep.rank == participants[0]:
        ep.send(ROOT, Tag.RESULT, serialize(total))
        edges.append(((len(participants) - 1).bit_length(), ep.rank, ROOT))
    return {**ctx.stats(), "tree_edges": [list(e) for e in edges]}


def worker_main(ep: Endpoint, cfg: RunConfig) -> dict:
    try:
        if cfg.scheme == "stateful":
            return stateful_worker(ep, cfg)
        return worker_loop(ep, cfg)
    finally:
        ep.close()


# -- master side -------------------------------------------------------------


class Master:
    """Master for the mw / addworker / hier modes, with switching for ``combined``."""

    def __init__(self, ep: Endpoint, cfg: RunConfig, mode: Mode):
        self.ep = ep
        self.cfg = cfg
        self.queue = deque(generate_work_items(cfg.size, cfg.granularity))
        self.total_items = len(self.queue)
        self.issued = 0
        self.issued_ranges: list[tuple[int, int]] = []
        self.acc = ZERO
        self.buffer: list[bytes] = []
        self.outstanding = 0
        self.parked: deque = deque()
        self.live = set(ep.workers)
        self.timers = MasterTimers()
        self.policy = PolicyState(Mode.MW, cfg.policy)
        self.adaptive = cfg.scheme == "combined"
        self.foremen: list[int] = []
        self.roles: dict[int, bytes] = {}
        self.coarse = 1
        for target in (Mode.ADDWORKER, Mode.HIER):
            if mode >= target:
                self._enter(target, record=False)

    @property
    def mode(self) -> Mode:
        return self.policy.mode

    # mode changes

    def _enter(self, target: Mode, record: bool = True) -> None:
        if record:
            ev = self.policy.switch(target, self.issued)
            log.info("switch,%s,%s,%d", ev.source, ev.target, ev.item_index)
        else:
            self.policy.mode = target
        if target == Mode.ADDWORKER:
            if not self.acc.is_zero():
                self.buffer.append(serialize(self.acc))
            self.acc = ZERO
        elif target == Mode.HIER:
            self._plan_hierarchy()

    def _plan_hierarchy(self) -> None:
        W = self.ep.world_size - 1
        f = self.cfg.foremen_count()
        f = max(1, min(f, W - 1)) if W > 1 else 1
        self.foremen = list(range(1, f + 1))
        rest = list(range(f + 1, W + 1))
        pools = [rest[i * len(rest) // f:(i + 1) * len(rest) // f] for i in range(f)]
        for boss, pool in zip(self.foremen, pools):
            self.roles[boss] = encode_foreman(pool)
            for w in pool:
                self.roles[w] = encode_redirect(boss)
        self.coarse = max(1, math.ceil(len(rest) / f))

    def _maybe_forced(self) -> None:
        c = self.cfg
        if not self.queue:
            return
        if self.mode == Mode.MW and c.force_addworker_at is not None and self.issued >= c.force_addworker_at:
            self._enter(Mode.ADDWORKER)
        if c.force_hier_at is not None and self.issued >= c.force_hier_at and self.mode < Mode.HIER:
            if self.mode == Mode.MW:
                self._enter(Mode.ADDWORKER)
            self._enter(Mode.HIER)

    # sending

    def _send_items(self, w: int, k: int) -> None:
        first = self.queue.popleft()
        count = first.count
        for _ in range(k - 1):
            if not self.queue:
                break
            count += self.queue.popleft().count
            self.issued += 1
        self.issued += 1
        item = WorkItem(first.start, count)
        self.issued_ranges.append((item.start, item.count))
        self.ep.send(w, Tag.WORK, item.encode())
        self.outstanding += 1

    def _dispatch_add(self, w: int, k: int) -> None:
        t0 = time.perf_counter()
        batch, self.buffer = self.buffer[:k], self.buffer[k:]
        payload = encode_batch(batch)
        if self.cfg.inject_dispatch_delay_ms:
            time.sleep(self.cfg.inject_dispatch_delay_ms / 1000)
        self.ep.send(w, Tag.ADD, payload)
        self.outstanding += 1
        self.timers.t_send_add += time.perf_counter() - t0

    def _end(self, w: int) -> None:
        self.ep.send(w, Tag.END)
        self.live.discard(w)

    # handlers

    def on_result(self, payload: bytes) -> None:
        self.outstanding -= 1
        if self.mode == Mode.ADDWORKER:
            self.buffer.append(payload)
            self._unpark()
            return
        t0 = time.perf_counter()
        self.acc = add(self.acc, deserialize(payload))
        if self.cfg.inject_add_delay_ms:
            time.sleep(self.cfg.inject_add_delay_ms / 1000)
        self.timers.t_add += time.perf_counter() - t0
        if (self.adaptive and self.mode == Mode.MW and self.queue
                and should_switch_to_addworker(self.timers, self.policy.params)):
            self._enter(Mode.ADDWORKER)

    def on_request(self, w: int, starved: bool) -> None:
        self._maybe_forced()
        if self.mode == Mode.ADDWORKER:
            self.policy.vote(starved)
            if (self.adaptive and self.queue
                    and should_switch_to_hier(self.policy.votes, self.timers, self.policy.params)):
                self._enter(Mode.HIER)
        if self.mode == Mode.MW:
            if self.queue:
                self._send_items(w, 1)
            else:
                self._end(w)
        elif self.mode == Mode.ADDWORKER:
            self._serve_addworker(w)
        else:
            self._serve_hier(w)

    def _serve_addworker(self, w: int) -> None:
        maxresult = self.policy.params.maxresult
        if len(self.buffer) >= maxresult:
            self._dispatch_add(w, maxresult)
        elif self.queue:
            self._send_items(w, 1)
        elif len(self.buffer) >= 2:
            self._dispatch_add(w, maxresult)
        elif self.outstanding:
            self.parked.append(w)
        else:
            self._end(w)

    def _unpark(self) -> None:
        while self.parked:
            if len(self.buffer) >= 2:
                self._dispatch_add(self.parked.popleft(), self.policy.params.maxresult)
            elif not self.outstanding:
                self._end(self.parked.popleft())
            else:
                break

    def _serve_hier(self, w: int) -> None:
        role = self.roles.pop(w, None)
        if role is not None:
            self.ep.send(w, Tag.WORK, role)
            if role[0] == WORK_REDIRECT:
                self.live.discard(w)
            return
        if self.queue:
            self._send_items(w, self.coarse)
        else:
            self._end(w)

    def run(self) -> Polynomial:
        ep = self.ep
        ep.mailbox.watch = self.live
        while self.live or self.outstanding:
            t0 = time.perf_counter()
            msg = ep.recv_any()
            self.timers.t_wait += time.perf_counter() - t0
            self.timers.iterations += 1
            if msg.tag == Tag.RESULT:
                self.on_result(msg.payload)
            elif msg.tag in (Tag.REQ, Tag.REQ_STARVED):
                self.on_request(msg.source, msg.tag == Tag.REQ_STARVED)
            else:
                raise TransportError(f"master: unexpected {msg.tag.name} from {msg.source}")
        parts = [deserialize(b) for b in self.buffer]
        if not self.acc.is_zero():
            parts.append(self.acc)
        if len(parts) <= 1:
            return parts[0] if parts else ZERO
        t0 = time.perf_counter()
        total = sum_polynomials(parts)
        self.timers.t_add += time.perf_counter() - t0
        return total

    def fill_stats(self, stats: RunStats) -> None:
        stats.master = self.timers.as_dict()
        stats.items_issued = self.issued
        stats.triples_issued = sum(c for _, c in self.issued_ranges)
        stats.issued_ranges = list(self.issued_ranges)
        stats.switch_events = [asdict(e) for e in self.policy.switches]
        stats.extra["final_mode"] = self.mode.scheme_name
        if self.foremen:
            stats.extra["foremen"] = list(self.foremen)
            stats.extra["coarse_factor"] = self.coarse


def stateful_master(ep: Endpoint, cfg: RunConfig, stats: RunStats) -> Polynomial:
    queue = deque(generate_work_items(cfg.size, cfg.granularity))
    timers = MasterTimers()
    live = set(ep.workers)
    ep.mailbox.watch = live
    issued = []
    while live:
        t0 = time.perf_counter()
        msg = ep.recv_any()
        timers.t_wait += time.perf_counter() - t0
        timers.iterations += 1
        if msg.tag not in (Tag.REQ, Tag.REQ_STARVED):
            raise TransportError(f"master: unexpected {msg.tag.name} from {msg.source} during distribution")
        if queue:
            item = queue.popleft()
            issued.append((item.start, item.count))
            ep.send(msg.source, Tag.WORK, item.encode())
        else:
            ep.send(msg.source, Tag.END)
            live.discard(msg.source)
    t0 = time.perf_counter()
    msg = ep.recv_from(1)
    timers.t_wait += time.perf_counter() - t0
    if msg.tag != Tag.RESULT:
        raise TransportError(f"master: expected final RESULT, got {msg.tag.name}")
    stats.master = timers.as_dict()
    stats.items_issued = len(issued)
    stats.triples_issued = sum(c for _, c in issued)
    stats.issued_ranges = issued
    return deserialize(msg.payload)


def master_main(ep: Endpoint, cfg: RunConfig, stats: RunStats) -> Polynomial:
    if cfg.scheme == "stateful":
        return stateful_master(ep, cfg, stats)
    mode = {"mw": Mode.MW, "combined": Mode.MW, "addworker": Mode.ADDWORKER,
            "hier": Mode.HIER}[cfg.scheme]
    m = Master(ep, cfg, mode)
    poly = m.run()
    m.fill_stats(stats)
    return poly


# -- runners -----------------------------------------------------------------


def worker_argv(cfg: RunConfig, connect: str, rank: int) -> list[str]:
    """Command line that runs one worker rank of ``cfg`` in a child process."""
    p = cfg.policy
    argv = [sys.executable, "-m", "spinv", "compute", "--role", "worker",
            "--connect", connect, "--rank", str(rank),
            "--size", str(cfg.size), "--scheme", cfg.scheme, "--workers", str(cfg.workers),
            "--granularity", str(cfg.granularity), "--transport", "tcp",
            "--ratio", repr(p.ratio), "--maxresult", str(p.maxresult),
            "--inject-compute-delay-ms", repr(cfg.inject_compute_delay_ms)]
    if cfg.negate_accumulator:
        argv += ["--negate-accumulator", cfg.negate_accumulator]
    return argv


def _run_with_processes(cfg: RunConfig, stats: RunStats) -> Polynomial:
    from .transport import parse_address
    host, port = parse_address(cfg.listen)
    listener = TcpListener(host, port)
    addr = "%s:%d" % listener.address
    env = dict(os.environ)
    src = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    procs = []
    if cfg.launch_workers:
        procs = [subprocess.Popen(worker_argv(cfg, addr, r), stdout=subprocess.PIPE, env=env)
                 for r in range(1, cfg.workers + 1)]
    else:
        log.warning("listening on %s for %d workers", addr, cfg.workers)
    try:
        ep = listener.accept_workers(cfg.workers)
        ep.timeout = cfg.timeout
        t0 = time.perf_counter()
        try:
            poly = master_main(ep, cfg, stats)
        finally:
            stats.wall_seconds = time.perf_counter() - t0
            stats.messages_sent, stats.messages_received = ep.sent, ep.received
            ep.close()
        for r, proc in enumerate(procs, start=1):
            out, _ = proc.communicate(timeout=60)
            if proc.returncode:
                raise TransportError(f"worker {r} exited with status {proc.returncode}")
            line = out.decode().strip().splitlines()
            if line:
                stats.per_rank[r] = json.loads(line[-1])
        return poly
    finally:
        for proc in procs:
            if proc.poll() is None:
                proc.kill()
                proc.wait()


def run(cfg: RunConfig) -> tuple[InvariantResult, RunStats]:
    """Execute ``cfg`` and return the invariant with run statistics."""
    cfg.validate()
    stats = RunStats(cfg.scheme, cfg.size, cfg.workers if cfg.scheme != "seq" else 0,
                     cfg.granularity)
    if cfg.scheme == "seq":
        if cfg.negate_accumulator:
            from .invariant import invariant_optimized
            res = invariant_optimized(cfg.size, cfg.negate_accumulator)
        else:
            res = compute_invariant(cfg.size, cfg.algorithm)
        stats.wall_seconds = res.wall_seconds
        stats.result_terms = res.poly.num_terms()
        return res, stats

    if cfg.transport == "tcp" and cfg.processes:
        poly = _run_with_processes(cfg, stats)
    else:
        eps = spawn(cfg.transport, cfg.workers, cfg.timeout)
        worker_stats: dict[int, dict] = {}
        errors: list[BaseException] = []

        def target(ep):
            try:
                worker_stats[ep.rank] = worker_main(ep, cfg)
            except BaseException as exc:
                errors.append(exc)

        threads = [threading.Thread(target=target, args=(ep,), name=f"rank{ep.rank}", daemon=True)
                   for ep in eps[1:]]
        for th in threads:
            th.start()
        t0 = time.perf_counter()
        try:
            poly = master_main(eps[0], cfg, stats)
        except BaseException:
            if errors:
                raise errors[0]
            raise
        finally:
            stats.wall_seconds = time.perf_counter() - t0
            stats.messages_sent, stats.messages_received = eps[0].sent, eps[0].received
            eps[0].close()
            for th in threads:
                th.join(cfg.timeout)
        if errors:
            raise errors[0]
        stats.per_rank = dict(sorted(worker_stats.items()))
    stats.result_terms = poly.num_terms()
    algo = f"optimized/{cfg.scheme}"
    return InvariantResult(poly, cfg.size, algo, stats.wall_seconds), stats


def run_master_worker(cfg: RunConfig):
    return run(replace(cfg, scheme="mw"))


def run_addworker(cfg: RunConfig):
    return run(replace(cfg, scheme="addworker"))


def run_hierarchical(cfg: RunConfig):
    return run(replace(cfg, scheme="hier"))


def run_stateful(cfg: RunConfig):
    return run(replace(cfg, scheme="stateful"))
