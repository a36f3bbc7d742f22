"""Open- and closed-loop load runners.

Open loop: a scheduler releases operation ``i`` at ``t0 + i/rate`` and hands
it to a pool of workers. Each sample keeps its *scheduled* start, so time an
operation spends waiting (for a worker, for the server) shows up in its
intended latency. Closed loop: each worker issues its next operation when the
previous one completes; there is no schedule, so ``scheduled == actual``.
"""

from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Optional

import numpy as np

from replicant import aio
from replicant.loadgen.client import ClusterClient, ConnectionPool
from replicant.loadgen.histogram import EmptySample, LatencyHistogram
from replicant.loadgen.workload import Op, WorkloadSpec, op_stream

log = logging.getLogger(__name__)

NS = 10**9
MIN_SLEEP_NS = 1_000_000   # uvloop timers have 1 ms resolution; the lag still counts as latency


class LoadError(RuntimeError):
    pass


@dataclass(slots=True)
class LatencySample:
    kind: str
    scheduled_ns: int
    actual_ns: int
    completion_ns: int
    retries: int = 0
    error: Optional[str] = None
    warmup: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def intended_ns(self) -> int:
        return self.completion_ns - self.scheduled_ns

    @property
    def service_ns(self) -> int:
        return self.completion_ns - self.actual_ns


@dataclass
class RunConfig:
    cluster: list[str]
    mode: str = "open"
    rate: Optional[float] = None       # ops/s; required in open mode, optional throttle in closed
    threads: int = 64                  # closed-loop workers, or the open-loop dispatch pool
    connections: int = 8               # pipelined connections per server, shared by the workers
    duration: float = 60.0
    warmup: float = 20.0
    seed: int = 0
    poisson: bool = False
    max_retries: int = 100
    drain_timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in ("open", "closed"):
            raise ValueError("mode must be open or closed")
        if self.mode == "open" and not (self.rate and self.rate > 0):
            raise ValueError("open loop needs a positive rate")
        if self.rate is not None and self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.connections < 1:
            raise ValueError("connections must be positive")
        if self.threads < 1 or self.duration <= 0 or self.warmup < 0:
            raise ValueError("threads and duration must be positive, warmup non-negative")
        if not self.cluster:
            raise ValueError("no cluster addresses")


@dataclass
class RunResult:
    samples: list[LatencySample]
    wall_s: float
    cpu_s: float
    issued: int
    extra: dict = field(default_factory=dict)

    @property
    def cpu_utilization(self) -> float:
        """Generator CPU time over wall time; near 1.0 means the generator is the bottleneck."""
        return self.cpu_s / self.wall_s if self.wall_s > 0 else 0.0


def schedule_ns(t0: int, i: int, rate: Fraction) -> int:
    """Arrival time of op ``i``: exact integer arithmetic, so no drift."""
    return t0 + (i * NS * rate.denominator) // rate.numerator


def _classify(reply: str) -> Optional[str]:
    if reply == "ok" or reply.startswith("ok ") or reply == "notfound":
        return None
    return reply or "empty reply"


async def _issue(client: ClusterClient, line: bytes) -> tuple[Optional[str], int]:
    try:
        reply, retries = await client.call(line)
    except (OSError, ConnectionError) as exc:
        return f"{type(exc).__name__}: {exc}", client.max_retries
    return _classify(reply), retries


class _Clients(list):
    def __init__(self, cfg: RunConfig, n: int):
        target = [cfg.cluster[0]]
        self.pool = ConnectionPool(cfg.connections)
        super().__init__(ClusterClient(cfg.cluster, target, cfg.max_retries, pool=self.pool,
                                       lane=i) for i in range(n))

    def close(self):
        self.pool.close()


async def open_loop(cfg: RunConfig, spec: WorkloadSpec,
                    ops: Optional[Iterator[Op]] = None) -> RunResult:
    if cfg.mode != "open":
        raise ValueError("open_loop needs mode='open'")
    ops = ops if ops is not None else op_stream(spec, cfg.seed)
    rate = Fraction(cfg.rate).limit_denominator(10**6)
    total = math.floor((cfg.warmup + cfg.duration) * cfg.rate)
    gaps = None
    if cfg.poisson:
        rng = np.random.default_rng(cfg.seed + 2)
        gaps = np.cumsum(np.rint(rng.exponential(NS / cfg.rate, total)).astype(np.int64))
    clients = _Clients(cfg, cfg.threads)
    queue: asyncio.Queue = asyncio.Queue()
    samples: list[LatencySample] = []
    cpu0, wall0 = time.process_time(), time.monotonic()
    t0 = time.monotonic_ns() + 10_000_000
    warm_end = t0 + int(cfg.warmup * NS)

    async def worker(client: ClusterClient):
        while True:
            item = await queue.get()
            if item is None:
                return
            i, sched, op = item
            actual = max(time.monotonic_ns(), sched)
            err, retries = await _issue(client, op.line(spec, cfg.seed, i + 1))
            samples.append(LatencySample(op.kind, sched, actual, time.monotonic_ns(),
                                         retries, err, sched < warm_end))

    tasks = [asyncio.create_task(worker(c)) for c in clients]
    pending_items: dict = {}
    try:
        i = 0
        while i < total:
            # release everything due, then sleep; each op keeps its exact schedule
            now = time.monotonic_ns()
            while i < total:
                sched = t0 + int(gaps[i]) if gaps is not None else schedule_ns(t0, i, rate)
                if sched > now:
                    break
                queue.put_nowait((i, sched, next(ops)))
                i += 1
            if i < total:
                await asyncio.sleep(max(sched - now, MIN_SLEEP_NS) / NS)
        for _ in tasks:
            queue.put_nowait(None)
        done, still = await asyncio.wait(tasks, timeout=cfg.drain_timeout)
        for t in still:
            t.cancel()
        if still:
            # anything not completed within the drain window is charged as a timeout
            now = time.monotonic_ns()
            while not queue.empty():
                item = queue.get_nowait()
                if item is not None:
                    i, sched, op = item
                    pending_items[i] = LatencySample(op.kind, sched, max(now, sched), now,
                                                     0, "timeout", sched < warm_end)
            samples.extend(pending_items.values())
            log.warning("%d workers still busy after the drain window", len(still))
    finally:
        for t in tasks:
            t.cancel()
        clients.close()
    return RunResult(samples, time.monotonic() - wall0, time.process_time() - cpu0, total)


async def closed_loop(cfg: RunConfig, spec: WorkloadSpec,
                      ops: Optional[Iterator[Op]] = None) -> RunResult:
    ops = ops if ops is not None else op_stream(spec, cfg.seed)
    clients = _Clients(cfg, cfg.threads)
    samples: list[LatencySample] = []
    counter = [0]
    cpu0, wall0 = time.process_time(), time.monotonic()
    t0 = time.monotonic_ns()
    warm_end = t0 + int(cfg.warmup * NS)
    end = warm_end + int(cfg.duration * NS)
    # optional YCSB-style per-thread throttle: thread deadlines at a fixed cadence
    interval = int(cfg.threads * NS / cfg.rate) if cfg.rate else 0

    async def worker(j: int, client: ClusterClient):
        k = 0
        while True:
            if interval:
                deadline = t0 + (j * interval) // cfg.threads + k * interval
                delay = deadline - time.monotonic_ns()
                if delay > 0:
                    await asyncio.sleep(delay / NS)
                k += 1
            start = time.monotonic_ns()
            if start >= end:
                return
            i = counter[0]
            counter[0] += 1
            op = next(ops)
            err, retries = await _issue(client, op.line(spec, cfg.seed, i + 1))
            samples.append(LatencySample(op.kind, start, start, time.monotonic_ns(),
                                         retries, err, start < warm_end))

    try:
        await asyncio.gather(*(worker(j, c) for j, c in enumerate(clients)))
    finally:
        clients.close()
    return RunResult(samples, time.monotonic() - wall0, time.process_time() - cpu0, counter[0])


async def load(cfg: RunConfig, spec: WorkloadSpec, concurrency: int = 32) -> int:
    """Insert every record; raises LoadError if any insert is not confirmed."""
    if spec.record_count == 0:
        return 0
    from replicant.loadgen.workload import record_key, record_value
    clients = _Clients(cfg, min(concurrency, spec.record_count))
    ids = iter(range(spec.record_count))
    failures: list[str] = []

    async def worker(client: ClusterClient):
        for rid in ids:
            line = f"put {record_key(spec, rid)} {record_value(spec, cfg.seed, rid)}\n".encode()
            err, _ = await _issue(client, line)
            if err is not None:
                failures.append(f"record {rid}: {err}")
                return

    try:
        await asyncio.gather(*(worker(c) for c in clients))
    finally:
        clients.close()
    if failures:
        raise LoadError(f"{len(failures)} records unconfirmed, first: {failures[0]}")
    return spec.record_count


def run_open_loop(cfg: RunConfig, spec: WorkloadSpec) -> list[LatencySample]:
    return aio.run(open_loop(cfg, spec)).samples


def run_closed_loop(cfg: RunConfig, spec: WorkloadSpec) -> list[LatencySample]:
    return aio.run(closed_loop(cfg, spec)).samples


def load_phase(cfg: RunConfig, spec: WorkloadSpec) -> None:
    aio.run(load(cfg, spec))


def run(cfg: RunConfig, spec: WorkloadSpec) -> RunResult:
    runner = open_loop if cfg.mode == "open" else closed_loop
    return aio.run(runner(cfg, spec))


_WHICH: dict[str, Callable[[LatencySample], int]] = {
    "intended": lambda s: s.intended_ns,
    "service": lambda s: s.service_ns,
}


def histogram(samples: list[LatencySample], which: str = "intended",
              include_warmup: bool = False) -> LatencyHistogram:
    try:
        get = _WHICH[which]
    except KeyError:
        raise ValueError("which must be 'intended' or 'service'") from None
    h = LatencyHistogram()
    h.record_many([get(s) for s in samples if s.ok and (include_warmup or not s.warmup)])
    return h


def percentile(samples: list[LatencySample], p: float, which: str = "intended") -> int:
    """Nearest-rank percentile (``p`` in (0, 1]) of successful post-warmup samples, in ns."""
    h = histogram(samples, which)
    if h.total == 0:
        raise EmptySample("no post-warmup samples")
    return h.value_at(p)
