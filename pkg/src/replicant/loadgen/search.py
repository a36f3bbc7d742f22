"""Binary search for the highest open-loop rate that meets a tail-latency target."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from replicant.loadgen.histogram import EmptySample
from replicant.loadgen.runner import NS, LatencySample, RunConfig, percentile, run_open_loop
from replicant.loadgen.workload import WorkloadSpec

log = logging.getLogger(__name__)


class ZeroCapacity(RuntimeError):
    pass


@dataclass
class Trial:
    rate: float
    p99_ns: Optional[int]
    errors: int
    passed: bool


@dataclass
class SearchResult:
    rate: float
    trials: list[Trial] = field(default_factory=list)


Runner = Callable[[RunConfig, WorkloadSpec], list[LatencySample]]


def trial(cfg: RunConfig, spec: WorkloadSpec, rate: float, target_p99_ns: int,
          max_error_fraction: float = 0.01, runner: Runner = run_open_loop) -> Trial:
    samples = runner(dataclasses.replace(cfg, mode="open", rate=rate), spec)
    measured = [s for s in samples if not s.warmup]
    errors = sum(1 for s in measured if not s.ok)
    try:
        p99 = percentile(samples, 0.99, "intended")
    except EmptySample:
        return Trial(rate, None, errors, False)
    passed = p99 <= target_p99_ns and errors <= max_error_fraction * len(measured)
    return Trial(rate, p99, errors, passed)


def find_max_throughput(cfg: RunConfig, spec: WorkloadSpec, target_p99_ns: int,
                        min_rate: float = 100.0, max_rate: float = 100_000.0,
                        resolution: float = 100.0, runner: Runner = run_open_loop) -> SearchResult:
    """Highest rate in ``[min_rate, max_rate]`` whose intended p99 meets the target.

    Each probe is a full open-loop trial using ``cfg.duration`` and
    ``cfg.warmup``. The answer is accurate to ``resolution`` ops/s provided
    the pass/fail boundary is monotone in the rate.
    """
    if not 0 < min_rate <= max_rate or resolution <= 0:
        raise ValueError("need 0 < min_rate <= max_rate and a positive resolution")
    result = SearchResult(0.0)

    def probe(rate: float) -> bool:
        t = trial(cfg, spec, rate, target_p99_ns, runner=runner)
        result.trials.append(t)
        log.info("rate %.1f ops/s: p99 %s ms, %d errors -> %s", rate,
                 "n/a" if t.p99_ns is None else f"{t.p99_ns / 1e6:.2f}",
                 t.errors, "pass" if t.passed else "fail")
        return t.passed

    if not probe(min_rate):
        raise ZeroCapacity(f"p99 target {target_p99_ns / 1e6:g} ms missed even at {min_rate:g} ops/s")
    lo, hi = min_rate, max_rate
    if probe(hi):
        result.rate = hi
        return result
    while hi - lo > resolution:
        mid = (lo + hi) / 2
        if probe(mid):
            lo = mid
        else:
            hi = mid
    result.rate = lo
    return result


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS / 1000))
