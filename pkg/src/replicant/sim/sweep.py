"""Seeded fault scenarios for sweeping the simulator over many runs.

Every scenario keeps a majority alive and connected at all times, so each is
*fair*: election liveness is expected to hold, not just safety.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from replicant.sim.harness import LEADER, SimParams, SimReport, run
from replicant.sim.network import Crash, Partition

FAULT_KINDS = ("leader_crash", "leader_partition", "peer_crash", "minority_partition",
               "repeated_leader_crash")
DROP_PROBS = (0.0, 0.1, 0.3)
PEER_COUNTS = (3, 5)


def sweep_params(seed: int, horizon: float = 8.0, max_ops: int = 60,
                 n_clients: int = 4) -> SimParams:
    rng = random.Random(f"sweep-{seed}")
    n = rng.choice(PEER_COUNTS)
    drop = rng.choice(DROP_PROBS)
    kind = FAULT_KINDS[seed % len(FAULT_KINDS)]
    start = rng.uniform(1.0, 3.0)
    end = start + rng.uniform(0.5, 3.0)
    crashes, partitions = [], []
    if kind == "leader_crash":
        crashes = [Crash(LEADER, start, end)]
    elif kind == "leader_partition":
        partitions = [Partition(start, end, (LEADER,))]
    elif kind == "peer_crash":
        crashes = [Crash(rng.randrange(n), start, end)]
    elif kind == "minority_partition":
        side = rng.sample(range(n), rng.randint(1, (n - 1) // 2))
        partitions = [Partition(start, end, tuple(sorted(side)))]
    else:
        second = end + rng.uniform(0.5, 1.5)
        crashes = [Crash(LEADER, start, end), Crash(LEADER, second, second + (end - start))]
    return SimParams(seed=seed, n_peers=n, drop_prob=drop, delay_min=0.001, delay_max=0.100,
                     crashes=crashes, partitions=partitions, horizon=horizon,
                     n_clients=n_clients, max_ops=max_ops)


@dataclass
class SweepSummary:
    runs: int = 0
    failures: list = field(default_factory=list)        # (seed, reason)
    max_leaderless: float = 0.0
    worst_seed: int = -1
    ops_ok: int = 0
    linearizable_runs: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def add(self, rep: SimReport) -> None:
        self.runs += 1
        if rep.max_leaderless > self.max_leaderless:
            self.max_leaderless, self.worst_seed = rep.max_leaderless, rep.seed
        self.ops_ok += rep.ops.get("completed", 0)
        self.linearizable_runs += rep.linearizable is True
        for name in ("agreement_violations", "trim_violations", "prefix_divergences",
                     "ballot_conflicts", "liveness_violations", "errors"):
            if getattr(rep, name):
                self.failures.append((rep.seed, name, getattr(rep, name)[0]))
        if rep.linearizable is False:
            self.failures.append((rep.seed, "not_linearizable", rep.lin_conflict))


def run_sweep(seeds, **kw) -> SweepSummary:
    summary = SweepSummary()
    for seed in seeds:
        summary.add(run(sweep_params(seed, **kw)))
    return summary
