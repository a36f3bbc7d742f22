"""Named simulation scenarios with their expected-behavior checks."""

from __future__ import annotations

from dataclasses import dataclass, field

from replicant.sim.harness import FOLLOWER, SimParams, SimReport
from replicant.sim.network import Partition


def follower_partition_params(seed: int = 0, start: float = 2.0, length: float = 5.0,
                              n_peers: int = 3, commit_interval: float = 0.150) -> SimParams:
    """One follower cut off for ``length`` virtual seconds under steady client load."""
    return SimParams(seed=seed, n_peers=n_peers, delay_min=0.001, delay_max=0.010,
                     partitions=[Partition(start, start + length, (FOLLOWER,))],
                     horizon=start + length + 4.0, n_clients=3, max_ops=600,
                     think_min=0.01, think_max=0.05, probe_interval=0.05,
                     commit_interval=commit_interval, check_history=False)


@dataclass
class TrimFindings:
    frozen_gle: int = -1                 # trim frontier held during the partition
    gle_changes: list = field(default_factory=list)
    growth: int = 0                      # leader log growth while partitioned
    heal_last_index: int = 0             # leader's last index when the link came back
    recovered_at: float | None = None    # first time every peer trimmed past it
    bound: float = 0.0
    elections_after_heal: int = 0

    @property
    def ok(self) -> bool:
        return (not self.gle_changes and self.growth > 0 and self.recovered_at is not None
                and self.recovered_at <= self.bound and self.elections_after_heal <= 2)


def check_trim_recovery(params: SimParams, report: SimReport) -> TrimFindings:
    """The trim frontier must not move while a follower is cut off (it cannot
    confirm execution), and once the link heals every peer must trim past the
    heal-time log within two elections plus five commit intervals."""
    part = params.partitions[0]
    cfg = params.peer_config(0)
    election = cfg.election_timeout_base + cfg.election_jitter_max
    out = TrimFindings(bound=part.end + 2 * election + 5 * params.commit_interval)
    # a commit round already in flight at the cut may still land
    settle = part.start + params.commit_interval + params.delay_max
    during = [s for s in report.timeline if settle <= s["time"] < part.end]
    if not during:
        return out
    out.frozen_gle = max(p["global_last_executed"] for p in during[0]["peers"])
    for snap in during:
        gle = max(p["global_last_executed"] for p in snap["peers"])
        if gle != out.frozen_gle:
            out.gle_changes.append((snap["time"], gle))
    leader = lambda s: max(s["peers"], key=lambda p: (p["leader"], p["last_index"]))
    out.growth = leader(during[-1])["log_size"] - leader(during[0])["log_size"]
    out.heal_last_index = leader(during[-1])["last_index"]
    for snap in report.timeline:
        if snap["time"] >= part.end and all(p["global_last_executed"] >= out.heal_last_index
                                            for p in snap["peers"]):
            out.recovered_at = snap["time"]
            break
    out.elections_after_heal = sum(1 for e in report.leaders if e["time"] >= part.end)
    return out
