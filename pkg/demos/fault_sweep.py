"""Run seeded fault scenarios through the simulator and summarize.

Every run uses the real protocol code on a virtual clock, with drops, delays,
crashes and partitions, and checks agreement, trim safety, log prefixes,
election liveness and linearizability of the client history.

    python demos/fault_sweep.py [seeds]
"""

import sys
import time

from replicant.sim import run
from replicant.sim.scenarios import check_trim_recovery, follower_partition_params
from replicant.sim.sweep import run_sweep


def main(seeds: int = 100):
    t = time.monotonic()
    summary = run_sweep(range(seeds))
    print(f"{summary.runs} runs in {time.monotonic() - t:.1f} s, "
          f"{summary.ops_ok} client ops completed")
    print(f"linearizable histories: {summary.linearizable_runs}/{summary.runs}")
    print(f"longest leaderless stretch: {summary.max_leaderless:.2f} s (seed {summary.worst_seed})")
    print("failures:", summary.failures or "none")

    params = follower_partition_params(seed=0)
    found = check_trim_recovery(params, run(params))
    part = params.partitions[0]
    print(f"\nfollower cut off from {part.start:g} s to {part.end:g} s:")
    print(f"  trim frontier held at {found.frozen_gle} while the leader's log grew by {found.growth}")
    print(f"  every peer trimmed past index {found.heal_last_index} at {found.recovered_at:.2f} s "
          f"(bound {found.bound:.2f} s)")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100)
