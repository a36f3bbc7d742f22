"""Measure the same stalling server two ways.

The stub answers in 1 ms except for a 1 s burst of 250 ms requests every
100 requests. A closed-loop client waits out each stall and then carries on,
so almost none of its samples see the stall. An open-loop client keeps its
schedule, and every request scheduled during a stall is charged the time it
spent waiting. The stalls also cost more than the schedule leaves room for,
so the open-loop backlog keeps growing.

    python demos/coordinated_omission.py [seconds]
"""

import sys

from replicant.loadgen import RunConfig, StubServer, WorkloadSpec, report, run, stall_profile

MS = 1e6


def main(seconds: float = 20.0):
    spec = WorkloadSpec.named("A", 1000)
    for mode, threads in (("closed", 1), ("open", 64)):
        with StubServer(stall_profile()) as stub:
            cfg = RunConfig([stub.address], mode=mode, rate=100, threads=threads,
                            duration=seconds, warmup=1)
            rep = report(run(cfg, spec).samples)
        row = {k: (v["service"] / MS, v["intended"] / MS) for k, v in rep.percentiles.items()}
        print(f"{mode:6} loop, {rep.throughput:.0f} ops/s   (service ms, intended ms)")
        for label, (svc, intended) in row.items():
            print(f"    {label:6} {svc:9.2f} {intended:9.2f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 20.0)
