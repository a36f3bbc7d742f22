"""``loadgen load|run|search``: drive a cluster and write latency CSVs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from replicant.loadgen.report import report
from replicant.loadgen.runner import LoadError, RunConfig, load_phase, run
from replicant.loadgen.search import ZeroCapacity, find_max_throughput, ms_to_ns
from replicant.loadgen.workload import WorkloadSpec


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loadgen", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["load", "run", "search"])
    ap.add_argument("--cluster", required=True, help="comma-separated client addresses")
    ap.add_argument("--workload", default="A", choices=["A", "B", "a", "b"])
    ap.add_argument("--records", type=int, default=1000)
    ap.add_argument("--mode", choices=["open", "closed"], default="open")
    ap.add_argument("--rate", type=float, help="target ops/s (open loop; throttle in closed loop)")
    ap.add_argument("--threads", type=int, default=64,
                    help="closed-loop workers, or the open-loop dispatch pool size")
    ap.add_argument("--connections", type=int, default=8,
                    help="pipelined connections per server, shared by the workers")
    ap.add_argument("--duration", type=float, default=60.0, help="seconds (per trial for search)")
    ap.add_argument("--warmup", type=float, default=20.0, help="seconds")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--poisson", action="store_true", help="exponential interarrivals")
    ap.add_argument("--target-p99", type=float, default=20.0, help="ms, for search")
    ap.add_argument("--min-rate", type=float, default=100.0)
    ap.add_argument("--max-rate", type=float, default=100_000.0)
    ap.add_argument("--resolution", type=float, default=100.0, help="ops/s, for search")
    ap.add_argument("--out", type=Path, help="CDF CSV path; the summary goes to <out>.summary.csv")
    ap.add_argument("--log-level", default="WARNING")
    return ap


def _write(rep, out: Optional[Path]) -> None:
    sys.stdout.write(rep.summary_csv())
    if rep.warning:
        print(f"warning: {rep.warning}", file=sys.stderr)
    if out is not None:
        out.write_text(rep.cdf_csv())
        out.with_suffix(".summary.csv").write_text(rep.summary_csv())


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(message)s")
    spec = WorkloadSpec.named(args.workload, args.records)
    mode = {"search": "open", "load": "closed"}.get(args.command, args.mode)
    rate = args.rate
    if args.command == "search":
        rate = args.min_rate          # placeholder; every trial sets its own rate
    try:
        cfg = RunConfig(cluster=[a.strip() for a in args.cluster.split(",") if a.strip()],
                        mode=mode, rate=rate, threads=args.threads,
                        connections=args.connections, duration=args.duration,
                        warmup=args.warmup, seed=args.seed, poisson=args.poisson)
    except ValueError as exc:
        print(f"loadgen: {exc}", file=sys.stderr)
        return 2

    if args.command == "load":
        try:
            load_phase(cfg, spec)
        except LoadError as exc:
            print(f"loadgen: {exc}", file=sys.stderr)
            return 1
        print(f"loaded {spec.record_count} records")
        return 0

    if args.command == "run":
        result = run(cfg, spec)
        _write(report(result.samples), args.out)
        print(f"# generator cpu utilization {result.cpu_utilization:.2f}", file=sys.stderr)
        return 0

    try:
        found = find_max_throughput(cfg, spec, ms_to_ns(args.target_p99), args.min_rate,
                                    args.max_rate, args.resolution)
    except ZeroCapacity as exc:
        print(f"loadgen: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"max_rate": found.rate,
                      "trials": [t.__dict__ for t in found.trials]}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
