"""``simrun``: run one seeded simulation and print its report as JSON."""

from __future__ import annotations

import argparse
import json
import sys

from replicant.sim.harness import FOLLOWER, LEADER, SimParams, run


def _peer(value):
    aliases = {"leader": LEADER, "follower": FOLLOWER}
    return aliases[value] if value in aliases else int(value)


def load_scenario(path: str) -> dict:
    """Scenario files hold SimParams overrides; times are in seconds and a
    peer may be given as ``"leader"`` or ``"follower"``::

        {"crashes": [{"peer": "leader", "start": 1.0, "end": 3.0}],
         "partitions": [{"start": 4.0, "end": 6.0, "side": [2]}],
         "n_clients": 4, "max_ops": 120}
    """
    with open(path) as f:
        doc = json.load(f)
    for c in doc.get("crashes", []):
        c["peer"] = _peer(c["peer"])
    for p in doc.get("partitions", []):
        p["side"] = [_peer(s) for s in p["side"]]
    return doc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="simrun", description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--peers", type=int, default=3)
    ap.add_argument("--drop", type=float, default=0.0, help="per-message drop probability")
    ap.add_argument("--delay-min", type=float, default=1.0, help="ms")
    ap.add_argument("--delay-max", type=float, default=10.0, help="ms")
    ap.add_argument("--horizon", type=float, default=10.0, help="virtual seconds")
    ap.add_argument("--clients", type=int, default=3)
    ap.add_argument("--ops", type=int, default=100, help="max client operations")
    ap.add_argument("--scenario", help="JSON file with faults and parameter overrides")
    ap.add_argument("--history", action="store_true", help="include the client history")
    args = ap.parse_args(argv)

    kw = dict(seed=args.seed, n_peers=args.peers, drop_prob=args.drop,
              delay_min=args.delay_min / 1000, delay_max=args.delay_max / 1000,
              horizon=args.horizon, n_clients=args.clients, max_ops=args.ops)
    if args.scenario:
        kw.update(load_scenario(args.scenario))
    try:
        params = SimParams(**kw)
    except (TypeError, ValueError) as exc:
        print(f"simrun: {exc}", file=sys.stderr)
        return 2
    report = run(params)
    out = report.to_json()
    if args.history:
        out["history"] = [{"op": h.op_id, "process": h.process, "invoke": h.invoke,
                           "complete": h.complete, "command": h.command.kind.value,
                           "key": h.command.key.decode("latin-1"),
                           "value": None if h.command.value is None
                           else h.command.value.decode("latin-1"),
                           "ok": None if h.result is None else h.result.ok,
                           "result": None if h.result is None or h.result.value is None
                           else h.result.value.decode("latin-1")}
                          for h in report.history]
    json.dump(out, sys.stdout, indent=2, default=repr)
    sys.stdout.write("\n")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
