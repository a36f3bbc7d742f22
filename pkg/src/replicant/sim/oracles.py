"""Global safety checks over the state of every simulated peer."""

from __future__ import annotations

from dataclasses import dataclass, field

from replicant.replog import Instance


@dataclass
class PeerView:
    """What the oracles need to know about one peer."""
    peer: int
    instances: dict            # index -> Instance currently retained
    last_executed: int
    global_last_executed: int
    executed: list = field(default_factory=list)   # [(index, command, client_id)] in order


def _value(inst: Instance):
    return inst.command, inst.client_id


def check_agreement(views: list[PeerView]) -> list[dict]:
    """Pairwise comparison of committed/executed entries, including executed history."""
    violations = []
    chosen: dict[int, tuple] = {}   # index -> (peer, value)
    for view in views:
        seen = {}
        for index, command, client_id in view.executed:
            seen[index] = (command, client_id)
        for index, inst in view.instances.items():
            if inst.is_committed:
                seen.setdefault(index, _value(inst))
        for index, value in sorted(seen.items()):
            first = chosen.get(index)
            if first is None:
                chosen[index] = (view.peer, value)
            elif first[1] != value:
                violations.append({"index": index, "peers": [first[0], view.peer],
                                   "values": [repr(first[1]), repr(value)]})
    return violations


def check_trim_safety(views: list[PeerView]) -> list[dict]:
    floor = min(v.last_executed for v in views)
    return [{"peer": v.peer, "global_last_executed": v.global_last_executed,
             "min_last_executed": floor}
            for v in views if v.global_last_executed > floor]


def check_prefixes(views: list[PeerView]) -> list[dict]:
    """Every pair of executed sequences must be prefixes of one another."""
    out = []
    for i, a in enumerate(views):
        for b in views[i + 1:]:
            n = min(len(a.executed), len(b.executed))
            for k in range(n):
                if a.executed[k] != b.executed[k]:
                    out.append({"peers": [a.peer, b.peer], "position": k,
                                "index": a.executed[k][0]})
                    break
    return out


class IncrementalAgreement:
    """Agreement checked as each commit/execution happens, so trimmed
    history is covered too."""

    def __init__(self):
        self.chosen: dict[int, tuple] = {}
        self.violations: list[dict] = []

    def observe(self, peer: int, inst: Instance) -> None:
        value = _value(inst)
        first = self.chosen.get(inst.index)
        if first is None:
            self.chosen[inst.index] = (peer, value)
        elif first[1] != value:
            self.violations.append({"index": inst.index, "peers": [first[0], peer],
                                    "values": [repr(first[1]), repr(value)]})
