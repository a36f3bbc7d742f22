"""Hand-built histories shared by the unit and acceptance tests."""

from dataclasses import replace

from replicant.kvstore import Command, CommandResult, Kind
from replicant.sim.linearizability import HistoryEvent

OK = CommandResult(True)
MISS = CommandResult(False)


def got(v: bytes) -> CommandResult:
    return CommandResult(True, v)


def ev(op, proc, t0, t1, cmd, res=None):
    return HistoryEvent(op, proc, t0, t1, cmd, res)


def linearizable_fixtures() -> dict:
    return {
        "sequential": [ev(0, 0, 0, 1, Command.put(b"x", b"1"), OK),
                       ev(1, 0, 2, 3, Command.get(b"x"), got(b"1")),
                       ev(2, 0, 4, 5, Command.delete(b"x"), OK),
                       ev(3, 0, 6, 7, Command.get(b"x"), MISS)],
        # the read overlaps the write, so it may see either value
        "concurrent read sees new value": [
            ev(0, 0, 0, 1, Command.put(b"x", b"1"), OK),
            ev(1, 1, 2, 6, Command.put(b"x", b"2"), OK),
            ev(2, 2, 3, 4, Command.get(b"x"), got(b"2")),
            ev(3, 2, 5, 7, Command.get(b"x"), got(b"2"))],
        "pending write may take effect": [
            ev(0, 0, 0, None, Command.put(b"x", b"1")),
            ev(1, 1, 5, 6, Command.get(b"x"), got(b"1"))],
        "pending write may never take effect": [
            ev(0, 0, 0, None, Command.put(b"x", b"1")),
            ev(1, 1, 5, 6, Command.get(b"x"), MISS)],
    }


def corrupted_fixtures(real_history=None) -> dict:
    out = {
        "stale read": [ev(0, 0, 0, 1, Command.put(b"x", b"1"), OK),
                       ev(1, 0, 2, 3, Command.put(b"x", b"2"), OK),
                       ev(2, 1, 4, 5, Command.get(b"x"), got(b"1"))],
        "value never written": [ev(0, 0, 0, 1, Command.put(b"x", b"1"), OK),
                                ev(1, 1, 2, 3, Command.get(b"x"), got(b"9"))],
        "delete reports a missing key": [ev(0, 0, 0, 1, Command.put(b"x", b"1"), OK),
                                         ev(1, 0, 2, 3, Command.delete(b"x"), MISS)],
    }
    if real_history is not None:
        out["real history with a flipped read"] = flip_a_read(real_history)
    return out


def flip_a_read(history):
    """Replace the result of the last completed successful get with a bogus value."""
    hist = list(history)
    for i in range(len(hist) - 1, -1, -1):
        h = hist[i]
        if not h.pending and h.command.kind is Kind.GET and h.result.ok:
            hist[i] = replace(h, result=got(b"never-written"))
            return hist
    raise ValueError("history has no successful read to corrupt")
