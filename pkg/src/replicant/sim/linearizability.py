"""Exhaustive linearizability checking for key-value histories.

The search is the Wing & Gong backtracking search with memoization of
``(linearized set, model state)`` pairs. Because every operation touches one
key, the history is split per key first (linearizability is compositional),
which keeps each search small.

Operations without a completion time are *pending*: they may take effect at
any point after their invocation, or never. Pending reads carry no
information and are dropped.

Written values that no completed read returns are indistinguishable to the
model, so they share one state. That makes pending writes with the same
effect interchangeable: any linearization using a later-invoked one can use
the earliest unused one instead, since pending ops have no deadline. The
search only tries that one, which turns ``2**k`` subsets of ``k`` such
writes into ``k + 1`` prefixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from replicant.kvstore import Command, CommandResult, Kind


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class HistoryEvent:
    op_id: int
    process: int
    invoke: float
    complete: Optional[float]
    command: Command
    result: Optional[CommandResult] = None

    def __post_init__(self):
        if self.complete is not None and self.complete < self.invoke:
            raise ValueError(f"op {self.op_id} completes before it is invoked")

    @property
    def pending(self) -> bool:
        return self.complete is None


@dataclass
class Verdict:
    linearizable: bool
    witness: dict = field(default_factory=dict)     # key -> [op_id, ...]
    conflict: Optional[dict] = None
    nodes: int = 0

    def __bool__(self):
        return self.linearizable


UNREAD = object()        # state after writing a value no completed read returns


def _step(state, ev: HistoryEvent, written):
    """Apply ``ev`` to one key's value; returns (ok, new_state)."""
    cmd, res = ev.command, ev.result
    if cmd.kind is Kind.PUT:
        return (res is None or res.ok), written
    if cmd.kind is Kind.DEL:
        if res is not None and res.ok != (state is not None):
            return False, state
        return True, None
    # get
    if state is None:
        return (not res.ok), state
    return (res.ok and res.value == state), state


def _check_key(key, events: list[HistoryEvent], max_nodes: int, budget: list):
    events = sorted(events, key=lambda e: (e.invoke, e.op_id))
    n = len(events)
    inv = [e.invoke for e in events]
    comp = [math.inf if e.complete is None else e.complete for e in events]
    read = {e.result.value for e in events
            if e.command.kind is Kind.GET and not e.pending and e.result.ok}
    written = [e.command.value if e.command.value in read else UNREAD for e in events]
    # pending ops with equal effects form one class; None marks completed ops
    cls = [None if not e.pending else (e.command.kind, written[i] if e.command.kind is Kind.PUT
                                       else None) for i, e in enumerate(events)]
    must = 0
    for i, e in enumerate(events):
        if not e.pending:
            must |= 1 << i
    seen = set()
    best = (0, [])          # deepest point reached, for the conflict report
    stack = [(0, None, [])]
    while stack:
        mask, state, order = stack.pop()
        if mask & must == must:
            return True, [events[i].op_id for i in order], None
        if (mask, state) in seen:
            continue
        seen.add((mask, state))
        budget[0] += 1
        if budget[0] > max_nodes:
            raise BudgetExceeded(f"search exceeded {max_nodes} nodes")
        horizon = min(comp[i] for i in range(n) if not mask >> i & 1)
        candidates = []
        tried = set()
        for i in range(n):
            if inv[i] > horizon:
                break
            if mask >> i & 1:
                continue
            if cls[i] is not None:
                if cls[i] in tried:
                    continue
                tried.add(cls[i])
            ok, nxt = _step(state, events[i], written[i])
            if ok:
                candidates.append((i, nxt))
        if len(order) > len(best[1]) or not best[1]:
            best = (mask, order)
        # push in reverse so the earliest-invoked candidate is explored first
        for i, nxt in reversed(candidates):
            stack.append((mask | 1 << i, nxt, order + [i]))
    mask, order = best
    remaining = [i for i in range(n) if not mask >> i & 1]
    horizon = min(comp[i] for i in remaining)
    blocked = [events[i].op_id for i in remaining if inv[i] <= horizon]
    return False, None, {
        "key": key,
        "linearized": [events[i].op_id for i in order],
        "blocked": blocked,
    }


def check_linearizable(history: list[HistoryEvent], max_ops: int = 200,
                       max_nodes: int = 2_000_000) -> Verdict:
    if len(history) > max_ops:
        raise BudgetExceeded(f"history has {len(history)} ops, budget is {max_ops}")
    by_key: dict[bytes, list[HistoryEvent]] = {}
    for ev in history:
        if ev.pending and ev.command.kind is Kind.GET:
            continue
        if not ev.pending and ev.result is None:
            raise ValueError(f"completed op {ev.op_id} has no result")
        by_key.setdefault(ev.command.key, []).append(ev)
    budget = [0]
    witness = {}
    for key in sorted(by_key):
        ok, order, conflict = _check_key(key, by_key[key], max_nodes, budget)
        if not ok:
            return Verdict(False, witness, conflict, budget[0])
        witness[key] = order
    return Verdict(True, witness, None, budget[0])
