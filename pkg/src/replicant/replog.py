"""The replicated log.

Instances live in an index-keyed dict rather than a dense list: trimming drops
prefixes and followers may hold gaps. The log tracks three frontiers:

``last_index``
    highest index ever appended or reserved;
``last_executed``
    highest index executed with no gaps below it;
``global_last_executed``
    highest index every peer is known to have executed (the trim point).

All operations are synchronous critical sections on one event loop, so they
are atomic with respect to each other; only :meth:`ReplicatedLog.execute_next`
suspends.
"""

from __future__ import annotations

import asyncio
import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

from replicant.kvstore import Command, CommandResult, KVStore

PEER_BITS = 8
MAX_PEERS = 1 << PEER_BITS


def make_ballot(round_: int, peer_id: int) -> int:
    if not 0 <= peer_id < MAX_PEERS:
        raise ValueError(f"peer id {peer_id} out of range")
    return (round_ << PEER_BITS) | peer_id


def leader_of(ballot: int) -> int:
    return ballot & (MAX_PEERS - 1)


def round_of(ballot: int) -> int:
    return ballot >> PEER_BITS


class SafetyViolation(AssertionError):
    """Two different commands were committed at one index."""


class MissingInstance(LookupError):
    pass


class TrimBeyondExecuted(ValueError):
    pass


class Stopped(Exception):
    """Raised by :meth:`ReplicatedLog.execute_next` after shutdown."""


class InstanceState(enum.IntEnum):
    IN_PROGRESS = 0
    COMMITTED = 1
    EXECUTED = 2


@dataclass(frozen=True)
class Instance:
    ballot: int
    index: int
    client_id: int
    command: Command
    state: InstanceState = InstanceState.IN_PROGRESS

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("instance index must be >= 1")

    @property
    def is_committed(self) -> bool:
        return self.state >= InstanceState.COMMITTED

    def restamped(self, ballot: int, state: InstanceState) -> "Instance":
        # much cheaper than dataclasses.replace on the hot path
        return Instance(ballot, self.index, self.client_id, self.command, state)

    def same_value(self, other: "Instance") -> bool:
        return self.command == other.command and self.client_id == other.client_id


class LogFrontiers(NamedTuple):
    last_index: int
    last_executed: int
    global_last_executed: int


class ReplicatedLog:
    """Producer-consumer log of :class:`Instance` with one executor.

    ``observer`` is called as ``observer(event, instance)`` with event
    ``"commit"`` or ``"execute"`` whenever an instance changes state; the
    simulator uses it to run its global oracles.
    """

    def __init__(self, observer: Optional[Callable[[str, Instance], None]] = None,
                 recheck_interval: float = 1.0):
        self._entries: dict[int, Instance] = {}
        self._last_index = 0
        self._last_executed = 0
        self._global_last_executed = 0
        self._observer = observer
        self._recheck = recheck_interval
        self._wake = asyncio.Event()
        self._stopped = False

    # -- producers -----------------------------------------------------------

    def advance_index(self) -> int:
        self._last_index += 1
        return self._last_index

    def append(self, inst: Instance) -> None:
        if inst.index <= self._global_last_executed:
            return
        existing = self._entries.get(inst.index)
        if existing is None:
            self._store(inst)
        elif existing.is_committed:
            if not existing.same_value(inst):
                raise SafetyViolation(
                    f"index {inst.index}: committed {existing.command!r}/{existing.client_id} "
                    f"contradicted by {inst.command!r}/{inst.client_id}")
        elif inst.ballot > existing.ballot:
            self._store(inst)
        # equal ballot: idempotent redelivery; lower ballot: stale, ignored
        self._last_index = max(self._last_index, inst.index)

    def _store(self, inst: Instance) -> None:
        self._entries[inst.index] = inst
        if inst.is_committed:
            self._notify("commit", inst)
            if inst.index == self._last_executed + 1:
                self._wake.set()

    def commit(self, index: int) -> None:
        inst = self._entries.get(index)
        if inst is None:
            if index <= self._global_last_executed:
                return
            raise MissingInstance(f"no instance at index {index}")
        self._mark_committed(inst)

    def _mark_committed(self, inst: Instance) -> None:
        if inst.is_committed:
            return
        inst = inst.restamped(inst.ballot, InstanceState.COMMITTED)
        self._entries[inst.index] = inst
        self._notify("commit", inst)
        if inst.index == self._last_executed + 1:
            self._wake.set()

    def commit_until(self, leader_last_executed: int, ballot: int) -> None:
        """Commit what the leader has executed, as far as this log can tell.

        Only instances stamped with exactly ``ballot`` are committed. An
        instance carrying an older ballot may hold a value that was never
        chosen, so it waits for the leader's replay to overwrite it.
        """
        for index in range(self._last_executed + 1, leader_last_executed + 1):
            inst = self._entries.get(index)
            if inst is not None and not inst.is_committed and inst.ballot == ballot:
                self._mark_committed(inst)

    def trim_until(self, gle: int) -> None:
        if gle <= self._global_last_executed:
            return
        if gle > self._last_executed:
            raise TrimBeyondExecuted(
                f"trim to {gle} but only executed through {self._last_executed}")
        for index in range(self._global_last_executed + 1, gle + 1):
            self._entries.pop(index, None)
        self._global_last_executed = gle

    # -- consumer ------------------------------------------------------------

    def next_executable(self) -> Optional[Instance]:
        inst = self._entries.get(self._last_executed + 1)
        if inst is not None and inst.state == InstanceState.COMMITTED:
            return inst
        return None

    def execute_one(self, store: KVStore) -> Optional[tuple[int, int, CommandResult]]:
        """Execute the next instance if it is committed; never blocks."""
        inst = self.next_executable()
        if inst is None:
            return None
        result = store.execute(inst.command)
        inst = inst.restamped(inst.ballot, InstanceState.EXECUTED)
        self._entries[inst.index] = inst
        self._last_executed = inst.index
        self._notify("execute", inst)
        return inst.client_id, inst.index, result

    async def execute_next(self, store: KVStore) -> tuple[int, int, CommandResult]:
        while True:
            if self._stopped:
                raise Stopped()
            done = self.execute_one(store)
            if done is not None:
                return done
            self._wake.clear()
            try:
                await asyncio.wait_for(self._wake.wait(), self._recheck)
            except asyncio.TimeoutError:
                pass

    def shutdown(self) -> None:
        self._stopped = True
        self._wake.set()

    # -- views ---------------------------------------------------------------

    def instances_snapshot(self) -> list[Instance]:
        return [self._entries[i] for i in sorted(self._entries)]

    def frontiers(self) -> LogFrontiers:
        return LogFrontiers(self._last_index, self._last_executed, self._global_last_executed)

    def get(self, index: int) -> Optional[Instance]:
        return self._entries.get(index)

    def __len__(self):
        return len(self._entries)

    def _notify(self, event: str, inst: Instance) -> None:
        if self._observer is not None:
            self._observer(event, inst)
