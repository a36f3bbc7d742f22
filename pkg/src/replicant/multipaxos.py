"""MultiPaxos engine: replicate, leader election, accept and commit phases.

The engine owns no threads of its own. It runs on whatever asyncio loop it is
started on and reads the time from that loop, which is what lets the
simulator drive it on a virtual clock. The transport is injected (see
:mod:`replicant.transport`).

Two background workers mirror the two long-running phases: the prepare worker
runs elections while this peer is a follower, and the commit worker sends
heartbeats carrying ``last_executed``/``global_last_executed`` while it leads.
"""

from __future__ import annotations

import asyncio
import enum
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

from replicant.kvstore import Command
from replicant.replog import (Instance, InstanceState, ReplicatedLog, SafetyViolation,
                              leader_of, make_ballot, round_of)
from replicant.transport import (OK, REJECT, Everyone, Majority, MsgType, PeerMessage,
                                 broadcast)

log = logging.getLogger(__name__)

# fills indexes that no prepare response knew about; client id 0 has no session
NOOP = Command.get(b"\x00")
NOOP_CLIENT = 0


@dataclass
class PeerConfig:
    my_id: int
    peers: list
    commit_interval: float = 0.150
    election_timeout_base: Optional[float] = None
    election_jitter_max: Optional[float] = None

    def __post_init__(self):
        if not self.peers:
            raise ValueError("need at least one peer")
        if not 0 <= self.my_id < len(self.peers):
            raise ValueError(f"my_id {self.my_id} not in peer list")
        if self.commit_interval <= 0:
            raise ValueError("commit_interval must be positive")
        if self.election_timeout_base is None:
            self.election_timeout_base = 3 * self.commit_interval
        if self.election_jitter_max is None:
            self.election_jitter_max = self.commit_interval

    @property
    def n(self) -> int:
        return len(self.peers)

    @property
    def majority(self) -> int:
        return self.n // 2 + 1


class Role(enum.Enum):
    FOLLOWER = "follower"
    LEADER = "leader"


class Outcome(enum.Enum):
    OK = "ok"
    RETRY = "retry"
    NOT_LEADER = "not_leader"


class ReplicateOutcome(NamedTuple):
    outcome: Outcome
    leader_hint: Optional[int] = None
    index: Optional[int] = None         # set on OK: where the command was chosen


REPLICATE_RETRY = ReplicateOutcome(Outcome.RETRY)


class MultiPaxos:
    def __init__(self, log_: ReplicatedLog, config: PeerConfig, transport,
                 rng: Optional[random.Random] = None,
                 on_leader: Optional[Callable[[int], None]] = None):
        self._log = log_
        self.config = config
        self.my_id = config.my_id
        self._transport = transport
        self._rng = rng or random.Random()
        self._on_leader = on_leader
        self._ballot = 0
        self._max_seen = 0
        # ballot at which this peer finished prepare; leadership needs it to equal _ballot
        self._ready_ballot = -1
        self._last_heartbeat = 0.0
        self._others = [p for p in range(config.n) if p != self.my_id]
        self._leading = asyncio.Event()
        self._following = asyncio.Event()
        self._following.set()
        self._tasks: list[asyncio.Task] = []
        self._background: set[asyncio.Task] = set()
        self._accept_queue: list[tuple[Instance, asyncio.Future]] = []

    # -- role ----------------------------------------------------------------

    @property
    def ballot(self) -> int:
        return self._ballot

    def is_leader(self) -> bool:
        return self._ready_ballot == self._ballot and leader_of(self._ballot) == self.my_id

    def role(self) -> Role:
        return Role.LEADER if self.is_leader() else Role.FOLLOWER

    def leader_hint(self) -> Optional[int]:
        return None if self._ballot == 0 else leader_of(self._ballot)

    def _now(self) -> float:
        return asyncio.get_running_loop().time()

    def _observe(self, ballot: int) -> None:
        if ballot > self._max_seen:
            self._max_seen = ballot

    def _adopt(self, ballot: int) -> None:
        """Move to a higher ballot, stepping down if this peer was leading."""
        self._observe(ballot)
        if ballot <= self._ballot:
            return
        was_leader = self.is_leader()
        self._ballot = ballot
        if was_leader:
            log.info("peer %d steps down; ballot %d (leader %d)", self.my_id, ballot,
                     leader_of(ballot))
            self._leading.clear()
            self._following.set()

    def next_ballot(self) -> int:
        self._max_seen = max(self._max_seen, self._ballot)
        b = make_ballot(round_of(self._max_seen) + 1, self.my_id)
        self._max_seen = b
        return b

    # -- handlers (peer side) --------------------------------------------------

    def handle(self, msg: PeerMessage) -> PeerMessage:
        if msg.type is MsgType.PREPARE:
            return self.on_prepare(msg)
        if msg.type is MsgType.ACCEPT:
            return self.on_accept(msg)
        if msg.type is MsgType.COMMIT:
            return self.on_commit(msg)
        raise ValueError(f"not a request: {msg.type}")

    def on_prepare(self, msg: PeerMessage) -> PeerMessage:
        if msg.ballot > self._ballot:
            self._adopt(msg.ballot)
            self._last_heartbeat = self._now()
            return msg.response(sender=self.my_id, status=OK, ballot=self._ballot,
                                instances=tuple(self._log.instances_snapshot()))
        self._observe(msg.ballot)
        return msg.response(sender=self.my_id, status=REJECT, ballot=self._ballot)

    def on_accept(self, msg: PeerMessage) -> PeerMessage:
        if msg.ballot >= self._ballot:
            self._adopt(msg.ballot)
            if msg.instances:
                for inst in msg.instances:
                    if inst.ballot != msg.ballot or inst.state is not InstanceState.IN_PROGRESS:
                        inst = inst.restamped(msg.ballot, InstanceState.IN_PROGRESS)
                    self._log.append(inst)
            else:
                self._log.append(msg.instance)
            return msg.response(sender=self.my_id, status=OK, ballot=self._ballot)
        return msg.response(sender=self.my_id, status=REJECT, ballot=self._ballot)

    def on_commit(self, msg: PeerMessage) -> PeerMessage:
        if msg.ballot >= self._ballot:
            self._adopt(msg.ballot)
            self._last_heartbeat = self._now()
            self._log.commit_until(msg.last_executed, msg.ballot)
            self._log.trim_until(msg.global_last_executed)
            return msg.response(sender=self.my_id, status=OK, ballot=self._ballot,
                                last_executed=self._log.frontiers().last_executed)
        return msg.response(sender=self.my_id, status=REJECT, ballot=self._ballot)

    # -- common path -----------------------------------------------------------

    async def replicate(self, cmd: Command, client_id: int) -> ReplicateOutcome:
        if not self.is_leader():
            hint = self.leader_hint()
            if hint is None or hint == self.my_id:
                return REPLICATE_RETRY
            return ReplicateOutcome(Outcome.NOT_LEADER, hint)
        b = self._ballot
        inst = Instance(b, self._log.advance_index(), client_id, cmd)
        self._log.append(inst)
        acc = await self._accept(inst)
        if acc.won:
            self._commit_local(inst)
            return ReplicateOutcome(Outcome.OK, index=inst.index)
        if acc.higher is not None:
            self._adopt(acc.higher)
            return ReplicateOutcome(Outcome.NOT_LEADER, leader_of(acc.higher))
        # no quorum before the deadline; keep pushing this index while leading
        self._spawn(self._accept_until_decided(inst))
        return REPLICATE_RETRY

    def _accept(self, inst: Instance) -> "asyncio.Future[Majority]":
        """Queue ``inst`` for the next accept round.

        Instances proposed during one event-loop pass share a single accept
        message per peer; each waiter gets the shared quorum outcome.
        """
        fut = asyncio.get_running_loop().create_future()
        self._accept_queue.append((inst, fut))
        if len(self._accept_queue) == 1:
            asyncio.get_running_loop().call_soon(self._flush_accepts)
        return fut

    def _flush_accepts(self) -> None:
        queue, self._accept_queue = self._accept_queue, []
        by_ballot: dict[int, list] = {}
        for inst, fut in queue:
            by_ballot.setdefault(inst.ballot, []).append((inst, fut))
        for ballot, items in by_ballot.items():
            self._spawn(self._accept_round(ballot, items))

    async def _accept_round(self, ballot: int, items: list) -> None:
        transport = self._transport
        insts = tuple(inst for inst, _ in items)
        # tags only need to be unique per connection, so every peer gets the
        # same message and the transport can encode it once
        if len(insts) == 1:
            inst = insts[0]
            msg = PeerMessage(MsgType.ACCEPT, transport.next_tag(), self.my_id, ballot=ballot,
                              index=inst.index, client_id=inst.client_id, command=inst.command)
        else:
            msg = PeerMessage(MsgType.ACCEPT, transport.next_tag(), self.my_id, ballot=ballot,
                              instances=insts)

        def build(peer):
            return msg

        acc = Majority(self.config.n, ballot)
        try:
            await broadcast(transport, self._others, build, self.config.commit_interval,
                            acc, local=(self.my_id, _OK_VOTE))
        finally:
            for _, fut in items:
                if not fut.done():
                    fut.set_result(acc)

    def _commit_local(self, inst: Instance) -> None:
        current = self._log.get(inst.index)
        if current is None:
            return
        if not current.same_value(inst):
            # chosen at this ballot, so any later proposal at the index carries it too
            raise SafetyViolation(f"index {inst.index} chosen as {inst.command!r} "
                                  f"but log holds {current.command!r}")
        self._log.commit(inst.index)

    async def _accept_until_decided(self, inst: Instance) -> bool:
        while self.is_leader() and self._ballot == inst.ballot:
            acc = await self._accept(inst)
            if acc.won:
                self._commit_local(inst)
                return True
            if acc.higher is not None:
                self._adopt(acc.higher)
                return False
        return False

    # -- leader election -------------------------------------------------------

    async def run_prepare_phase(self, b: int):
        """Returns ``(i_max, merged)`` on winning a majority, else ``None``."""
        transport = self._transport
        me = self.on_prepare(PeerMessage(MsgType.PREPARE, 0, self.my_id, ballot=b))
        if me.status != OK:
            return None

        def build(peer):
            return PeerMessage(MsgType.PREPARE, transport.next_tag(), self.my_id, ballot=b)

        acc = Majority(self.config.n, b)
        await broadcast(transport, self._others, build, self.config.commit_interval, acc,
                        local=(self.my_id, me))
        if acc.higher is not None:
            self._adopt(acc.higher)
            return None
        if not acc.won:
            return None
        logs = [resp.instances for resp in acc.oks]
        i_max = max([i.index for insts in logs for i in insts] or [0])
        i_max = max(i_max, self._log.frontiers().last_index)
        return i_max, merge_logs(logs, b)

    def become_leader(self, b: int, i_max: int, merged: dict) -> bool:
        if self._ballot != b:
            return False
        gle = self._log.frontiers().global_last_executed
        for index in range(gle + 1, i_max + 1):
            if index not in merged:
                merged[index] = Instance(b, index, NOOP_CLIENT, NOOP)
        for index in sorted(merged):
            if index > gle:
                self._log.append(merged[index])
        self._ready_ballot = b
        self._following.clear()
        self._leading.set()
        log.info("peer %d leads with ballot %d (i_max=%d)", self.my_id, b, i_max)
        if self._on_leader is not None:
            self._on_leader(b)
        return True

    async def replay(self, b: int, merged: dict) -> None:
        gle = self._log.frontiers().global_last_executed
        pending = [self._accept_until_decided(replace(inst, state=InstanceState.IN_PROGRESS))
                   for index, inst in sorted(merged.items()) if index > gle]
        if pending:
            await asyncio.gather(*pending)

    async def prepare_worker_loop(self) -> None:
        cfg = self.config
        while True:
            if self.is_leader():
                await self._following.wait()
                continue
            start = self._now()
            await asyncio.sleep(cfg.election_timeout_base
                                + self._rng.uniform(0, cfg.election_jitter_max))
            if self.is_leader() or self._last_heartbeat > start:
                continue
            b = self.next_ballot()
            result = await self.run_prepare_phase(b)
            if result is None:
                continue
            i_max, merged = result
            if self.become_leader(b, i_max, merged):
                self._spawn(self.replay(b, merged))

    # -- commit phase ----------------------------------------------------------

    async def run_commit_phase(self, b: int, prev_gle: int) -> int:
        transport = self._transport
        last_executed = self._log.frontiers().last_executed

        def build(peer):
            return PeerMessage(MsgType.COMMIT, transport.next_tag(), self.my_id, ballot=b,
                               last_executed=last_executed, global_last_executed=prev_gle)

        acc = Everyone(self.config.n, b)
        me = PeerMessage(MsgType.COMMIT_RESP, 0, self.my_id, status=OK, ballot=b,
                         last_executed=last_executed)
        await broadcast(transport, self._others, build, self.config.commit_interval, acc,
                        local=(self.my_id, me))
        if acc.higher is not None:
            self._adopt(acc.higher)
            return prev_gle
        if not acc.won:
            return prev_gle
        return max(prev_gle, min(resp.last_executed for resp in acc.oks))

    async def commit_worker_loop(self) -> None:
        interval = self.config.commit_interval
        while True:
            await self._leading.wait()
            b = self._ballot
            gle = self._log.frontiers().global_last_executed
            tick = self._now()
            while self.is_leader() and self._ballot == b:
                gle = await self.run_commit_phase(b, gle)
                if not (self.is_leader() and self._ballot == b):
                    break
                self._log.trim_until(gle)
                tick += interval
                await asyncio.sleep(max(0.0, tick - self._now()))

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        self._last_heartbeat = self._now()
        loop = asyncio.get_running_loop()
        self._tasks = [loop.create_task(self.prepare_worker_loop()),
                       loop.create_task(self.commit_worker_loop())]

    def _spawn(self, coro) -> None:
        task = asyncio.get_running_loop().create_task(coro)
        self._background.add(task)
        task.add_done_callback(self._background.discard)

    def stop(self) -> None:
        for task in self._tasks + list(self._background):
            task.cancel()
        self._tasks = []

    @property
    def tasks(self) -> list:
        return self._tasks + list(self._background)


_OK_VOTE = PeerMessage(MsgType.ACCEPT_RESP, 0, -1, status=OK)


def merge_logs(responses, ballot: int) -> dict:
    """Merge prepare responses into one log re-stamped with ``ballot``.

    At each index a committed (or executed) instance wins, and all such
    instances must agree; otherwise the highest-ballot instance wins. The
    merged instances are ``IN_PROGRESS`` except where a commit was seen.
    """
    best: dict[int, Instance] = {}
    committed: dict[int, Instance] = {}
    for insts in responses:
        for inst in insts:
            i = inst.index
            if inst.is_committed:
                seen = committed.get(i)
                if seen is None:
                    committed[i] = inst
                elif not seen.same_value(inst):
                    raise SafetyViolation(f"index {i}: committed values disagree")
            cur = best.get(i)
            if cur is None or inst.ballot > cur.ballot:
                best[i] = inst
    merged = {}
    for i, inst in best.items():
        if i in committed:
            merged[i] = replace(committed[i], ballot=ballot, state=InstanceState.COMMITTED)
        else:
            merged[i] = replace(inst, ballot=ballot, state=InstanceState.IN_PROGRESS)
    return merged
