"""Deterministic simulation of a Replicant cluster.

The production :class:`~replicant.server.Replica` (log, store, engine,
executor) runs unchanged on a :class:`VirtualClockLoop`; only the transport
and the clock are swapped. Simulated clients issue random get/put/del
operations and their history is checked for linearizability at the end.

Oracles run after every loop iteration: agreement (incrementally, on every
commit and execution), trim safety, single leader per ballot and, for fair
scenarios, election liveness. The run halts at the first violation.
"""

from __future__ import annotations

import asyncio
import logging
import random
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Optional

from replicant.kvstore import Command, CommandResult
from replicant.multipaxos import Outcome, PeerConfig
from replicant.replog import leader_of
from replicant.server import Replica
from replicant.sim.linearizability import (BudgetExceeded, HistoryEvent,
                                           check_linearizable)
from replicant.sim.loop import VirtualClockLoop
from replicant.sim.network import Crash, Partition, SimNetwork
from replicant.sim.oracles import (IncrementalAgreement, PeerView, check_agreement,
                                   check_prefixes, check_trim_safety)

log = logging.getLogger(__name__)

LEADER = -1     # in a Crash or Partition: whichever peer leads when the fault starts
FOLLOWER = -2   # the lowest-numbered peer that is not leading when the fault starts


@dataclass
class SimParams:
    seed: int = 0
    n_peers: int = 3
    drop_prob: float = 0.0
    delay_min: float = 0.001            # seconds of virtual time
    delay_max: float = 0.010
    partitions: list = field(default_factory=list)
    crashes: list = field(default_factory=list)
    horizon: float = 10.0
    n_clients: int = 3
    max_ops: int = 100
    n_keys: int = 3
    think_min: float = 0.01
    think_max: float = 0.10
    op_timeout: float = 2.0
    commit_interval: float = 0.150
    election_timeout_base: Optional[float] = None
    election_jitter_max: Optional[float] = None
    probe_interval: Optional[float] = None
    check_history: bool = True
    fair: bool = True
    liveness_factor: float = 10.0

    def __post_init__(self):
        if self.n_peers < 1:
            raise ValueError("need at least one peer")
        self.partitions = [p if isinstance(p, Partition) else Partition(**p)
                           for p in self.partitions]
        self.partitions = [Partition(p.start, p.end, tuple(p.side)) for p in self.partitions]
        self.crashes = [c if isinstance(c, Crash) else Crash(**c) for c in self.crashes]

    def peer_config(self, peer: int) -> PeerConfig:
        return PeerConfig(peer, list(range(self.n_peers)), self.commit_interval,
                          self.election_timeout_base, self.election_jitter_max)


@dataclass
class SimReport:
    seed: int
    n_peers: int
    end_time: float = 0.0
    leaders: list = field(default_factory=list)          # {"time","ballot","peer"}
    ballot_conflicts: list = field(default_factory=list)
    agreement_violations: list = field(default_factory=list)
    trim_violations: list = field(default_factory=list)
    prefix_divergences: list = field(default_factory=list)
    liveness_violations: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    max_leaderless: float = 0.0
    ops: dict = field(default_factory=dict)
    linearizable: Optional[bool] = None
    witness: Optional[dict] = None
    lin_conflict: Optional[dict] = None
    timeline: list = field(default_factory=list)
    final: list = field(default_factory=list)
    messages: int = 0
    trace_digest: str = ""
    history: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return not (self.ballot_conflicts or self.agreement_violations or self.trim_violations
                    or self.prefix_divergences or self.liveness_violations or self.errors
                    or self.linearizable is False)

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("history")
        if self.witness is not None:
            out["witness"] = {k.decode("latin-1"): v for k, v in self.witness.items()}
        if self.lin_conflict is not None:
            out["lin_conflict"] = dict(self.lin_conflict,
                                       key=self.lin_conflict["key"].decode("latin-1"))
        out["ok"] = self.ok
        return out


class Simulation:
    def __init__(self, params: SimParams, loop: VirtualClockLoop):
        self.p = params
        self.loop = loop
        self.rng = random.Random(params.seed)
        self.client_rng = random.Random(params.seed * 7919 + 1)
        self.report = SimReport(params.seed, params.n_peers)
        self.net = SimNetwork(loop, params.n_peers, self.rng, params.drop_prob,
                              params.delay_min, params.delay_max)
        self.agreement = IncrementalAgreement()
        self.executed = [[] for _ in range(params.n_peers)]
        self.replicas = []
        for i in range(params.n_peers):
            r = Replica(params.peer_config(i), self.net.transport(i),
                        rng=random.Random(params.seed * 1000 + i),
                        observer=partial(self._observe, i),
                        on_leader=partial(self._on_leader, i))
            self.net.handlers[i] = r.engine.handle
            self.replicas.append(r)
        self.halt = asyncio.Event()
        self.history: list[HistoryEvent] = []
        self.ops_issued = 0
        self._ballot_owner: dict[int, int] = {}
        self._leaderless_since: Optional[float] = 0.0
        self.bound = params.liveness_factor * params.peer_config(0).election_timeout_base

    # -- oracles -----------------------------------------------------------------

    def _fail(self, kind: str, item) -> None:
        getattr(self.report, kind).append(item)
        self.halt.set()

    def _observe(self, peer: int, event: str, inst) -> None:
        before = len(self.agreement.violations)
        self.agreement.observe(peer, inst)
        if len(self.agreement.violations) > before:
            self._fail("agreement_violations", self.agreement.violations[-1])
        if event == "execute":
            self.executed[peer].append((inst.index, inst.command, inst.client_id))

    def _on_leader(self, peer: int, ballot: int) -> None:
        self.report.leaders.append({"time": self.loop.time(), "ballot": ballot, "peer": peer})
        owner = self._ballot_owner.setdefault(ballot, peer)
        if owner != peer or leader_of(ballot) != peer:
            self._fail("ballot_conflicts", {"ballot": ballot, "peers": [owner, peer]})

    def _effective_leader(self) -> Optional[int]:
        now = self.loop.time()
        for peer, r in enumerate(self.replicas):
            eng = r.engine
            if not eng.is_leader() or self.net.crashed(peer, now):
                continue
            support = sum(1 for q, other in enumerate(self.replicas)
                          if q == peer or (other.engine.ballot == eng.ballot
                                           and self.net.linked(peer, q, now)))
            if support >= self.p.n_peers // 2 + 1:
                return peer
        return None

    def _step(self) -> None:
        now = self.loop.time()
        fronts = [r.log.frontiers() for r in self.replicas]
        floor = min(f.last_executed for f in fronts)
        for peer, f in enumerate(fronts):
            if f.global_last_executed > floor:
                self._fail("trim_violations", {"time": now, "peer": peer,
                                               "global_last_executed": f.global_last_executed,
                                               "min_last_executed": floor})
        if not self.p.fair:
            return
        if self._effective_leader() is None:
            if self._leaderless_since is None:
                self._leaderless_since = now
            elif now - self._leaderless_since > self.bound:
                self._fail("liveness_violations", {"since": self._leaderless_since, "time": now,
                                                   "bound": self.bound})
                self._leaderless_since = now
        elif self._leaderless_since is not None:
            self.report.max_leaderless = max(self.report.max_leaderless,
                                             now - self._leaderless_since)
            self._leaderless_since = None

    def _on_error(self, loop, context) -> None:
        exc = context.get("exception")
        self._fail("errors", {"time": loop.time(), "message": context.get("message"),
                              "exception": repr(exc)})

    # -- faults ------------------------------------------------------------------

    def _current_leader(self) -> int:
        for peer, r in enumerate(self.replicas):
            if r.engine.is_leader() and not self.net.crashed(peer):
                return peer
        return self.rng.randrange(self.p.n_peers)

    def _current_follower(self) -> int:
        leader = self._current_leader()
        return next(p for p in range(self.p.n_peers) if p != leader)

    def _resolve(self, peer: int) -> int:
        if peer == LEADER:
            return self._current_leader()
        if peer == FOLLOWER:
            return self._current_follower()
        return peer

    def _schedule_faults(self) -> None:
        for c in self.p.crashes:
            if c.peer in (LEADER, FOLLOWER):
                self.loop.call_at(c.start, lambda c=c: self.net.crashes.append(
                    Crash(self._resolve(c.peer), c.start, c.end)))
            else:
                self.net.crashes.append(c)
        for part in self.p.partitions:
            if LEADER in part.side or FOLLOWER in part.side:
                def resolve(part=part):
                    side = tuple(self._resolve(s) for s in part.side)
                    self.net.partitions.append(Partition(part.start, part.end, side))
                self.loop.call_at(part.start, resolve)
            else:
                self.net.partitions.append(part)

    # -- clients -----------------------------------------------------------------

    def _random_command(self, op_id: int) -> Command:
        rng = self.client_rng
        key = f"k{rng.randrange(self.p.n_keys)}".encode()
        r = rng.random()
        if r < 0.4:
            return Command.get(key)
        if r < 0.9:
            return Command.put(key, f"v{op_id}".encode())
        return Command.delete(key)

    async def _client(self, proc: int) -> None:
        p, rng = self.p, self.client_rng
        guess = rng.randrange(p.n_peers)
        while not self.halt.is_set() and self.ops_issued < p.max_ops:
            await asyncio.sleep(rng.uniform(p.think_min, p.think_max))
            if self.loop.time() + p.op_timeout > p.horizon:
                return
            op_id = self.ops_issued
            self.ops_issued += 1
            cmd = self._random_command(op_id)
            invoke = self.loop.time()
            status, result, guess = await self._submit(cmd, guess)
            if status == "ok":
                self.history.append(HistoryEvent(op_id, proc, invoke, self.loop.time(),
                                                 cmd, result))
            elif status == "maybe":
                self.history.append(HistoryEvent(op_id, proc, invoke, None, cmd))
                # the op may still take effect, so this process never completes it
                proc += 1000

    async def _submit(self, cmd: Command, guess: int):
        deadline = self.loop.time() + self.p.op_timeout
        while True:
            fut = self.loop.create_future()
            self.loop.call_later(self.net.delay(), self._client_arrive, guess, cmd, fut)
            try:
                kind, payload = await asyncio.wait_for(fut, deadline - self.loop.time())
            except asyncio.TimeoutError:
                return "maybe", None, self.client_rng.randrange(self.p.n_peers)
            if kind == "ok":
                return "ok", payload, guess
            if kind == "maybe":
                return "maybe", None, payload if payload is not None else guess
            # definitely not proposed: follow the hint and try again
            guess = payload if payload is not None else self.client_rng.randrange(self.p.n_peers)
            await asyncio.sleep(0.05)
            if self.loop.time() >= deadline:
                return "failed", None, guess

    def _client_arrive(self, peer: int, cmd: Command, fut: asyncio.Future) -> None:
        if self.net.crashed(peer):
            return
        was_leader = self.replicas[peer].engine.is_leader()
        self.loop.create_task(self._serve(peer, cmd, fut, was_leader))

    async def _serve(self, peer: int, cmd: Command, fut, was_leader: bool) -> None:
        r = self.replicas[peer]
        done = self.loop.create_future()
        cid = r.open_session(lambda index, res: done.done() or done.set_result(res))
        try:
            out = await r.engine.replicate(cmd, cid)
            if out.outcome is Outcome.OK:
                try:
                    res = await asyncio.wait_for(done, self.p.op_timeout)
                except asyncio.TimeoutError:
                    return
                reply = ("ok", res)
            else:
                reply = ("maybe" if was_leader else "definite", out.leader_hint)
        finally:
            r.close_session(cid)

        def send():
            if not fut.done() and not self.net.crashed(peer):
                fut.set_result(reply)
        self.loop.call_later(self.net.delay(), send)

    # -- driver ------------------------------------------------------------------

    async def _probe(self) -> None:
        while True:
            self.report.timeline.append(self._snapshot())
            await asyncio.sleep(self.p.probe_interval)

    def _snapshot(self) -> dict:
        peers = []
        for r in self.replicas:
            f = r.log.frontiers()
            peers.append({"last_index": f.last_index, "last_executed": f.last_executed,
                          "global_last_executed": f.global_last_executed,
                          "log_size": len(r.log), "ballot": r.engine.ballot,
                          "leader": r.engine.is_leader()})
        return {"time": self.loop.time(), "peers": peers}

    def views(self) -> list[PeerView]:
        out = []
        for i, r in enumerate(self.replicas):
            f = r.log.frontiers()
            out.append(PeerView(i, {inst.index: inst for inst in r.log.instances_snapshot()},
                                f.last_executed, f.global_last_executed, list(self.executed[i])))
        return out

    async def main(self) -> SimReport:
        self.loop.set_exception_handler(self._on_error)
        self._schedule_faults()
        for r in self.replicas:
            r.start()
        self.loop.step_hook = self._step
        tasks = [self.loop.create_task(self._client(i)) for i in range(self.p.n_clients)]
        if self.p.probe_interval:
            tasks.append(self.loop.create_task(self._probe()))
        try:
            await asyncio.wait_for(self.halt.wait(), self.p.horizon)
        except asyncio.TimeoutError:
            pass
        self.loop.step_hook = None
        self._finish()
        me = asyncio.current_task()
        for r in self.replicas:
            r.stop()
        rest = [t for t in asyncio.all_tasks(self.loop) if t is not me]
        for t in rest:
            t.cancel()
        await asyncio.gather(*rest, return_exceptions=True)
        return self.report

    def _finish(self) -> None:
        rep = self.report
        rep.end_time = self.loop.time()
        if (self.p.fair and self._leaderless_since is not None
                and rep.end_time - self._leaderless_since > self.bound):
            rep.liveness_violations.append({"since": self._leaderless_since,
                                            "time": rep.end_time, "bound": self.bound})
        views = self.views()
        for v in check_agreement(views):
            rep.agreement_violations.append(v)
        rep.trim_violations.extend(check_trim_safety(views))
        rep.prefix_divergences.extend(check_prefixes(views))
        rep.final = self._snapshot()["peers"]
        rep.messages = self.net.delivered
        rep.trace_digest = self.net.digest()
        completed = sum(1 for h in self.history if not h.pending)
        rep.ops = {"issued": self.ops_issued, "completed": completed,
                   "pending": len(self.history) - completed,
                   "failed": self.ops_issued - len(self.history)}
        rep.history = sorted(self.history, key=lambda h: h.op_id)
        if self.p.check_history and not rep.errors:
            try:
                verdict = check_linearizable(rep.history, max_ops=max(200, self.p.max_ops))
            except BudgetExceeded as exc:
                rep.errors.append({"message": "linearizability budget", "exception": repr(exc)})
            else:
                rep.linearizable = verdict.linearizable
                rep.witness = verdict.witness if verdict.linearizable else None
                rep.lin_conflict = verdict.conflict


def run(params: SimParams) -> SimReport:
    loop = VirtualClockLoop()
    try:
        return loop.run_until_complete(Simulation(params, loop).main())
    finally:
        loop.close()
