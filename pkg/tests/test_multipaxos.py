import asyncio
import itertools
import random

import pytest

from replicant.kvstore import Command, KVStore
from replicant.multipaxos import (NOOP, MultiPaxos, Outcome, PeerConfig, Role, merge_logs)
from replicant.replog import (Instance, InstanceState, ReplicatedLog, SafetyViolation,
                              make_ballot)
from replicant.transport import DISCONNECTED, OK, REJECT, MsgType, PeerMessage

A = Command.put(b"k", b"a")
B = Command.put(b"k", b"b")
C = Command.delete(b"k")


class DirectTransport:
    """Delivers calls straight to the target engine's handler on the next loop pass."""

    def __init__(self, cluster, me):
        self.cluster, self.me = cluster, me
        self._tags = itertools.count(1)

    def next_tag(self):
        return next(self._tags)

    def call(self, peer, msg):
        loop = asyncio.get_running_loop()
        fut = loop.create_future()
        target = self.cluster.engines[peer]
        if peer in self.cluster.down or self.me in self.cluster.down:
            fut.set_result(DISCONNECTED)
        else:
            loop.call_soon(lambda: fut.done() or fut.set_result(target.handle(msg)))
        return fut


class Cluster:
    def __init__(self, n=3, interval=0.02):
        self.down = set()
        self.logs = [ReplicatedLog() for _ in range(n)]
        self.engines = [MultiPaxos(self.logs[i], PeerConfig(i, list(range(n)), interval),
                                   DirectTransport(self, i), rng=random.Random(i))
                        for i in range(n)]

    async def elect(self, i):
        eng = self.engines[i]
        b = eng.next_ballot()
        result = await eng.run_prepare_phase(b)
        assert result is not None
        assert eng.become_leader(b, *result)
        return b


def engine(my_id=0, n=3):
    return MultiPaxos(ReplicatedLog(), PeerConfig(my_id, list(range(n))), None)


def test_peer_config_defaults_and_validation():
    cfg = PeerConfig(1, [0, 1, 2], 0.1)
    assert cfg.election_timeout_base == pytest.approx(0.3)
    assert cfg.election_jitter_max == pytest.approx(0.1)
    assert cfg.majority == 2 and PeerConfig(0, list(range(5))).majority == 3
    with pytest.raises(ValueError):
        PeerConfig(3, [0, 1, 2])
    with pytest.raises(ValueError):
        PeerConfig(0, [0], 0)


def test_next_ballot():
    e = engine(my_id=1)

    async def main():
        e.on_prepare(PeerMessage(MsgType.PREPARE, 1, 2, ballot=make_ballot(2, 2)))
        return e.next_ballot()
    assert asyncio.run(main()) == 769
    assert engine(my_id=0).next_ballot() == 256


def test_next_ballot_strictly_increases():
    e = engine(my_id=2)
    seen = [e.next_ballot() for _ in range(5)]
    assert seen == sorted(set(seen)) and all(b % 256 == 2 for b in seen)


def test_on_prepare_needs_a_strictly_higher_ballot():
    async def main():
        e = engine(my_id=0)
        first = e.on_prepare(PeerMessage(MsgType.PREPARE, 1, 1, ballot=257))
        again = e.on_prepare(PeerMessage(MsgType.PREPARE, 2, 1, ballot=257))
        return first, again, e
    first, again, e = asyncio.run(main())
    assert first.status == OK and first.instances == ()
    assert again.status == REJECT and again.ballot == 257
    assert e.role() is Role.FOLLOWER and e.leader_hint() == 1


def test_on_accept():
    async def main():
        e = engine(my_id=0)
        e.on_prepare(PeerMessage(MsgType.PREPARE, 1, 1, ballot=513))
        low = e.on_accept(PeerMessage(MsgType.ACCEPT, 2, 1, ballot=257, index=1,
                                      client_id=3, command=A))
        ok = e.on_accept(PeerMessage(MsgType.ACCEPT, 3, 1, ballot=513, index=1,
                                     client_id=3, command=A))
        return low, ok, e
    low, ok, e = asyncio.run(main())
    assert low.status == REJECT and low.ballot == 513
    assert ok.status == OK
    assert e._log.get(1) == Instance(513, 1, 3, A)


def test_on_accept_with_a_batch():
    async def main():
        e = engine(my_id=0)
        insts = (Instance(257, 1, 5, A), Instance(257, 2, 6, B))
        resp = e.on_accept(PeerMessage(MsgType.ACCEPT, 1, 1, ballot=257, instances=insts))
        return resp, e
    resp, e = asyncio.run(main())
    assert resp.status == OK
    assert [(i.index, i.command, i.state) for i in e._log.instances_snapshot()] == [
        (1, A, InstanceState.IN_PROGRESS), (2, B, InstanceState.IN_PROGRESS)]


def test_on_commit_commits_and_trims():
    async def main():
        e = engine(my_id=0)
        for i in (1, 2, 3):
            e.on_accept(PeerMessage(MsgType.ACCEPT, i, 1, ballot=257, index=i,
                                    client_id=1, command=A))
        r = e.on_commit(PeerMessage(MsgType.COMMIT, 9, 1, ballot=257, last_executed=2,
                                    global_last_executed=0))
        store = KVStore()
        while e._log.execute_one(store):
            pass
        r2 = e.on_commit(PeerMessage(MsgType.COMMIT, 10, 1, ballot=257, last_executed=2,
                                     global_last_executed=2))
        stale = e.on_commit(PeerMessage(MsgType.COMMIT, 11, 2, ballot=2, last_executed=3,
                                        global_last_executed=3))
        return r, r2, stale, e
    r, r2, stale, e = asyncio.run(main())
    assert r.status == OK and r.last_executed == 0
    assert r2.last_executed == 2
    assert e._log.frontiers() == (3, 2, 2)
    assert stale.status == REJECT
    assert not e._log.get(3).is_committed


def test_merge_logs_cases():
    b = 1025
    committed = Instance(257, 1, 1, A, InstanceState.COMMITTED)
    merged = merge_logs([[Instance(513, 1, 2, B)], [committed]], b)
    assert merged[1].command == A and merged[1].state is InstanceState.COMMITTED
    merged = merge_logs([[Instance(257, 2, 1, A)], [Instance(513, 2, 2, B)]], b)
    assert merged[2] == Instance(b, 2, 2, B)
    merged = merge_logs([[Instance(257, 1, 1, A, InstanceState.EXECUTED)], []], b)
    assert merged[1].state is InstanceState.COMMITTED and merged[1].ballot == b
    with pytest.raises(SafetyViolation):
        merge_logs([[committed], [Instance(513, 1, 2, B, InstanceState.COMMITTED)]], b)
    assert merge_logs([[], []], b) == {}


def test_election_fills_holes_with_noops():
    async def main():
        cl = Cluster()
        cl.engines[1].on_accept(PeerMessage(MsgType.ACCEPT, 1, 2, ballot=2, index=3,
                                            client_id=1, command=C))
        await cl.elect(0)
        return cl
    cl = asyncio.run(main())
    log0 = cl.logs[0]
    assert cl.engines[0].is_leader()
    assert log0.get(1).command == NOOP and log0.get(2).command == NOOP
    assert log0.get(3).command == C
    assert cl.logs[0].advance_index() == 4


def test_replicate_on_a_follower():
    async def main():
        cl = Cluster()
        first = await cl.engines[1].replicate(A, 1)
        await cl.elect(0)
        second = await cl.engines[1].replicate(A, 1)
        return first, second
    first, second = asyncio.run(main())
    assert first.outcome is Outcome.RETRY
    assert second.outcome is Outcome.NOT_LEADER and second.leader_hint == 0


def test_replicate_batches_concurrent_proposals():
    async def main():
        cl = Cluster()
        await cl.elect(0)
        sent = []
        tr = cl.engines[0]._transport
        orig = tr.call
        tr.call = lambda peer, msg: (sent.append(msg), orig(peer, msg))[1]
        outs = await asyncio.gather(*(cl.engines[0].replicate(Command.put(b"k%d" % i, b"v"), i)
                                      for i in range(10)))
        return cl, outs, sent
    cl, outs, sent = asyncio.run(main())
    assert [o.outcome for o in outs] == [Outcome.OK] * 10
    assert sorted(o.index for o in outs) == list(range(1, 11))
    assert len(sent) == 2 and all(len(m.instances) == 10 for m in sent)
    assert all(cl.logs[0].get(i).is_committed for i in range(1, 11))
    assert all(cl.logs[1].get(i).command == Command.put(b"k%d" % (i - 1), b"v")
               for i in range(1, 11))


def test_minority_leader_cannot_commit():
    async def main():
        cl = Cluster(interval=0.01)
        await cl.elect(0)
        cl.down.update({1, 2})
        out = await cl.engines[0].replicate(A, 1)
        cl.engines[0].stop()
        return cl, out
    cl, out = asyncio.run(main())
    assert out.outcome is Outcome.RETRY
    assert not cl.logs[0].get(1).is_committed


def test_higher_ballot_deposes_the_leader():
    async def main():
        cl = Cluster()
        await cl.elect(0)
        await cl.elect(1)
        out = await cl.engines[0].replicate(A, 1)
        return cl, out
    cl, out = asyncio.run(main())
    assert out.outcome is Outcome.NOT_LEADER and out.leader_hint == 1
    assert not cl.engines[0].is_leader() and cl.engines[1].is_leader()


def test_new_leader_recovers_chosen_value():
    async def main():
        cl = Cluster()
        await cl.elect(0)
        out = await cl.engines[0].replicate(B, 7)
        cl.down.add(0)
        b = await cl.elect(2)
        await cl.engines[2].replay(b, {1: cl.logs[2].get(1)})
        return cl, out
    cl, out = asyncio.run(main())
    assert out.outcome is Outcome.OK
    assert cl.logs[2].get(1).command == B and cl.logs[2].get(1).client_id == 7
    assert cl.logs[2].get(1).is_committed


def test_background_workers_elect_a_single_leader():
    async def main():
        cl = Cluster(interval=0.02)
        for e in cl.engines:
            e.start()
        await asyncio.sleep(0.5)
        leaders = [e.my_id for e in cl.engines if e.is_leader()]
        out = await cl.engines[leaders[0]].replicate(A, 1) if leaders else None
        # followers commit up to what the leader has executed
        store = KVStore()
        while cl.logs[leaders[0]].execute_one(store):
            pass
        await asyncio.sleep(0.1)
        for e in cl.engines:
            e.stop()
        return cl, leaders, out
    cl, leaders, out = asyncio.run(main())
    assert len(leaders) == 1
    assert out.outcome is Outcome.OK
    # heartbeats carry the commit to followers
    assert all(log.get(out.index).is_committed for log in cl.logs)
