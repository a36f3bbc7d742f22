import json
import subprocess
import sys

import itertools

import pytest
from hypothesis import given, settings, strategies as st

from fixtures import MISS, OK, corrupted_fixtures, ev, got, linearizable_fixtures
from replicant import replog
from replicant.kvstore import Command, Kind
from replicant.replog import Instance, InstanceState
from replicant.sim import (FOLLOWER, LEADER, BudgetExceeded, Crash, Partition, PeerView,
                           SimParams, check_agreement, check_linearizable, check_prefixes,
                           check_trim_safety, run)
from replicant.sim.loop import VirtualClockLoop
from replicant.sim.scenarios import check_trim_recovery, follower_partition_params
from replicant.sim.sweep import run_sweep, sweep_params

A, B = Command.put(b"k", b"a"), Command.put(b"k", b"b")


def test_virtual_clock_does_not_wait():
    import asyncio
    import time
    loop = VirtualClockLoop()
    t = time.monotonic()

    async def main():
        await asyncio.sleep(3600)
        return asyncio.get_running_loop().time()
    try:
        assert loop.run_until_complete(main()) == pytest.approx(3600)
    finally:
        loop.close()
    assert time.monotonic() - t < 1


def test_same_seed_same_trace():
    p = dict(seed=11, drop_prob=0.1, delay_max=0.05, horizon=4, max_ops=40)
    a, b = run(SimParams(**p)), run(SimParams(**p))
    assert a.trace_digest == b.trace_digest and a.ops == b.ops and a.final == b.final
    assert run(SimParams(**dict(p, seed=12))).trace_digest != a.trace_digest


def test_fault_free_run():
    rep = run(SimParams(seed=1, horizon=5, max_ops=60))
    assert rep.ok and rep.linearizable
    assert rep.ops["completed"] >= 60 and rep.ops["pending"] == 0 and len(rep.leaders) == 1


def test_leader_crash_elects_a_new_leader():
    rep = run(SimParams(seed=3, horizon=8, crashes=[Crash(LEADER, 2.0, 6.0)]))
    assert rep.ok and rep.linearizable
    first, *rest = rep.leaders
    assert rest and all(e["peer"] != first["peer"] for e in rest if e["time"] < 6.0)
    assert rep.max_leaderless < 10 * 0.45


def test_partitioned_leader_is_replaced():
    rep = run(SimParams(seed=4, n_peers=5, horizon=8, partitions=[Partition(2.0, 5.0,
                                                                            (LEADER,))]))
    assert rep.ok and rep.linearizable
    assert any(2.0 < e["time"] < 5.0 for e in rep.leaders)


def test_follower_partition_freezes_then_releases_trim():
    p = follower_partition_params(seed=0)
    rep = run(p)
    found = check_trim_recovery(p, rep)
    assert rep.ok
    assert found.ok, found
    assert found.frozen_gle > 0 and found.growth > 0


def test_fault_aliases_in_scenario_files(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"partitions": [{"start": 1, "end": 2, "side": ["follower"]}],
                                "crashes": [{"peer": "leader", "start": 3, "end": 4}]}))
    from replicant.sim.cli import load_scenario
    doc = load_scenario(str(path))
    assert doc["partitions"][0]["side"] == [FOLLOWER] and doc["crashes"][0]["peer"] == LEADER


def test_sweep_params_cover_the_space():
    ps = [sweep_params(s) for s in range(50)]
    assert {p.n_peers for p in ps} == {3, 5}
    assert {p.drop_prob for p in ps} == {0.0, 0.1, 0.3}
    assert all(p.delay_min == 0.001 and p.delay_max == 0.1 for p in ps)
    assert sweep_params(7) == sweep_params(7)


def test_small_sweep():
    summary = run_sweep(range(10))
    assert summary.ok, summary.failures
    assert summary.runs == 10 and summary.linearizable_runs == 10


def test_le_commit_rule_breaks_agreement(monkeypatch):
    """Committing older-ballot entries on a heartbeat is unsafe; the sim catches it."""
    def commit_until_le(self, le, ballot):
        for index in range(self._last_executed + 1, le + 1):
            inst = self._entries.get(index)
            if inst is not None and not inst.is_committed and inst.ballot <= ballot:
                self._mark_committed(inst)

    monkeypatch.setattr(replog.ReplicatedLog, "commit_until", commit_until_le)
    caught = 0
    for seed in range(1, 4):
        rep = run(SimParams(seed=seed, n_peers=3, drop_prob=0.1, delay_max=0.1,
                            crashes=[Crash(LEADER, 1.5, 3.5)],
                            partitions=[Partition(4, 5, (LEADER,))], horizon=7,
                            n_clients=4, max_ops=80))
        caught += bool(rep.agreement_violations or rep.prefix_divergences
                       or rep.linearizable is False)
    assert caught > 0


# -- oracles ---------------------------------------------------------------------

def _view(peer, insts=(), le=0, gle=0, executed=()):
    return PeerView(peer, {i.index: i for i in insts}, le, gle, list(executed))


def test_agreement_oracle():
    c = InstanceState.COMMITTED
    good = [_view(0, [Instance(1, 1, 1, A, c)]), _view(1, [Instance(2, 1, 1, A, c)]),
            _view(2, [Instance(3, 1, 1, B)])]
    assert check_agreement(good) == []
    bad = [_view(0, [Instance(1, 1, 1, A, c)]), _view(1, executed=[(1, B, 1)])]
    assert check_agreement(bad)[0]["index"] == 1
    client = [_view(0, [Instance(1, 1, 1, A, c)]), _view(1, [Instance(1, 1, 2, A, c)])]
    assert check_agreement(client)


def test_trim_oracle():
    assert check_trim_safety([_view(0, le=5, gle=3), _view(1, le=3, gle=3)]) == []
    assert check_trim_safety([_view(0, le=5, gle=4), _view(1, le=3, gle=0)])[0]["peer"] == 0


def test_prefix_oracle():
    a = _view(0, executed=[(1, A, 1), (2, B, 1)])
    b = _view(1, executed=[(1, A, 1)])
    c = _view(2, executed=[(1, B, 1)])
    assert check_prefixes([a, b]) == []
    assert check_prefixes([a, c])[0]["position"] == 0


# -- linearizability -----------------------------------------------------------------

@pytest.mark.parametrize("name,history", linearizable_fixtures().items())
def test_linearizable_fixtures(name, history):
    verdict = check_linearizable(history)
    assert verdict.linearizable, name
    ops = [e.op_id for e in history if not (e.pending and e.command.kind.value == "get")]
    assert {op for order in verdict.witness.values() for op in order} <= set(ops)


@pytest.mark.parametrize("name,history", corrupted_fixtures().items())
def test_corrupted_fixtures_are_rejected(name, history):
    verdict = check_linearizable(history)
    assert not verdict.linearizable
    assert verdict.conflict["key"] == b"x"


def test_real_history_corruption_is_rejected():
    rep = run(SimParams(seed=5, horizon=5, max_ops=80, n_clients=5))
    assert check_linearizable(rep.history).linearizable
    bad = corrupted_fixtures(rep.history)["real history with a flipped read"]
    assert not check_linearizable(bad).linearizable


def _brute_force(history) -> bool:
    """Try every order of the completed ops plus every subset of the pending ones."""
    done = [e for e in history if not e.pending]
    pending = [e for e in history if e.pending and e.command.kind is not Kind.GET]
    for k in range(len(pending) + 1):
        for extra in itertools.combinations(pending, k):
            for order in itertools.permutations(done + list(extra)):
                if any(a.complete is not None and a.complete < b.invoke
                       for j, b in enumerate(order) for a in order[j + 1:]):
                    continue
                state, ok = None, True
                for e in order:
                    cmd, res = e.command, e.result
                    if cmd.kind is Kind.PUT:
                        state = cmd.value
                    elif cmd.kind is Kind.DEL:
                        ok = res is None or res.ok == (state is not None)
                        state = None
                    else:
                        ok = res == (got(state) if state is not None else MISS)
                    if not ok:
                        break
                if ok:
                    return True
    return False


@st.composite
def small_histories(draw):
    out = []
    for op in range(draw(st.integers(1, 6))):
        t0 = draw(st.integers(0, 8))
        t1 = draw(st.none() | st.integers(t0, 10))
        kind = draw(st.sampled_from(["put", "put", "get", "del"]))
        if kind == "put":
            cmd, res = Command.put(b"x", draw(st.sampled_from([b"a", b"b"]))), OK
        elif kind == "del":
            cmd, res = Command.delete(b"x"), draw(st.sampled_from([OK, MISS]))
        else:
            cmd, res = Command.get(b"x"), draw(st.sampled_from([got(b"a"), got(b"b"), MISS]))
        out.append(ev(op, op, t0, t1, cmd, None if t1 is None else res))
    return out


@settings(max_examples=400, deadline=None)
@given(small_histories())
def test_checker_agrees_with_brute_force(history):
    assert check_linearizable(history).linearizable == _brute_force(history)


def test_checker_budget():
    hist = [ev(i, i, 0, 1, Command.put(b"x", b"%d" % i), OK) for i in range(5)]
    with pytest.raises(BudgetExceeded):
        check_linearizable(hist, max_ops=4)
    with pytest.raises(ValueError):
        ev(0, 0, 2, 1, Command.get(b"x"), MISS)


def test_simrun_cli():
    out = subprocess.run([sys.executable, "-m", "replicant.sim.cli", "--seed", "2",
                          "--horizon", "3", "--ops", "20", "--history"],
                         capture_output=True, text=True, timeout=120)
    assert out.returncode == 0, out.stderr
    doc = json.loads(out.stdout)
    assert doc["ok"] and doc["linearizable"] and len(doc["history"]) == doc["ops"]["completed"]
