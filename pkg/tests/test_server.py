import asyncio
import json
import subprocess
import sys

import pytest

from replicant.kvstore import Command, CommandResult
from replicant.localcluster import LocalCluster, cluster_doc, request
from replicant.server import (ConfigError, ReplicantServer, ServerConfig, format_result,
                              main, parse_request)


def test_config_parsing():
    doc = cluster_doc(3, commit_interval=50)
    cfg = ServerConfig.from_json(dict(doc, my_id=2))
    assert cfg.my_id == 2 and len(cfg.peers) == 3 and cfg.commit_interval == 0.05
    assert cfg.peer_config().election_timeout_base == pytest.approx(0.15)


@pytest.mark.parametrize("mutate", [
    lambda d: d["peers"].__setitem__(1, dict(d["peers"][1], id=0)),
    lambda d: d["peers"].__setitem__(2, dict(d["peers"][2], id=7)),
    lambda d: d.__setitem__("my_id", 5),
    lambda d: d.__setitem__("commit_interval_ms", 0),
    lambda d: d["peers"].__setitem__(0, dict(d["peers"][0], address="nowhere")),
    lambda d: d.pop("peers"),
])
def test_config_rejects(mutate):
    doc = cluster_doc(3)
    mutate(doc)
    with pytest.raises(ConfigError):
        ServerConfig.from_json(doc)


def test_cli_rejects_bad_config(tmp_path):
    doc = cluster_doc(3)
    doc["peers"][1]["id"] = 0
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    assert main(["--config", str(path)]) != 0


def test_parse_request():
    assert parse_request("get k") == Command.get(b"k")
    assert parse_request("put k v") == Command.put(b"k", b"v")
    assert parse_request("del k") == Command.delete(b"k")
    for bad in ["frobnicate", "get", "put k", "get a b", ""]:
        assert parse_request(bad) is None


def test_format_result():
    assert format_result(CommandResult(True, b"v")) == b"ok v\n"
    assert format_result(CommandResult(True)) == b"ok\n"
    assert format_result(CommandResult(False)) == b"notfound\n"


async def _cluster(n=3):
    doc = cluster_doc(n, commit_interval=30)
    servers = [ReplicantServer(ServerConfig.from_json(dict(doc, my_id=i))) for i in range(n)]
    for s in servers:
        await s.start()
    for _ in range(300):
        leaders = [s for s in servers if s.replica.engine.is_leader()]
        if leaders:
            return servers, leaders[0]
        await asyncio.sleep(0.02)
    raise AssertionError("no leader")


async def _close(servers):
    for s in servers:
        await s.close()


async def _lines(addr, payload, count):
    host, port = addr.rsplit(":", 1)
    reader, writer = await asyncio.open_connection(host, int(port))
    writer.write(payload)
    await writer.drain()
    out = [(await asyncio.wait_for(reader.readline(), 5)).decode().strip()
           for _ in range(count)]
    writer.close()
    return out


def test_pipelined_requests_get_replies_in_order():
    async def main():
        servers, leader = await _cluster()
        addr = leader.config.clients[leader.config.my_id]
        reqs = [f"put k{i} v{i}" for i in range(20)] + [f"get k{i}" for i in range(20)]
        reqs += ["frobnicate", "del k0", "get k0", "del k0"]
        out = await _lines(addr, "".join(r + "\n" for r in reqs).encode(), len(reqs))
        stats = leader.stats()
        await _close(servers)
        return out, stats
    out, stats = asyncio.run(main())
    assert out[:20] == ["ok"] * 20
    assert out[20:40] == [f"ok v{i}" for i in range(20)]
    assert out[40:] == ["err bad-command", "ok", "notfound", "notfound"]
    assert stats["role"] == "leader" and stats["nodelay_all"] and stats["keys"] == 19


def test_follower_redirects_to_leader():
    async def main():
        servers, leader = await _cluster()
        follower = next(s for s in servers if s is not leader)
        out = await _lines(follower.config.clients[follower.config.my_id], b"put a b\n", 1)
        await _close(servers)
        return out[0], leader.config.clients[leader.config.my_id]
    reply, leader_addr = asyncio.run(main())
    assert reply == f"retry {leader_addr}"


def test_stats_command_is_local():
    async def main():
        servers, leader = await _cluster()
        out = await _lines(leader.config.clients[leader.config.my_id], b"stats\n", 1)
        await _close(servers)
        return out[0]
    reply = asyncio.run(main())
    assert reply.startswith("ok ")
    assert json.loads(reply[3:])["connections"] >= 1


def test_processes_survive_leader_failover(tmp_path):
    with LocalCluster(3, workdir=str(tmp_path), commit_interval=50) as cl:
        old = cl.wait_for_leader()
        addr = cl.client_addresses[old]
        assert request(addr, "put x 1") == "ok"
        cl.stop_peer(old)
        new = cl.wait_for_leader()
        assert new != old
        reply = ""
        for _ in range(50):
            reply = request(cl.client_addresses[new], "get x")
            if reply != "retry":
                break
        assert reply == "ok 1"
        assert all(cl.stats(i)["nodelay_all"] for i in range(3) if i != old)


def test_replicant_cli_help():
    out = subprocess.run([sys.executable, "-m", "replicant.server", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "--config" in out.stdout
