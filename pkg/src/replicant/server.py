"""The Replicant process: client sessions, the executor loop and TCP serving.

Client protocol, one request per line::

    get <key>            ->  ok <value> | notfound
    put <key> <value>    ->  ok
    del <key>            ->  ok | notfound
    stats                ->  ok {json}     (operational, never replicated)

Any request may instead be answered with ``retry <addr>`` (go to the leader's
client address), ``retry`` (no leader known yet) or ``err <reason>``.
"""

from __future__ import annotations

import argparse
import asyncio
import collections
import itertools
import json
import logging
import os
import signal
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from replicant import aio
from replicant.kvstore import Command, CommandResult, KVStore
from replicant.multipaxos import MultiPaxos, Outcome, PeerConfig
from replicant.replog import ReplicatedLog, Stopped
from replicant.transport import BatchedWriter, PeerServer, TcpTransport, nodelay_enabled, parse_addr, set_nodelay

log = logging.getLogger(__name__)

CLIENT_ID_SHIFT = 56


class ConfigError(ValueError):
    pass


@dataclass
class ServerConfig:
    my_id: int
    peers: list          # peer-to-peer listen addresses, indexed by id
    clients: list        # client listen addresses, indexed by id
    commit_interval: float = 0.150
    election_timeout_base: Optional[float] = None
    election_jitter_max: Optional[float] = None

    @classmethod
    def from_json(cls, doc: dict) -> "ServerConfig":
        """Parse the config document.

        ``{"my_id": 0, "peers": [{"id": 0, "address": "h:p",
        "client_address": "h:p"}, ...], "commit_interval_ms": 150,
        "election_timeout_base_ms": 450, "election_jitter_max_ms": 150}``
        """
        try:
            entries = sorted(doc["peers"], key=lambda p: p["id"])
            ids = [p["id"] for p in entries]
            if len(set(ids)) != len(ids):
                raise ConfigError(f"duplicate peer ids in {ids}")
            if ids != list(range(len(ids))):
                raise ConfigError(f"peer ids must be 0..{len(ids) - 1}, got {ids}")
            for p in entries:
                parse_addr(p["address"])
                parse_addr(p["client_address"])
            kw = {}
            for key in ("commit_interval", "election_timeout_base", "election_jitter_max"):
                if f"{key}_ms" in doc:
                    value = doc[f"{key}_ms"] / 1000.0
                    if value <= 0:
                        raise ConfigError(f"{key}_ms must be positive")
                    kw[key] = value
            cfg = cls(doc["my_id"], [p["address"] for p in entries],
                      [p["client_address"] for p in entries], **kw)
            cfg.peer_config()
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path: str) -> "ServerConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def peer_config(self) -> PeerConfig:
        return PeerConfig(self.my_id, list(self.peers), self.commit_interval,
                          self.election_timeout_base, self.election_jitter_max)


class Replica:
    """Log + store + engine + the executor that routes results to sessions.

    Shared by the TCP server and the simulator. ``sessions`` maps client id to
    a callback ``(index, result)``; results for unknown ids are dropped.
    """

    def __init__(self, config: PeerConfig, transport, rng=None, observer=None,
                 on_leader=None):
        self.config = config
        self.log = ReplicatedLog(observer=observer)
        self.store = KVStore()
        self.engine = MultiPaxos(self.log, config, transport, rng=rng, on_leader=on_leader)
        self.sessions: dict[int, Callable[[int, CommandResult], None]] = {}
        self._ids = itertools.count(1)
        self._executor: Optional[asyncio.Task] = None

    def open_session(self, deliver: Callable[[int, CommandResult], None]) -> int:
        client_id = (self.config.my_id << CLIENT_ID_SHIFT) | next(self._ids)
        self.sessions[client_id] = deliver
        return client_id

    def close_session(self, client_id: int) -> None:
        self.sessions.pop(client_id, None)

    async def executor_loop(self) -> None:
        while True:
            try:
                client_id, index, result = await self.log.execute_next(self.store)
            except Stopped:
                return
            deliver = self.sessions.get(client_id)
            if deliver is not None:
                deliver(index, result)

    def start(self) -> None:
        self.engine.start()
        self._executor = asyncio.get_running_loop().create_task(self.executor_loop())

    def stop(self) -> None:
        self.log.shutdown()
        self.engine.stop()


# -- client protocol -----------------------------------------------------------

def parse_request(line: str) -> Optional[Command]:
    parts = line.split()
    try:
        if len(parts) == 2 and parts[0] == "get":
            return Command.get(parts[1].encode())
        if len(parts) == 3 and parts[0] == "put":
            return Command.put(parts[1].encode(), parts[2].encode())
        if len(parts) == 2 and parts[0] == "del":
            return Command.delete(parts[1].encode())
    except ValueError:
        return None
    return None


def format_result(result: CommandResult) -> bytes:
    if not result.ok:
        return b"notfound\n"
    if result.value is not None:
        return b"ok " + result.value + b"\n"
    return b"ok\n"


class _Slot:
    __slots__ = ("reply",)

    def __init__(self):
        self.reply: Optional[bytes] = None


class ClientSession(asyncio.Protocol):
    """One client connection. Requests may be pipelined; replies go out in
    request order. A result that arrives for a request already answered
    (e.g. with ``retry`` after a timeout) is dropped."""

    def __init__(self, server: "ReplicantServer"):
        self.server = server
        self.client_id: Optional[int] = None
        self.transport = None
        self._buf = bytearray()
        self._slots: collections.deque[_Slot] = collections.deque()
        self._by_index: dict[int, _Slot] = {}

    def connection_made(self, transport):
        set_nodelay(transport)
        self.transport = transport
        self.writer = BatchedWriter(transport)
        self.client_id = self.server.replica.open_session(self._deliver)
        self.server.client_transports[self.client_id] = transport

    def connection_lost(self, exc):
        self.server.replica.close_session(self.client_id)
        self.server.client_transports.pop(self.client_id, None)

    def data_received(self, data):
        self._buf += data
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                return
            line = bytes(self._buf[:nl]).decode("utf-8", "replace").strip()
            del self._buf[:nl + 1]
            self.handle_client_line(line)

    def handle_client_line(self, line: str) -> None:
        slot = _Slot()
        self._slots.append(slot)
        if line == "stats":
            self._fill(slot, b"ok " + json.dumps(self.server.stats()).encode() + b"\n")
            return
        cmd = parse_request(line)
        if cmd is None:
            self._fill(slot, b"err bad-command\n")
            return
        asyncio.get_running_loop().create_task(self._replicate(cmd, slot))

    async def _replicate(self, cmd: Command, slot: _Slot) -> None:
        out = await self.server.replica.engine.replicate(cmd, self.client_id)
        if out.outcome is Outcome.OK:
            # chosen; the executor answers once the instance runs here
            self._by_index[out.index] = slot
            return
        if out.outcome is Outcome.NOT_LEADER and out.leader_hint is not None:
            addr = self.server.config.clients[out.leader_hint]
            self._fill(slot, f"retry {addr}\n".encode())
        else:
            self._fill(slot, b"retry\n")

    def _deliver(self, index: int, result: CommandResult) -> None:
        slot = self._by_index.pop(index, None)
        if slot is not None:
            self._fill(slot, format_result(result))

    def _fill(self, slot: _Slot, reply: bytes) -> None:
        slot.reply = reply
        slots = self._slots
        while slots and slots[0].reply is not None:
            self._write(slots.popleft().reply)

    def _write(self, data: bytes) -> None:
        if self.transport is not None and not self.transport.is_closing():
            self.writer.write(data)


class ReplicantServer:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.transport = TcpTransport(config.my_id, config.peers)
        self.replica = Replica(config.peer_config(), self.transport)
        self.peer_server = PeerServer(self.replica.engine.handle)
        self.client_transports: dict[int, asyncio.BaseTransport] = {}
        self._client_server: Optional[asyncio.AbstractServer] = None
        self._stopping: Optional[asyncio.Event] = None

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        self._stopping = asyncio.Event()
        await self.peer_server.serve(self.config.peers[self.config.my_id])
        host, port = parse_addr(self.config.clients[self.config.my_id])
        self._client_server = await loop.create_server(lambda: ClientSession(self), host, port,
                                                       reuse_address=True)
        self.transport.start()
        self.replica.start()
        log.info("peer %d serving peers on %s, clients on %s", self.config.my_id,
                 self.config.peers[self.config.my_id], self.config.clients[self.config.my_id])

    def connections(self) -> list:
        return (list(self.peer_server.connections) + self.transport.connections()
                + list(self.client_transports.values()))

    def stats(self) -> dict:
        f = self.replica.log.frontiers()
        conns = self.connections()
        return {
            "id": self.config.my_id,
            "role": self.replica.engine.role().value,
            "ballot": self.replica.engine.ballot,
            "last_index": f.last_index,
            "last_executed": f.last_executed,
            "global_last_executed": f.global_last_executed,
            "log_size": len(self.replica.log),
            "keys": self.replica.store.size(),
            "sessions": len(self.replica.sessions),
            "connections": len(conns),
            "nodelay_all": all(nodelay_enabled(t) for t in conns if not t.is_closing()),
        }

    def shutdown(self) -> None:
        if self._stopping is not None:
            self._stopping.set()

    async def run(self) -> None:
        await self.start()
        try:
            await self._stopping.wait()
        finally:
            await self.close()

    async def close(self) -> None:
        self.replica.stop()
        self.transport.close()
        self.peer_server.close()
        if self._client_server is not None:
            self._client_server.close()
        for tr in list(self.client_transports.values()):
            tr.close()
        await asyncio.sleep(0)


def run(config: ServerConfig) -> int:
    async def main():
        server = ReplicantServer(config)
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            loop.add_signal_handler(sig, server.shutdown)
        await server.run()

    try:
        aio.run(main())
    except OSError as exc:
        log.error("startup failed: %s", exc)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="replicant", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--id", type=int, help="override my_id from the config")
    parser.add_argument("--log-level", default=os.environ.get("REPLICANT_LOG", "WARNING"))
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as f:
            doc = json.load(f)
        if args.id is not None:
            doc["my_id"] = args.id
        config = ServerConfig.from_json(doc)
    except (OSError, ValueError) as exc:
        print(f"replicant: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
