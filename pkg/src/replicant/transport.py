"""Peer RPC: wire codec, quorum collection and the TCP realization.

Wire format: one UTF-8 JSON object per ``\\n``-terminated line. Byte strings
inside commands are base64. Requests carry a ``tag`` that the response echoes,
so any number of RPCs can be in flight on one connection.

Any object with ``call(peer, msg) -> asyncio.Future`` can serve as a
transport; the future resolves to the reply :class:`PeerMessage`,
:data:`TIMEOUT` or :data:`DISCONNECTED`. The simulator provides its own.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import enum
import functools
import itertools
import json
import logging
import re
import socket
from dataclasses import dataclass, fields, replace
from typing import Callable, Iterable, Optional

from replicant.kvstore import Command, Kind
from replicant.replog import Instance, InstanceState

log = logging.getLogger(__name__)


class MsgType(str, enum.Enum):
    PREPARE = "prepare"
    PREPARE_RESP = "prepare_resp"
    ACCEPT = "accept"
    ACCEPT_RESP = "accept_resp"
    COMMIT = "commit"
    COMMIT_RESP = "commit_resp"


RESPONSE_OF = {
    MsgType.PREPARE: MsgType.PREPARE_RESP,
    MsgType.ACCEPT: MsgType.ACCEPT_RESP,
    MsgType.COMMIT: MsgType.COMMIT_RESP,
}

OK = "ok"
REJECT = "reject"


@dataclass(frozen=True)
class PeerMessage:
    type: MsgType
    tag: int
    sender: int
    ballot: Optional[int] = None
    index: Optional[int] = None
    client_id: Optional[int] = None
    command: Optional[Command] = None
    instances: Optional[tuple[Instance, ...]] = None
    last_executed: Optional[int] = None
    global_last_executed: Optional[int] = None
    status: Optional[str] = None

    def response(self, **kw) -> "PeerMessage":
        return PeerMessage(RESPONSE_OF[self.type], self.tag, **kw)

    @property
    def instance(self) -> Instance:
        """The instance carried by an accept message."""
        return Instance(self.ballot, self.index, self.client_id, self.command)


class _Outcome:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


TIMEOUT = _Outcome("TIMEOUT")
DISCONNECTED = _Outcome("DISCONNECTED")


class WireError(ValueError):
    pass


# -- codec -------------------------------------------------------------------

_STATE_NAMES = {InstanceState.IN_PROGRESS: "in_progress",
                InstanceState.COMMITTED: "committed",
                InstanceState.EXECUTED: "executed"}
_STATE_BY_NAME = {v: k for k, v in _STATE_NAMES.items()}
_OPTIONAL = [f.name for f in fields(PeerMessage)][3:]


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


_KINDS = {k.value: k for k in Kind}
_B64 = re.compile(rb"[A-Za-z0-9+/]*={0,2}")


def _unb64(text: str) -> bytes:
    data = text.encode("ascii")
    if not _B64.fullmatch(data):
        raise WireError("invalid base64")
    return binascii.a2b_base64(data)


# a broadcast encodes the same commands once per peer; callers never mutate the result
@functools.lru_cache(maxsize=4096)
def command_to_json(cmd: Command) -> dict:
    out = {"kind": cmd.kind.value, "key": _b64(cmd.key)}
    if cmd.value is not None:
        out["value"] = _b64(cmd.value)
    return out


def command_from_json(obj: dict) -> Command:
    value = obj.get("value")
    return Command(_KINDS[obj["kind"]], _unb64(obj["key"]),
                   None if value is None else _unb64(value))


def instance_to_json(inst: Instance) -> dict:
    return {"ballot": inst.ballot, "index": inst.index, "client_id": inst.client_id,
            "command": command_to_json(inst.command), "state": _STATE_NAMES[inst.state]}


def instance_from_json(obj: dict) -> Instance:
    return Instance(obj["ballot"], obj["index"], obj["client_id"],
                    command_from_json(obj["command"]), _STATE_BY_NAME[obj["state"]])


def to_json(msg: PeerMessage) -> dict:
    out = {"type": msg.type.value, "tag": msg.tag, "from": msg.sender}
    for name in _OPTIONAL:
        value = getattr(msg, name)
        if value is None:
            continue
        if name == "command":
            value = command_to_json(value)
        elif name == "instances":
            value = [instance_to_json(i) for i in value]
        out[name] = value
    return out


def from_json(obj: dict) -> PeerMessage:
    kw = {}
    for name in _OPTIONAL:
        if name in obj:
            value = obj[name]
            if name == "command":
                value = command_from_json(value)
            elif name == "instances":
                value = tuple(instance_from_json(i) for i in value)
            kw[name] = value
    return PeerMessage(MsgType(obj["type"]), obj["tag"], obj["from"], **kw)


def _instance_text(inst: Instance) -> str:
    # hand-formatted: every field is an int or base64/ASCII, so nothing needs escaping
    cmd = inst.command
    value = "" if cmd.value is None else ',"value":"%s"' % _b64(cmd.value)
    return ('{"ballot":%d,"index":%d,"client_id":%d,"command":{"kind":"%s","key":"%s"%s},'
            '"state":"%s"}' % (inst.ballot, inst.index, inst.client_id, cmd.kind.value,
                               _b64(cmd.key), value, _STATE_NAMES[inst.state]))


def encode(msg: PeerMessage) -> bytes:
    # json escapes control characters, so the line never contains a raw newline
    if not msg.instances:
        return json.dumps(to_json(msg), separators=(",", ":")).encode("utf-8") + b"\n"
    head = json.dumps(to_json(replace(msg, instances=None)), separators=(",", ":"))
    body = ",".join(map(_instance_text, msg.instances))
    return f'{head[:-1]},"instances":[{body}]}}\n'.encode("ascii")


def decode(line: bytes) -> PeerMessage:
    try:
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise WireError("message is not a JSON object")
        return from_json(obj)
    except (ValueError, KeyError, TypeError, binascii.Error) as exc:
        raise WireError(f"malformed message: {exc}") from exc


class LineFramer:
    """Reassembles ``\\n``-terminated frames from arbitrary byte chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        if b"\n" not in data:
            return []
        *lines, rest = self._buf.split(b"\n")
        self._buf = bytearray(rest)
        return lines

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- quorum collection ---------------------------------------------------------

class Majority:
    """Done on a majority of OKs, or at the first reject carrying a higher ballot."""

    def __init__(self, n_peers: int, ballot: int):
        self.needed = n_peers // 2 + 1
        self.ballot = ballot
        self.oks: list[PeerMessage] = []
        self.higher: Optional[int] = None

    def feed(self, peer: int, outcome) -> bool:
        if not isinstance(outcome, PeerMessage):
            return False
        if outcome.status == OK:
            self.oks.append(outcome)
            return len(self.oks) >= self.needed
        if outcome.ballot is not None and outcome.ballot > self.ballot:
            self.higher = outcome.ballot
            return True
        return False

    @property
    def won(self) -> bool:
        return self.higher is None and len(self.oks) >= self.needed


class Everyone(Majority):
    """Like :class:`Majority` but only done when every peer has answered OK."""

    def __init__(self, n_peers: int, ballot: int):
        super().__init__(n_peers, ballot)
        self.needed = n_peers


async def broadcast(transport, peers: Iterable[int], build: Callable[[int], PeerMessage],
                    deadline: float, acc, local: Optional[tuple[int, object]] = None):
    """Send ``build(peer)`` to each peer and feed the outcomes into ``acc``.

    ``local`` is ``(my_id, outcome)`` for the caller's own vote, which is fed
    first and never crosses the transport. Returns ``acc`` once it reports
    done, every peer has answered, or ``deadline`` seconds pass.
    """
    loop = asyncio.get_running_loop()
    if local is not None and acc.feed(*local):
        return acc
    peers = list(peers)
    if not peers:
        return acc
    done = loop.create_future()
    remaining = len(peers)
    futures = []

    def on_outcome(peer, fut):
        nonlocal remaining
        if done.done():
            return
        remaining -= 1
        outcome = DISCONNECTED if fut.cancelled() else fut.result()
        if acc.feed(peer, outcome) or remaining == 0:
            done.set_result(None)

    for peer in peers:
        fut = transport.call(peer, build(peer))
        futures.append(fut)
        fut.add_done_callback(lambda f, p=peer: on_outcome(p, f))
    timer = loop.call_later(deadline, lambda: done.done() or done.set_result(None))
    try:
        await done
    finally:
        timer.cancel()
        for fut in futures:
            if not fut.done():
                fut.cancel()
    return acc


async def rpc(transport, peer: int, msg: PeerMessage, deadline: float):
    fut = transport.call(peer, msg)
    try:
        return await asyncio.wait_for(fut, deadline)
    except asyncio.TimeoutError:
        return TIMEOUT


# -- TCP -----------------------------------------------------------------------

def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port:
        raise ValueError(f"bad address {addr!r}")
    return host, int(port)


def set_nodelay(transport: asyncio.BaseTransport) -> None:
    sock = transport.get_extra_info("socket")
    if sock is not None and sock.family in (socket.AF_INET, socket.AF_INET6):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


def nodelay_enabled(transport: asyncio.BaseTransport) -> bool:
    sock = transport.get_extra_info("socket")
    return bool(sock.getsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY))


class BatchedWriter:
    """Coalesces the writes made during one event-loop pass into a single send.

    Loopback sends cost tens of microseconds each, mostly in waking the
    receiver, so batching them is the largest single throughput win.
    """

    __slots__ = ("transport", "_buf", "_scheduled")

    def __init__(self, transport: asyncio.BaseTransport):
        self.transport = transport
        self._buf: list[bytes] = []
        self._scheduled = False

    def write(self, data: bytes) -> None:
        self._buf.append(data)
        if not self._scheduled:
            self._scheduled = True
            asyncio.get_running_loop().call_soon(self.flush)

    def flush(self) -> None:
        self._scheduled = False
        if self._buf and not self.transport.is_closing():
            self.transport.write(b"".join(self._buf))
        self._buf.clear()


class _OutboundProtocol(asyncio.Protocol):
    def __init__(self, owner: "_PeerChannel"):
        self._owner = owner
        self._framer = LineFramer()
        self.transport = None

    def connection_made(self, transport):
        set_nodelay(transport)
        self.transport = transport
        self.writer = BatchedWriter(transport)

    def data_received(self, data):
        for line in self._framer.feed(data):
            try:
                msg = decode(line)
            except WireError:
                log.warning("dropping malformed reply from peer %d", self._owner.peer)
                continue
            self._owner.resolve(msg)

    def connection_lost(self, exc):
        self._owner.lost(self)


class _PeerChannel:
    """One persistent outbound connection to a peer, multiplexed by tag."""

    def __init__(self, peer: int, addr: str, max_backoff: float):
        self.peer = peer
        self.host, self.port = parse_addr(addr)
        self.max_backoff = max_backoff
        self.proto: Optional[_OutboundProtocol] = None
        self.pending: dict[int, asyncio.Future] = {}
        self._connecting: Optional[asyncio.Task] = None
        self._backoff = 0.01
        self._closed = False

    def send(self, msg: PeerMessage, line: bytes, fut: asyncio.Future) -> None:
        if self.proto is None:
            self.ensure_connecting()
            fut.set_result(DISCONNECTED)
            return
        self.pending[msg.tag] = fut
        fut.add_done_callback(lambda f, t=msg.tag: self.pending.pop(t, None))
        self.proto.writer.write(line)

    def resolve(self, msg: PeerMessage) -> None:
        fut = self.pending.pop(msg.tag, None)
        if fut is not None and not fut.done():
            fut.set_result(msg)

    def lost(self, proto) -> None:
        if self.proto is proto:
            self.proto = None
        pending, self.pending = self.pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_result(DISCONNECTED)
        if not self._closed:
            self.ensure_connecting()

    def ensure_connecting(self) -> None:
        if self._closed or self.proto is not None:
            return
        if self._connecting is None or self._connecting.done():
            self._connecting = asyncio.get_running_loop().create_task(self._connect())

    async def _connect(self) -> None:
        loop = asyncio.get_running_loop()
        while not self._closed and self.proto is None:
            try:
                _, proto = await loop.create_connection(
                    lambda: _OutboundProtocol(self), self.host, self.port)
                self.proto = proto
                self._backoff = 0.01
                return
            except OSError:
                await asyncio.sleep(self._backoff)
                self._backoff = min(self._backoff * 2, self.max_backoff)

    def close(self) -> None:
        self._closed = True
        if self._connecting is not None:
            self._connecting.cancel()
        if self.proto is not None and self.proto.transport is not None:
            self.proto.transport.close()


class TcpTransport:
    """Client side of the peer RPC over TCP."""

    def __init__(self, my_id: int, peer_addrs: list[str], max_backoff: float = 0.5):
        self.my_id = my_id
        self._tags = itertools.count(1)
        self._last_msg: Optional[PeerMessage] = None     # a broadcast is encoded once
        self._last_line = b""
        self._channels = {i: _PeerChannel(i, addr, max_backoff)
                          for i, addr in enumerate(peer_addrs) if i != my_id}

    def next_tag(self) -> int:
        return next(self._tags)

    def start(self) -> None:
        for ch in self._channels.values():
            ch.ensure_connecting()

    def call(self, peer: int, msg: PeerMessage) -> asyncio.Future:
        fut = asyncio.get_running_loop().create_future()
        if msg is not self._last_msg:
            self._last_msg, self._last_line = msg, encode(msg)
        self._channels[peer].send(msg, self._last_line, fut)
        return fut

    def connections(self) -> list[asyncio.BaseTransport]:
        return [ch.proto.transport for ch in self._channels.values() if ch.proto is not None]

    def close(self) -> None:
        for ch in self._channels.values():
            ch.close()


class _InboundProtocol(asyncio.Protocol):
    def __init__(self, server: "PeerServer"):
        self._server = server
        self._framer = LineFramer()
        self.transport = None

    def connection_made(self, transport):
        set_nodelay(transport)
        self.transport = transport
        self._server.connections.add(transport)

    def data_received(self, data):
        out = []
        for line in self._framer.feed(data):
            try:
                msg = decode(line)
                if msg.type not in RESPONSE_OF:
                    raise WireError(f"unexpected {msg.type.value} on request channel")
            except WireError as exc:
                log.warning("closing peer connection: %s", exc)
                self.transport.close()
                return
            out.append(encode(self._server.handler(msg)))
        if out:
            self.transport.write(b"".join(out))

    def connection_lost(self, exc):
        self._server.connections.discard(self.transport)


class PeerServer:
    """Accepts peer connections and answers each request line via ``handler``."""

    def __init__(self, handler: Callable[[PeerMessage], PeerMessage]):
        self.handler = handler
        self.connections: set[asyncio.BaseTransport] = set()
        self._server: Optional[asyncio.AbstractServer] = None

    async def serve(self, addr: str) -> None:
        host, port = parse_addr(addr)
        loop = asyncio.get_running_loop()
        self._server = await loop.create_server(lambda: _InboundProtocol(self), host, port,
                                                reuse_address=True)

    def close(self) -> None:
        if self._server is not None:
            self._server.close()
        for tr in list(self.connections):
            tr.close()
