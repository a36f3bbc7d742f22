"""Fault-injecting in-memory network for the simulator."""

from __future__ import annotations

import asyncio
import hashlib
import itertools
import random
from dataclasses import dataclass
from typing import Callable, Optional

from replicant.transport import PeerMessage


@dataclass(frozen=True)
class Partition:
    """Cuts every link between ``side`` and the other peers during [start, end)."""
    start: float
    end: float
    side: tuple


@dataclass(frozen=True)
class Crash:
    """Peer is down during [start, end); it keeps its memory across the outage."""
    peer: int
    start: float
    end: float


class SimNetwork:
    def __init__(self, loop: asyncio.AbstractEventLoop, n_peers: int, rng: random.Random,
                 drop_prob: float = 0.0, delay_min: float = 0.001, delay_max: float = 0.001,
                 partitions=(), crashes=()):
        self.loop = loop
        self.n = n_peers
        self.rng = rng
        self.drop_prob = drop_prob
        self.delay_min = delay_min
        self.delay_max = delay_max
        self.partitions = list(partitions)
        self.crashes = list(crashes)
        self.handlers: dict[int, Callable[[PeerMessage], PeerMessage]] = {}
        self.sent = 0
        self.delivered = 0
        self._trace = hashlib.sha256()

    def transport(self, peer: int) -> "SimTransport":
        return SimTransport(self, peer)

    def crashed(self, peer: int, now: Optional[float] = None) -> bool:
        now = self.loop.time() if now is None else now
        return any(c.peer == peer and c.start <= now < c.end for c in self.crashes)

    def linked(self, a: int, b: int, now: Optional[float] = None) -> bool:
        now = self.loop.time() if now is None else now
        if self.crashed(a, now) or self.crashed(b, now):
            return False
        for p in self.partitions:
            if p.start <= now < p.end and ((a in p.side) != (b in p.side)):
                return False
        return True

    def delay(self) -> float:
        return self.rng.uniform(self.delay_min, self.delay_max)

    def _lost(self) -> bool:
        return self.drop_prob > 0 and self.rng.random() < self.drop_prob

    def request(self, src: int, dst: int, msg: PeerMessage, fut: asyncio.Future) -> None:
        self.sent += 1
        if not self.linked(src, dst) or self._lost():
            return
        self.loop.call_later(self.delay(), self._deliver, src, dst, msg, fut)

    def _deliver(self, src, dst, msg, fut):
        if not self.linked(src, dst):
            return
        self.delivered += 1
        self.record(f"{src}>{dst} {msg.type.value} {msg.tag}")
        resp = self.handlers[dst](msg)
        if self._lost():
            return
        self.loop.call_later(self.delay(), self._reply, src, dst, resp, fut)

    def _reply(self, src, dst, resp, fut):
        if fut.done() or not self.linked(src, dst):
            return
        self.record(f"{dst}>{src} {resp.type.value} {resp.tag}")
        fut.set_result(resp)

    def record(self, event: str) -> None:
        self._trace.update(f"{self.loop.time():.9f} {event}\n".encode())

    def digest(self) -> str:
        return self._trace.hexdigest()


class SimTransport:
    def __init__(self, net: SimNetwork, peer: int):
        self.net = net
        self.peer = peer
        self._tags = itertools.count(1)

    def next_tag(self) -> int:
        return next(self._tags)

    def call(self, peer: int, msg: PeerMessage) -> asyncio.Future:
        fut = self.net.loop.create_future()
        self.net.request(self.peer, peer, msg, fut)
        return fut
