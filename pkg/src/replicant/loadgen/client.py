"""Client-side connections to a replicant cluster (or a stub)."""

from __future__ import annotations

import asyncio
import collections
from typing import Optional

from replicant.transport import BatchedWriter, parse_addr, set_nodelay


class ConnectionLost(ConnectionError):
    pass


class LineConnection(asyncio.Protocol):
    """One TCP connection; replies are matched to requests in FIFO order."""

    def __init__(self):
        self._transport = None
        self._buf = b""
        self._waiting: collections.deque[asyncio.Future] = collections.deque()
        self.closed = False

    def connection_made(self, transport):
        self._transport = transport
        self._writer = BatchedWriter(transport)
        set_nodelay(transport)

    def data_received(self, data):
        self._buf += data
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                return
            line, self._buf = self._buf[:nl], self._buf[nl + 1:]
            if self._waiting:
                fut = self._waiting.popleft()
                if not fut.done():
                    fut.set_result(line.decode("utf-8", "replace"))

    def connection_lost(self, exc):
        self.closed = True
        while self._waiting:
            fut = self._waiting.popleft()
            if not fut.done():
                fut.set_exception(ConnectionLost(str(exc) if exc else "closed"))

    def request(self, line: bytes) -> asyncio.Future:
        fut = asyncio.get_running_loop().create_future()
        if self.closed:
            fut.set_exception(ConnectionLost("closed"))
            return fut
        self._waiting.append(fut)
        self._writer.write(line)
        return fut

    def close(self):
        if self._transport is not None:
            self._transport.close()


async def connect(addr: str) -> LineConnection:
    host, port = parse_addr(addr)
    loop = asyncio.get_running_loop()
    _, proto = await loop.create_connection(LineConnection, host, port)
    return proto


class ConnectionPool:
    """``lanes`` shared connections per server address, opened on demand.

    Requests on one connection are pipelined; the server answers them in
    order, so many workers can share a lane.
    """

    def __init__(self, lanes: int = 8):
        if lanes < 1:
            raise ValueError("need at least one lane")
        self.lanes = lanes
        self._conns: dict[tuple[str, int], asyncio.Task] = {}

    def ready(self, addr: str, lane: int) -> Optional[LineConnection]:
        """The open connection for this lane, without suspending, if there is one."""
        task = self._conns.get((addr, lane % self.lanes))
        if task is None or not task.done() or task.cancelled() or task.exception() is not None:
            return None
        conn = task.result()
        return None if conn.closed else conn

    async def get(self, addr: str, lane: int) -> LineConnection:
        key = (addr, lane % self.lanes)
        task = self._conns.get(key)
        if task is not None and task.done() and (task.exception() is not None
                                                 or task.result().closed):
            task = None
        if task is None:
            task = asyncio.ensure_future(connect(addr))
            self._conns[key] = task
        return await asyncio.shield(task)

    def close(self):
        for task in self._conns.values():
            if task.done() and task.exception() is None:
                task.result().close()
            else:
                task.cancel()
        self._conns.clear()


class ClusterClient:
    """Sends requests to whichever replica currently leads.

    ``retry <addr>`` replies move the client to ``addr``; a bare ``retry`` or
    a connection failure moves it to the next replica in the list after a
    short pause. Clients built with the same ``shared_target`` converge on the
    leader together.
    """

    def __init__(self, addresses: list[str], shared_target: Optional[list] = None,
                 max_retries: int = 100, retry_pause: float = 0.02,
                 pool: Optional[ConnectionPool] = None, lane: int = 0):
        if not addresses:
            raise ValueError("no server addresses")
        self.addresses = list(addresses)
        self._target = shared_target if shared_target is not None else [self.addresses[0]]
        self._own_pool = pool is None
        self.pool = pool if pool is not None else ConnectionPool(1)
        self.lane = lane
        self.max_retries = max_retries
        self.retry_pause = retry_pause

    def _rotate(self, addr: str) -> None:
        try:
            i = self.addresses.index(addr)
        except ValueError:
            i = -1
        self._target[0] = self.addresses[(i + 1) % len(self.addresses)]

    async def call(self, line: bytes) -> tuple[str, int]:
        """Returns ``(reply, retries)``; raises after ``max_retries``."""
        retries = 0
        while True:
            addr = self._target[0]
            try:
                conn = self.pool.ready(addr, self.lane) or await self.pool.get(addr, self.lane)
                reply = await conn.request(line)
            except OSError:
                reply = None
            if reply is not None and not reply.startswith("retry"):
                return reply, retries
            retries += 1
            if retries > self.max_retries:
                raise ConnectionLost(f"gave up after {retries - 1} retries")
            hint = reply[6:].strip() if reply else ""
            if hint and hint != "unknown" and hint != addr:
                self._target[0] = hint
                if hint not in self.addresses:
                    self.addresses.append(hint)
                continue
            if self._target[0] == addr:
                self._rotate(addr)
            await asyncio.sleep(self.retry_pause)

    def close(self):
        if self._own_pool:
            self.pool.close()
