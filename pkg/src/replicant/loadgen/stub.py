"""Single-server stubs with known latency behaviour, for testing the load generator.

The stub models one serial server: requests are served in arrival order
across all connections, and request ``k`` finishes at
``max(arrival_k, finish_{k-1}) + service_k``. Threads and ``time.sleep`` keep
the timing accurate to well under a millisecond.
"""

from __future__ import annotations

import argparse
import socket
import socketserver
import sys
import threading
import time
from typing import Callable, Optional

from replicant.transport import parse_addr

ServiceFn = Callable[[int], float]     # request number (1-based) -> service seconds


def stall_profile(fast: float = 0.001, slow: float = 0.250, every: int = 100,
                  slow_count: int = 4) -> ServiceFn:
    """In every block of ``every`` requests, the last ``slow_count`` take ``slow``."""
    def service(k: int) -> float:
        return slow if (k - 1) % every >= every - slow_count else fast
    return service


def capacity_profile(capacity: float) -> ServiceFn:
    step = 1.0 / capacity
    return lambda k: step


def instant_profile() -> ServiceFn:
    return lambda k: 0.0


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        stub: StubServer = self.server.stub
        for line in self.rfile:
            finish = stub.admit()
            delay = finish - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            reply = b"ok\n"
            if line.startswith(b"get "):
                reply = b"notfound\n" if stub.notfound else b"ok v\n"
            try:
                self.wfile.write(reply)
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class StubServer:
    def __init__(self, service: ServiceFn, addr: str = "127.0.0.1:0", notfound: bool = False):
        self.service = service
        self.notfound = notfound
        self._lock = threading.Lock()
        self._busy_until = 0.0
        self.served = 0
        self._srv = _Server(parse_addr(addr), _Handler)
        self._srv.stub = self
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self._srv.server_address[:2]
        return f"{host}:{port}"

    def admit(self) -> float:
        with self._lock:
            self.served += 1
            start = max(time.monotonic(), self._busy_until)
            self._busy_until = start + self.service(self.served)
            return self._busy_until

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._srv.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._srv.serve_forever()

    def close(self):
        self._srv.shutdown()
        self._srv.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="stubserver", description=__doc__.splitlines()[0])
    ap.add_argument("--listen", default="127.0.0.1:0")
    ap.add_argument("--profile", choices=["stall", "capacity", "instant"], default="stall")
    ap.add_argument("--fast-ms", type=float, default=1.0)
    ap.add_argument("--slow-ms", type=float, default=250.0)
    ap.add_argument("--every", type=int, default=100)
    ap.add_argument("--slow-count", type=int, default=4)
    ap.add_argument("--capacity", type=float, default=1000.0, help="ops/s for the capacity profile")
    args = ap.parse_args(argv)
    if args.profile == "stall":
        fn = stall_profile(args.fast_ms / 1e3, args.slow_ms / 1e3, args.every, args.slow_count)
    elif args.profile == "capacity":
        if args.capacity <= 0:
            ap.error("--capacity must be positive")
        fn = capacity_profile(args.capacity)
    else:
        fn = instant_profile()
    stub = StubServer(fn, args.listen)
    print(f"listening {stub.address}", flush=True)
    try:
        stub.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stub._srv.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
