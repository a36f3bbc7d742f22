"""Launch a loopback cluster of ``replicant`` processes (tests, demos)."""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional


def free_ports(n: int) -> list[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def cluster_doc(n: int, **timing_ms) -> dict:
    ports = free_ports(2 * n)
    peers = [{"id": i, "address": f"127.0.0.1:{ports[2 * i]}",
              "client_address": f"127.0.0.1:{ports[2 * i + 1]}"} for i in range(n)]
    doc = {"my_id": 0, "peers": peers}
    doc.update({f"{k}_ms": v for k, v in timing_ms.items()})
    return doc


def request(addr: str, line: str, timeout: float = 5.0) -> str:
    host, port = addr.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=timeout) as s:
        s.sendall(line.encode() + b"\n")
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = s.recv(65536)
            if not chunk:
                break
            buf += chunk
    return buf.decode().strip()


class LocalCluster:
    def __init__(self, n: int = 3, workdir: Optional[str] = None, log_level: str = "WARNING",
                 **timing_ms):
        self.n = n
        self.doc = cluster_doc(n, **timing_ms)
        self.dir = Path(workdir or tempfile.mkdtemp(prefix="replicant-"))
        self.log_level = log_level
        self.procs: list[Optional[subprocess.Popen]] = [None] * n

    @property
    def client_addresses(self) -> list[str]:
        return [p["client_address"] for p in self.doc["peers"]]

    def start_peer(self, i: int) -> None:
        path = self.dir / f"peer{i}.json"
        path.write_text(json.dumps(dict(self.doc, my_id=i)))
        out = open(self.dir / f"peer{i}.log", "ab")
        self.procs[i] = subprocess.Popen(
            [sys.executable, "-m", "replicant.server", "--config", str(path),
             "--log-level", self.log_level],
            stdout=out, stderr=subprocess.STDOUT, env=dict(os.environ))

    def start(self) -> "LocalCluster":
        for i in range(self.n):
            self.start_peer(i)
        return self

    def stop_peer(self, i: int) -> None:
        p = self.procs[i]
        if p is not None and p.poll() is None:
            p.terminate()
            try:
                p.wait(5)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait()
        self.procs[i] = None

    def stop(self) -> None:
        for i in range(self.n):
            self.stop_peer(i)

    def stats(self, i: int) -> dict:
        reply = request(self.client_addresses[i], "stats")
        if not reply.startswith("ok "):
            raise RuntimeError(f"stats failed: {reply!r}")
        return json.loads(reply[3:])

    def leader(self) -> Optional[int]:
        for i in range(self.n):
            if self.procs[i] is None:
                continue
            try:
                if self.stats(i)["role"] == "leader":
                    return i
            except OSError:
                continue
        return None

    def wait_for_leader(self, timeout: float = 15.0) -> int:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            leader = self.leader()
            if leader is not None:
                return leader
            time.sleep(0.1)
        raise TimeoutError("no leader elected")

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
