"""YCSB-style workloads: scrambled Zipfian key choice, record keys and values."""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

KEY_LEN = 23
VALUE_LEN = 500
ZIPFIAN_THETA = 0.99

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def fnv1a64(values: np.ndarray) -> np.ndarray:
    """FNV-1a over the 8 little-endian bytes of each value."""
    v = values.astype(np.uint64)
    h = np.full(v.shape, _FNV_OFFSET, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for shift in range(0, 64, 8):
            h ^= (v >> np.uint64(shift)) & np.uint64(0xFF)
            h *= _FNV_PRIME
    return h


def zipf_pmf(n: int, theta: float) -> np.ndarray:
    """P(rank r) for r = 1..n, proportional to 1 / r**theta."""
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    return w / w.sum()


class ScrambledZipfian:
    """Zipfian record ids with the hot ranks scattered over the id space.

    Ranks are drawn exactly by inverse-CDF sampling; rank ``r`` (0-based)
    maps to id ``perm[r]``, where ``perm`` orders ids by their FNV hash. The
    permutation does not depend on the seed, so the hot set is stable across
    runs.
    """

    def __init__(self, n: int, theta: float = ZIPFIAN_THETA, seed: int = 0, batch: int = 4096):
        if n < 1:
            raise ValueError("need at least one record")
        self.n = n
        self.theta = theta
        self._cdf = np.cumsum(zipf_pmf(n, theta))
        self._cdf[-1] = 1.0
        self.perm = np.argsort(fnv1a64(np.arange(n)), kind="stable")
        self._rng = np.random.default_rng(seed)
        self._batch = batch
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def ranks(self, count: int) -> np.ndarray:
        u = self._rng.random(count)
        return np.searchsorted(self._cdf, u, side="right").clip(max=self.n - 1)

    def sample(self, count: int) -> np.ndarray:
        return self.perm[self.ranks(count)]

    def next(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = self.sample(self._batch)
            self._pos = 0
        v = int(self._buf[self._pos])
        self._pos += 1
        return v


@dataclass(frozen=True)
class WorkloadSpec:
    read_fraction: float
    record_count: int
    key_len: int = KEY_LEN
    value_len: int = VALUE_LEN
    theta: float = ZIPFIAN_THETA

    def __post_init__(self):
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must be in [0, 1]")
        if self.record_count < 0 or self.key_len < 5 or self.value_len < 1:
            raise ValueError("bad workload sizes")

    @classmethod
    def named(cls, name: str, record_count: int) -> "WorkloadSpec":
        mixes = {"A": 0.5, "B": 0.95}
        try:
            return cls(mixes[name.upper()], record_count)
        except KeyError:
            raise ValueError(f"unknown workload {name!r}; choose A or B") from None


def record_key(spec: WorkloadSpec, record_id: int) -> str:
    digits = spec.key_len - 4
    return f"user{record_id:0{digits}d}"


def record_value(spec: WorkloadSpec, seed: int, record_id: int, version: int = 0) -> str:
    """A base64url token of exactly ``value_len`` characters."""
    nbytes = (spec.value_len * 3 + 3) // 4
    raw = hashlib.shake_128(f"{seed}:{record_id}:{version}".encode()).digest(nbytes)
    return base64.urlsafe_b64encode(raw).decode("ascii")[:spec.value_len]


class Op(NamedTuple):
    kind: str          # "get" | "put"
    record_id: int

    def line(self, spec: WorkloadSpec, seed: int, version: int = 0) -> bytes:
        key = record_key(spec, self.record_id)
        if self.kind == "get":
            return f"get {key}\n".encode()
        return f"put {key} {record_value(spec, seed, self.record_id, version)}\n".encode()


def op_stream(spec: WorkloadSpec, seed: int) -> Iterator[Op]:
    """The run-phase operation sequence; a function of ``seed`` alone."""
    if spec.record_count == 0:
        raise ValueError("cannot draw operations from an empty record set")
    keys = ScrambledZipfian(spec.record_count, spec.theta, seed)
    coin = np.random.default_rng(seed + 1)
    while True:
        reads = coin.random(4096) < spec.read_fraction
        ids = keys.sample(4096)
        for is_read, rid in zip(reads.tolist(), ids.tolist()):
            yield Op("get" if is_read else "put", rid)
