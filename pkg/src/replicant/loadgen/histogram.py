"""Log-bucketed latency histogram with bounded relative error."""

from __future__ import annotations

import math

import numpy as np

GROWTH = 1.02            # bucket [g**k, g**(k+1)); centre is within 1% of any member
_LOG_G = math.log(GROWTH)
MAX_NS = 100 * 10**9


class EmptySample(ValueError):
    pass


class LatencyHistogram:
    def __init__(self, max_ns: int = MAX_NS):
        self.nbuckets = int(math.log(max_ns) / _LOG_G) + 2
        self.counts = np.zeros(self.nbuckets, dtype=np.int64)
        self.mins = np.full(self.nbuckets, np.iinfo(np.int64).max, dtype=np.int64)
        self.maxs = np.zeros(self.nbuckets, dtype=np.int64)
        self.total = 0

    def _bucket(self, ns: np.ndarray) -> np.ndarray:
        ns = np.maximum(ns, 1)
        idx = np.floor(np.log(ns) / _LOG_G).astype(np.int64)
        return np.clip(idx, 0, self.nbuckets - 1)

    def record_many(self, values) -> None:
        ns = np.asarray(values, dtype=np.int64)
        if ns.size == 0:
            return
        if (ns < 0).any():
            raise ValueError("latencies must be non-negative")
        idx = self._bucket(ns)
        np.add.at(self.counts, idx, 1)
        np.minimum.at(self.mins, idx, ns)
        np.maximum.at(self.maxs, idx, ns)
        self.total += ns.size

    def record(self, ns: int) -> None:
        self.record_many([ns])

    def _representative(self, b: int) -> int:
        centre = GROWTH ** (b + 0.5)
        return int(min(max(round(centre), self.mins[b]), self.maxs[b]))

    def value_at(self, p: float) -> int:
        """Nearest-rank percentile, ``p`` in (0, 1]."""
        if self.total == 0:
            raise EmptySample("no samples")
        if not 0.0 < p <= 1.0:
            raise ValueError("p must be in (0, 1]")
        rank = max(1, math.ceil(p * self.total - 1e-9))
        cum = np.cumsum(self.counts)
        b = int(np.searchsorted(cum, rank))
        before = int(cum[b] - self.counts[b])
        if rank == before + 1:
            return int(self.mins[b])
        if rank == int(cum[b]):
            return int(self.maxs[b])
        return self._representative(b)

    def cdf(self) -> list[tuple[int, float]]:
        """``(latency_ns, cumulative_fraction)`` per non-empty bucket."""
        if self.total == 0:
            return []
        nz = np.nonzero(self.counts)[0]
        cum = np.cumsum(self.counts[nz]) / self.total
        rows = [(int(self.maxs[b]), float(c)) for b, c in zip(nz, cum)]
        rows[-1] = (rows[-1][0], 1.0)
        return rows
