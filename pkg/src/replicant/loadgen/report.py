"""Percentile tables and latency CDFs as CSV."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

from replicant.loadgen.histogram import EmptySample
from replicant.loadgen.runner import NS, LatencySample, histogram

log = logging.getLogger(__name__)

PERCENTILES = (0.50, 0.90, 0.95, 0.99, 0.999)


@dataclass
class Report:
    percentiles: dict[str, dict[str, int]] = field(default_factory=dict)   # label -> {which: ns}
    throughput: float = 0.0
    ok: int = 0
    errors: int = 0
    retries: int = 0
    warmup_samples: int = 0
    cdf: list[tuple[int, float]] = field(default_factory=list)
    warning: Optional[str] = None

    @property
    def empty(self) -> bool:
        return not self.percentiles

    def summary_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["metric", "intended_ns", "service_ns"])
        for label, row in self.percentiles.items():
            w.writerow([label, row["intended"], row["service"]])
        w.writerow(["throughput_ops_s", f"{self.throughput:.3f}", ""])
        w.writerow(["ok", self.ok, ""])
        w.writerow(["errors", self.errors, ""])
        w.writerow(["retries", self.retries, ""])
        return out.getvalue()

    def cdf_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["latency_ns", "cumulative_fraction"])
        for ns, frac in self.cdf:
            w.writerow([ns, f"{frac:.9f}"])
        return out.getvalue()


def _label(p: float) -> str:
    return f"p{p * 100:g}"


def report(samples: list[LatencySample], which_cdf: str = "intended") -> Report:
    measured = [s for s in samples if not s.warmup]
    ok = [s for s in measured if s.ok]
    rep = Report(ok=len(ok), errors=len(measured) - len(ok),
                 retries=sum(s.retries for s in measured),
                 warmup_samples=len(samples) - len(measured))
    if not ok:
        rep.warning = "no successful post-warmup samples; report is empty"
        log.warning(rep.warning)
        return rep
    hists = {w: histogram(samples, w) for w in ("intended", "service")}
    try:
        for p in PERCENTILES:
            rep.percentiles[_label(p)] = {w: h.value_at(p) for w, h in hists.items()}
    except EmptySample as exc:      # unreachable with ok non-empty, kept for safety
        rep.warning = str(exc)
        return rep
    start = min(s.scheduled_ns for s in measured)
    end = max(s.completion_ns for s in measured)
    rep.throughput = len(ok) * NS / (end - start) if end > start else 0.0
    rep.cdf = hists[which_cdf].cdf()
    return rep
