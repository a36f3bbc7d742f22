"""YCSB-style load generation with open-loop (intended) latency measurement."""

from replicant.loadgen.histogram import EmptySample, LatencyHistogram
from replicant.loadgen.report import Report, report
from replicant.loadgen.runner import (
    LatencySample,
    LoadError,
    RunConfig,
    RunResult,
    closed_loop,
    load,
    load_phase,
    open_loop,
    percentile,
    run,
    run_closed_loop,
    run_open_loop,
    schedule_ns,
)
from replicant.loadgen.search import SearchResult, ZeroCapacity, find_max_throughput
from replicant.loadgen.stub import StubServer, capacity_profile, instant_profile, stall_profile
from replicant.loadgen.workload import (
    Op,
    ScrambledZipfian,
    WorkloadSpec,
    op_stream,
    record_key,
    record_value,
    zipf_pmf,
)

__all__ = [
    "EmptySample", "LatencyHistogram", "LatencySample", "LoadError", "Op", "Report",
    "RunConfig", "RunResult", "ScrambledZipfian", "SearchResult", "StubServer",
    "WorkloadSpec", "ZeroCapacity", "capacity_profile", "closed_loop", "find_max_throughput",
    "instant_profile", "load", "load_phase", "op_stream", "open_loop", "percentile",
    "record_key", "record_value", "report", "run", "run_closed_loop", "run_open_loop",
    "schedule_ns", "stall_profile", "zipf_pmf",
]
