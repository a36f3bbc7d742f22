"""Event-loop and GC setup for the long-running processes.

uvloop roughly halves per-request event-loop overhead. It is optional: without
it (or with ``REPLICANT_LOOP=asyncio``) the stock loop is used. The simulator
never comes through here; it always runs on its own virtual-clock loop.
"""

from __future__ import annotations

import asyncio
import gc
import os

try:
    import uvloop
except ImportError:          # pragma: no cover - depends on the environment
    uvloop = None


def loop_name() -> str:
    if uvloop is not None and os.environ.get("REPLICANT_LOOP", "uvloop") != "asyncio":
        return "uvloop"
    return "asyncio"


def tune_gc() -> None:
    """Every request allocates futures and callbacks, so the default young
    generation threshold (700) triggers collections thousands of times a
    second, and full collections over a large sample list stall the loop
    for tens of milliseconds. Collect far less often."""
    gc.set_threshold(50_000, 20, 100)


def run(coro):
    tune_gc()
    if loop_name() == "uvloop":
        return uvloop.run(coro)
    return asyncio.run(coro)
