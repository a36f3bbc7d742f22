"""An asyncio event loop driven by a virtual clock.

Time only moves when the loop has nothing ready to run: it then jumps straight
to the next scheduled timer. There is no I/O, so everything the protocol does
happens through timers and futures, and a given sequence of scheduled
callbacks always replays identically.
"""

from __future__ import annotations

import asyncio


class SimulationStalled(RuntimeError):
    """Nothing is ready and no timer is pending."""


class _VirtualSelector:
    def __init__(self, loop: "VirtualClockLoop"):
        self._loop = loop

    def select(self, timeout):
        if timeout is None:
            raise SimulationStalled("no runnable callbacks and no pending timers")
        if timeout > 0:
            # jump exactly onto the next deadline instead of now + (when - now)
            self._loop._now = max(self._loop._now, self._loop._scheduled[0]._when)
        return []

    def close(self):
        pass


class VirtualClockLoop(asyncio.BaseEventLoop):
    """``step_hook`` (if set) runs after every loop iteration."""

    def __init__(self, start: float = 0.0):
        super().__init__()
        self._now = float(start)
        self._selector = _VirtualSelector(self)
        self._clock_resolution = 1e-9
        self.step_hook = None

    def time(self) -> float:
        return self._now

    def _process_events(self, event_list):
        pass

    def _write_to_self(self):
        pass

    def _run_once(self):
        super()._run_once()
        if self.step_hook is not None:
            self.step_hook()
