"""Clock abstraction: simulated logical ticks or real wall time.

Sessions that want byte-identical reruns use the simulated clock; sessions
driving out-of-process DApps need real waits and use the wall clock.
"""
from __future__ import annotations

import time
from typing import Protocol, runtime_checkable


@runtime_checkable
class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, duration: float) -> None: ...


class SimulatedClock:
    """Logical clock: ``sleep`` advances time instantly by the duration."""

    def __init__(self, start: float = 0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep(self, duration: float) -> None:
        if duration < 0:
            raise ValueError("cannot sleep a negative duration")
        self._now += duration


class WallClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, duration: float) -> None:
        if duration > 0:
            time.sleep(duration)
