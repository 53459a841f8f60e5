"""Injectable time source.

Everything time-dependent (assertions, presence supervision, audit stamps)
reads the clock through this interface so tests can drive time manually.
"""

from __future__ import annotations

import time
from typing import Protocol, runtime_checkable


@runtime_checkable
class Clock(Protocol):
    def time(self) -> float: ...


class SystemClock:
    """Wall clock."""

    def time(self) -> float:
        return time.time()


class ManualClock:
    """Deterministic clock for tests and demos; only advances when told to."""

    def __init__(self, start: float = 1_000_000.0):
        self._now = float(start)

    def time(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        self._now += seconds
        return self._now

    def set_to(self, timestamp: float) -> float:
        if timestamp < self._now:
            raise ValueError("clock cannot run backwards")
        self._now = float(timestamp)
        return self._now
