from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone

from ..encoding import ts_decode, ts_encode, utc


class Clock:
    def now(self) -> datetime:
        raise NotImplementedError

    def advance(self, delta: timedelta) -> None:
        """Only meaningful for fixed clocks; real clocks ignore it."""

    def describe(self) -> str:
        raise NotImplementedError


class RealClock(Clock):
    def now(self) -> datetime:
        return utc(datetime.now(timezone.utc))

    def describe(self) -> str:
        return "real"


class FixedClock(Clock):
    """Deterministic time source; moves only when advanced."""

    def __init__(self, start: datetime):
        self._now = utc(start)
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, delta: timedelta) -> None:
        with self._lock:
            self._now = utc(self._now + delta)

    def describe(self) -> str:
        return f"fixed:{ts_encode(self._now)}"


def parse_clock(spec: str) -> Clock:
    """``real`` or ``fixed:YYYY-MM-DDTHH:MM:SSZ``."""
    spec = spec.strip()
    if spec == "real":
        return RealClock()
    if spec.startswith("fixed:"):
        return FixedClock(ts_decode(spec[len("fixed:"):]))
    raise ValueError(f"unknown clock {spec!r}")
