"""Minimum-interval limiter shared by the extraction loop and the scan client."""

import threading
import time
from typing import Callable, Optional


class RateLimiter:
    """Keeps consecutive call starts at least `min_interval` seconds apart.

    `clock` and `sleep` are injectable so tests can run the 7 s contract
    against a fake clock instead of real time.
    """

    def __init__(
        self,
        min_interval: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if min_interval < 0:
            raise ValueError("min_interval must be >= 0")
        self.min_interval = float(min_interval)
        self._clock = clock
        self._sleep = sleep
        self._last_start: Optional[float] = None
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def per_minute(cls, requests_per_minute: float, **kwargs) -> "RateLimiter":
        if requests_per_minute <= 0:
            return cls(0.0, **kwargs)
        return cls(60.0 / requests_per_minute, **kwargs)

    def acquire(self) -> float:
        """Block until the next call may start; returns the start time."""
        with self._lock:
            if self._last_start is not None:
                wait = self._last_start + self.min_interval - self._clock()
                # sleep() may return early on some platforms
                while wait > 0:
                    self._sleep(wait)
                    wait = self._last_start + self.min_interval - self._clock()
            self._last_start = self._clock()
            self.calls += 1
            return self._last_start
