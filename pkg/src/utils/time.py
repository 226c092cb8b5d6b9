"""
A module providing monotonic timing for reports.

Classes:
    Stopwatch: Context manager measuring wall-clock seconds.

Functions:
    monotonic_ms: Monotonic clock in milliseconds.
"""

from __future__ import annotations

import time


def monotonic_ms() -> int:
    """
    Monotonic clock in milliseconds

    Returns:
        int: The current monotonic time in milliseconds.
    """
    return int(time.monotonic() * 1000)


class Stopwatch:
    """
    Measures the wall-clock time of a `with` block.

    Attributes:
        seconds (float): Elapsed seconds; updated on exit and by `elapsed()`.
    """

    def __init__(self):
        self._start_ms = 0
        self.seconds = 0.0

    def __enter__(self) -> "Stopwatch":
        self._start_ms = monotonic_ms()
        return self

    def __exit__(self, *exc) -> None:
        self.seconds = self.elapsed()

    def elapsed(self) -> float:
        return (monotonic_ms() - self._start_ms) / 1000.0
