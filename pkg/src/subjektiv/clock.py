"""Logical clocks and id sources.

Virtual mode makes runs fully deterministic: time moves only on explicit
advance and every uuid is counter-derived, so repeated runs produce
byte-identical traces and envelope ids sort in creation order.
"""

from __future__ import annotations

import time
import uuid
import zlib


class VirtualClock:
    """Millisecond clock that advances only when told to."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    @property
    def now(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += delta_ms
        return self._now

    def advance_to(self, at_ms: int) -> int:
        if at_ms > self._now:
            self._now = at_ms
        return self._now


class WallClock:
    """Monotonic wall time in ms since construction."""

    def __init__(self):
        self._t0 = time.monotonic()

    @property
    def now(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def advance(self, delta_ms: int) -> int:  # pragma: no cover - no-op by design
        return self.now

    def advance_to(self, at_ms: int) -> int:  # pragma: no cover
        return self.now


class CounterIds:
    """Deterministic uuids: high bits identify the node, low bits count up."""

    def __init__(self, node_key: str = ""):
        self._seed = zlib.crc32(node_key.encode("utf-8")) if node_key else 0
        self._n = 0

    def next(self) -> str:
        self._n += 1
        return str(uuid.UUID(int=(self._seed << 96) | self._n))


class RandomIds:
    """uuid4 for live deployments."""

    def next(self) -> str:
        return str(uuid.uuid4())
