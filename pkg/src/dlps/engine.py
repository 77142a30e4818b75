"""Deterministic discrete-event simulation kernel.

All simulation time is carried as integer picoseconds, so every timing
parameter of a DDR4-2400 device (833 ps clock and multiples of it) is
represented exactly and no float drift can accumulate. Events that share a
timestamp dispatch in insertion order, which makes a run bit-reproducible
given the same configuration and seed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum, auto
from typing import Any, Callable

SimTime = int

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000

_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """Fatal logic error in the simulation kernel (e.g. scheduling in the past)."""


class EventKind(Enum):
    REQUEST_ARRIVAL = auto()
    ISSUE_WINDOW = auto()
    REFRESH_DUE = auto()
    PRECHARGE_COMPLETE = auto()
    READ_DATA = auto()
    REFRESH_COMPLETE = auto()
    POWERDOWN_CHECK = auto()


@dataclass
class Event:
    fire_at: SimTime
    kind: EventKind
    payload: Any = None


class Engine:
    """Single-threaded event loop with deterministic tie-breaking.

    Ties at equal ``fire_at`` are broken by a monotone insertion sequence
    number, so dispatch order never depends on hash order or on the payload.
    """

    def __init__(self) -> None:
        self.now: SimTime = 0
        self._heap: list[tuple[SimTime, int, Event]] = []
        self._seq = 0
        self._handlers: dict[EventKind, list[Callable[[Event], None]]] = {}

    def subscribe(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        self._handlers.setdefault(kind, []).append(handler)

    def schedule(self, event: Event) -> None:
        if event.fire_at < self.now:
            raise SimulationError(
                f"event scheduled in the past: fire_at={event.fire_at} ps, "
                f"now={self.now} ps, kind={event.kind.name}"
            )
        heapq.heappush(self._heap, (event.fire_at, self._seq, event))
        self._seq += 1

    def schedule_at(self, fire_at: SimTime, kind: EventKind, payload: Any = None) -> None:
        self.schedule(Event(fire_at, kind, payload))

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self, limit: SimTime) -> SimTime:
        """Dispatch every event with ``fire_at <= limit`` (inclusive).

        The clock is left at ``limit`` even when the queue drains early, so a
        fixed-duration run always ends at its nominal duration. Handlers may
        schedule further events; anything they add at or before ``limit`` is
        dispatched within the same call.
        """
        heap = self._heap
        while heap and heap[0][0] <= limit:
            fire_at, _, event = heapq.heappop(heap)
            self.now = fire_at
            for handler in self._handlers.get(event.kind, ()):
                handler(event)
        if limit > self.now:
            self.now = limit
        return self.now


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """xoshiro256** seeded through splitmix64.

    The generator is pinned (algorithm and seeding procedure) so that seeded
    runs reproduce exactly, independent of the host platform or interpreter
    version. ``uniform`` uses rejection sampling, so integer draws over any
    inclusive range are exactly uniform, not merely bias-bounded.
    """

    __slots__ = ("_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int) -> None:
        state = seed & _MASK64
        state, self._s0 = _splitmix64(state)
        state, self._s1 = _splitmix64(state)
        state, self._s2 = _splitmix64(state)
        state, self._s3 = _splitmix64(state)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        x = (s1 * 5) & _MASK64
        result = ((((x << 7) | (x >> 57)) & _MASK64) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def uniform(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], both ends inclusive."""
        if lo > hi:
            raise ValueError(f"uniform: lo={lo} exceeds hi={hi}")
        span = hi - lo + 1
        if span == 1:
            return lo
        # Rejection sampling: discard draws above the largest multiple of span.
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + (v % span)

    def choice(self, seq):
        if not seq:
            raise ValueError("choice from empty sequence")
        return seq[self.uniform(0, len(seq) - 1)]


def uniform(rng: Rng, lo: SimTime, hi: SimTime) -> SimTime:
    """Module-level alias for drawing an inclusive uniform time value."""
    return rng.uniform(lo, hi)
