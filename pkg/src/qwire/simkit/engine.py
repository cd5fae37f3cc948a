"""Deterministic discrete-event core.

Time is integer nanoseconds.  Ties break on insertion order, and every random
draw comes from a named stream derived from the run seed, so the same
``(scenario, seed)`` replays the same event trace.
"""

from __future__ import annotations

import hashlib
import heapq
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class SimulationError(RuntimeError):
    pass


def us_to_ns(us: float) -> int:
    return round(us * 1000)


def s_to_ns(s: float) -> int:
    return round(s * 1_000_000_000)


@dataclass(order=True)
class Event:
    time_ns: int
    seq: int
    callback: Callable[..., Any] = field(compare=False)
    args: tuple = field(compare=False, default=())
    label: str = field(compare=False, default="")


class EventQueue:
    def __init__(self):
        self._heap: list[Event] = []
        self._seq = 0

    def push(self, time_ns: int, callback: Callable[..., Any], args: tuple = (), label: str = "") -> Event:
        ev = Event(int(time_ns), self._seq, callback, args, label)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek_time(self) -> int | None:
        return self._heap[0].time_ns if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


class CountedStream:
    """A numpy Generator that counts how many draws it has served."""

    def __init__(self, name: str, generator: np.random.Generator):
        self.name = name
        self._gen = generator
        self.draws = 0

    def random(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def poisson(self, lam: float) -> int:
        self.draws += 1
        return int(self._gen.poisson(lam))

    def binomial(self, n: int, p: float) -> int:
        self.draws += 1
        return int(self._gen.binomial(n, p))

    def integers(self, low: int, high: int) -> int:
        self.draws += 1
        return int(self._gen.integers(low, high))

    @property
    def generator(self) -> np.random.Generator:
        """Raw access for bulk sampling; counted as one draw."""
        self.draws += 1
        return self._gen


class RandomStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, CountedStream] = {}

    def stream(self, name: str) -> CountedStream:
        s = self._streams.get(name)
        if s is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(name.encode()),))
            s = CountedStream(name, np.random.Generator(np.random.PCG64(ss)))
            self._streams[name] = s
        return s

    def draw_counts(self) -> dict[str, int]:
        return {name: self._streams[name].draws for name in sorted(self._streams)}


class Simulator:
    def __init__(self, seed: int = 0, keep_trace: bool = False):
        self.now = 0
        self.queue = EventQueue()
        self.streams = RandomStreams(seed)
        self.events_processed = 0
        self.hooks: list[Callable[["Simulator"], None]] = []
        self.keep_trace = keep_trace
        self.trace: list[tuple[int, int, str]] = []
        self._digest = hashlib.sha256()

    def schedule_at(self, time_ns: int, callback: Callable[..., Any], *args, label: str = "") -> Event:
        if time_ns < self.now:
            raise SimulationError(f"cannot schedule {label or callback} at {time_ns} ns, now is {self.now} ns")
        return self.queue.push(time_ns, callback, args, label)

    def schedule(self, delay_ns: int, callback: Callable[..., Any], *args, label: str = "") -> Event:
        return self.schedule_at(self.now + int(delay_ns), callback, *args, label=label)

    def run(self, until_ns: int | None = None) -> int:
        """Process events up to and including ``until_ns``; returns the count processed."""
        n = 0
        while self.queue:
            t = self.queue.peek_time()
            if until_ns is not None and t > until_ns:
                break
            ev = self.queue.pop()
            if ev.time_ns < self.now:
                raise SimulationError("event queue went backwards")
            self.now = ev.time_ns
            self._digest.update(f"{ev.time_ns}:{ev.seq}:{ev.label}\n".encode())
            if self.keep_trace:
                self.trace.append((ev.time_ns, ev.seq, ev.label))
            ev.callback(*ev.args)
            n += 1
            self.events_processed += 1
            for hook in self.hooks:
                hook(self)
        if until_ns is not None and until_ns > self.now:
            self.now = until_ns
        return n

    def trace_digest(self) -> str:
        return self._digest.hexdigest()
