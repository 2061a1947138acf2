"""Deterministic discrete-event core: a virtual clock plus a small
generator-based process runtime.

Time is integer nanoseconds. Events scheduled at equal times fire in
insertion order, which makes whole runs reproducible from a seed.
"""

from __future__ import annotations

import heapq
from typing import Any, Callable, Generator, List, Optional

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def seconds(x: float) -> int:
    return round(x * NS_PER_S)


def millis(x: float) -> int:
    return round(x * NS_PER_MS)


class SimClock:
    def __init__(self):
        self.now = 0
        self._queue: List = []
        self._seq = 0

    def schedule(self, delay: int, fn: Callable[[], None]) -> None:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._queue, (self.now + delay, self._seq, fn))

    def run(self, until: Optional[int] = None) -> None:
        """Drain the queue, optionally stopping once the clock would pass
        ``until`` (the clock is left at ``until`` in that case)."""
        while self._queue:
            when, _, fn = self._queue[0]
            if until is not None and when > until:
                self.now = until
                return
            heapq.heappop(self._queue)
            self.now = when
            fn()
        if until is not None and until > self.now:
            self.now = until


class Event:
    """One-shot event carrying a value once triggered."""

    __slots__ = ("clock", "callbacks", "triggered", "value")

    def __init__(self, clock: SimClock):
        self.clock = clock
        self.callbacks: List[Callable[["Event"], None]] = []
        self.triggered = False
        self.value: Any = None

    def succeed(self, value: Any = None) -> "Event":
        if self.triggered:
            raise RuntimeError("event already triggered")
        self.triggered = True
        self.value = value
        callbacks, self.callbacks = self.callbacks, []
        for cb in callbacks:
            cb(self)
        return self

    def add_callback(self, cb: Callable[["Event"], None]) -> None:
        if self.triggered:
            # preserve ordering: run after currently queued work
            self.clock.schedule(0, lambda: cb(self))
        else:
            self.callbacks.append(cb)


class Timeout(Event):
    def __init__(self, clock: SimClock, delay: int, value: Any = None):
        super().__init__(clock)
        clock.schedule(delay, lambda: self.succeed(value))


def unwrap(value):
    """Re-raise a process value that captured an exception."""
    if isinstance(value, BaseException):
        raise value
    return value


class Process(Event):
    """Drives a generator that yields Events; the process itself is an
    Event succeeding with the generator's return value. An exception
    escaping the generator becomes the process value (see :func:`unwrap`)."""

    __slots__ = ("_gen", "_waiting")

    def __init__(self, clock: SimClock, gen: Generator):
        super().__init__(clock)
        self._gen = gen
        self._waiting: Optional[Event] = None
        clock.schedule(0, lambda: self._step(None))

    def _step(self, value: Any) -> None:
        try:
            target = self._gen.send(value)
        except StopIteration as stop:
            self.succeed(stop.value)
            return
        except Exception as exc:  # surfaces as the process value
            self.succeed(exc)
            return
        self._waiting = target
        target.add_callback(self._resume)

    def _resume(self, event: Event) -> None:
        if event is not self._waiting:
            return  # stale wakeup from an abandoned event
        self._waiting = None
        self._step(event.value)


class AnyOf(Event):
    """Succeeds with (index, value) of the first child to trigger."""

    def __init__(self, clock: SimClock, children: List[Event]):
        super().__init__(clock)
        if not children:
            raise ValueError("AnyOf needs at least one child")
        for i, child in enumerate(children):
            child.add_callback(self._make_cb(i))

    def _make_cb(self, index: int):
        def cb(event: Event) -> None:
            if not self.triggered:
                self.succeed((index, event.value))
        return cb


class AllOf(Event):
    """Succeeds with the list of child values once every child triggered."""

    def __init__(self, clock: SimClock, children: List[Event]):
        super().__init__(clock)
        self._values: List[Any] = [None] * len(children)
        self._remaining = len(children)
        if not children:
            clock.schedule(0, lambda: self.succeed([]))
            return
        for i, child in enumerate(children):
            child.add_callback(self._make_cb(i))

    def _make_cb(self, index: int):
        def cb(event: Event) -> None:
            self._values[index] = event.value
            self._remaining -= 1
            if self._remaining == 0:
                self.succeed(self._values)
        return cb
