"""Deterministic discrete-event kernel.

Events fire in (time, schedule-order) order off a heap, so two runs of the
same program produce identical event interleavings. A minimal Future/spawn
layer on top lets agent loops read sequentially instead of as callback
chains; resumption happens synchronously at resolve time, which keeps the
ordering a pure function of the event schedule.
"""

from __future__ import annotations

import heapq
import time
from typing import Any, Callable, Generator

from .errors import InvalidDelay


class SimEvent:
    __slots__ = ("fire_at", "seq", "action", "name")

    def __init__(self, fire_at: float, seq: int, action: Callable[[], None], name: str):
        self.fire_at = fire_at
        self.seq = seq
        self.action = action
        self.name = name


class Simulator:
    """Virtual clock plus an ordered event heap."""

    def __init__(self, trace: bool = False):
        self.now = 0.0
        self._heap: list[tuple[float, int, SimEvent]] = []
        self._seq = 0
        self.trace_lines: list[str] | None = [] if trace else None

    def schedule(self, delay: float, action: Callable[[], None], name: str = "") -> SimEvent:
        if delay < 0:
            raise InvalidDelay(f"cannot schedule {delay} seconds into the past")
        ev = SimEvent(self.now + delay, self._seq, action, name)
        self._seq += 1
        heapq.heappush(self._heap, (ev.fire_at, ev.seq, ev))
        return ev

    def run_until_idle(self) -> float:
        while self._heap:
            fire_at, _, ev = heapq.heappop(self._heap)
            self.now = fire_at
            if self.trace_lines is not None:
                self.trace_lines.append(f"t={fire_at!r} seq={ev.seq} action={ev.name}")
            try:
                ev.action()
            except Exception as e:
                if hasattr(e, "add_note"):  # 3.11+
                    e.add_note(f"while firing event {ev.name!r} at t={fire_at!r}")
                raise
        return self.now

    def clock(self) -> float:
        return self.now

    def sleep(self, delay: float) -> "Future":
        fut = Future()
        self.schedule(delay, lambda: fut.resolve(None), name="sleep")
        return fut


class Future:
    """Single-assignment value; callbacks run synchronously at resolve."""

    __slots__ = ("done", "_value", "_callbacks")

    def __init__(self):
        self.done = False
        self._value: Any = None
        self._callbacks: list[Callable[[Any], None]] = []

    def resolve(self, value: Any) -> None:
        if self.done:
            raise RuntimeError("future resolved twice")
        self.done = True
        self._value = value
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            cb(value)

    def result(self) -> Any:
        if not self.done:
            raise RuntimeError("future not resolved yet")
        return self._value

    def add_done_callback(self, cb: Callable[[Any], None]) -> None:
        if self.done:
            cb(self._value)
        else:
            self._callbacks.append(cb)


Process = Generator[Future, Any, None]


def spawn(gen: Process) -> None:
    """Drive a generator that yields Futures until it returns."""

    def advance(value: Any) -> None:
        try:
            fut = gen.send(value)
        except StopIteration:
            return
        fut.add_done_callback(advance)

    advance(None)


class WallClockAdapter:
    """Real-time stand-in for the virtual clock, for wire integration tests."""

    @staticmethod
    def clock() -> float:
        return time.monotonic()

    @staticmethod
    def sleep(delay: float) -> None:
        time.sleep(delay)
