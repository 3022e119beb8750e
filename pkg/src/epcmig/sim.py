"""Deterministic discrete-event engine.

Time is an integer number of microseconds since scenario start. Events with
equal fire time run in scheduling order.
"""

import math
import random
from fractions import Fraction

from .errors import RunawayScenario, SimulationError
from .kernels import EventHeap

US_PER_S = 1_000_000
US_PER_MS = 1_000
MAX_EVENTS = 10**7


def seconds(value):
    """Convert seconds (int, float or Fraction) to integer microseconds, half up."""
    return math.floor(Fraction(value) * US_PER_S + Fraction(1, 2))


def to_seconds(us):
    return us / US_PER_S


class _Event:
    __slots__ = ("action", "target", "label")

    def __init__(self, action, target, label):
        self.action = action
        self.target = target
        self.label = label


class Simulator:
    """Single-threaded event loop with a virtual microsecond clock.

    ``trace`` may be a list; when given, every executed event appends a
    ``(time_us, seq, entity, action)`` tuple to it.
    """

    def __init__(self, seed=0, max_events=MAX_EVENTS, trace=None):
        self._heap = EventHeap()
        self._now = 0
        self._seq = 0
        self._cancelled = set()
        self._executed = 0
        self.max_events = max_events
        self.trace = trace
        self.seed = seed
        self.rng = random.Random(seed)

    @property
    def now(self):
        return self._now

    @property
    def executed(self):
        return self._executed

    def schedule(self, action, delay=0, target="", label=None):
        """Run ``action()`` after ``delay`` microseconds; returns the event id."""
        if delay < 0:
            raise SimulationError(f"negative delay {delay}")
        return self._push(self._now + int(delay), action, target, label)

    def schedule_at(self, time, action, target="", label=None):
        if time < self._now:
            raise SimulationError(f"cannot schedule at {time} before now={self._now}")
        return self._push(int(time), action, target, label)

    def _push(self, time, action, target, label):
        seq = self._seq
        self._seq += 1
        if label is None:
            label = getattr(action, "__name__", "event")
        self._heap.push(time, seq, _Event(action, target, label))
        return seq

    def cancel(self, event_id):
        self._cancelled.add(event_id)

    def pending(self):
        return len(self._heap)

    def _drop_cancelled(self):
        while len(self._heap):
            time, seq, ev = self._heap.pop()
            if seq not in self._cancelled:
                self._heap.push(time, seq, ev)
                return
            self._cancelled.discard(seq)

    def step(self):
        """Execute the next event. Returns False when the queue is empty."""
        while len(self._heap):
            time, seq, ev = self._heap.pop()
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            self._executed += 1
            if self._executed > self.max_events:
                raise RunawayScenario(f"event cap of {self.max_events} exceeded at t={time}us")
            self._now = time
            if self.trace is not None:
                self.trace.append((time, seq, ev.target, ev.label))
            ev.action()
            return True
        return False

    def run_to_completion(self):
        while self.step():
            pass
        return self._now

    def run_until(self, time):
        """Execute events with fire time <= ``time`` and advance the clock to it."""
        while True:
            self._drop_cancelled()
            if not len(self._heap) or self._heap.peek_time() > time:
                break
            self.step()
        if time > self._now:
            self._now = time
        return self._now


def format_event_trace(trace):
    return "".join(f"{t}\t{s}\t{e}\t{a}\n" for t, s, e, a in trace)
