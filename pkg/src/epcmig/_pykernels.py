"""Pure-Python implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``EPCMIG_PURE_PYTHON=1`` is set. Behaviour must match ``_ckernels`` exactly.
"""

import heapq


class EventHeap:
    """Min-heap of ``(time, seq, payload)`` ordered by ``(time, seq)``."""

    __slots__ = ("_heap",)

    def __init__(self):
        self._heap = []

    def push(self, time, seq, payload):
        heapq.heappush(self._heap, (time, seq, payload))

    def pop(self):
        if not self._heap:
            raise IndexError("pop from empty EventHeap")
        return heapq.heappop(self._heap)

    def peek_time(self):
        if not self._heap:
            raise IndexError("peek into empty EventHeap")
        return self._heap[0][0]

    def __len__(self):
        return len(self._heap)


def scan_probes(start, stop, interval, down_starts, down_ends):
    """Sample a fixed-interval probe stream against sorted outage windows.

    A probe sent at ``t`` is answered unless ``down_starts[i] <= t < down_ends[i]``
    for some ``i``. Probes are sent at ``start, start + interval, ...`` while
    ``t < stop``.

    Returns ``(sent, answered, runs)`` where ``runs`` lists every maximal run of
    unanswered probes as ``(first_missed, first_answered)``; ``first_answered``
    is ``-1`` when the stream ended before recovery.
    """
    if interval <= 0:
        raise ValueError("probe interval must be positive")
    n = len(down_starts)
    if len(down_ends) != n:
        raise ValueError("outage bounds differ in length")
    sent = 0
    answered = 0
    runs = []
    missing_since = -1
    i = 0
    t = start
    while t < stop:
        while i < n and down_ends[i] <= t:
            i += 1
        up = not (i < n and down_starts[i] <= t)
        sent += 1
        if up:
            answered += 1
            if missing_since >= 0:
                runs.append((missing_since, t))
                missing_since = -1
        elif missing_since < 0:
            missing_since = t
        t += interval
    if missing_since >= 0:
        runs.append((missing_since, -1))
    return sent, answered, runs
