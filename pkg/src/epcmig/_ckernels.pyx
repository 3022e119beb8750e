# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels: the event heap and the probe-stream sampler."""

from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, realloc, free


cdef inline bint _less(int64_t ta, int64_t sa, int64_t tb, int64_t sb) nogil:
    return ta < tb or (ta == tb and sa < sb)


cdef class EventHeap:
    """Min-heap of ``(time, seq, payload)`` ordered by ``(time, seq)``."""

    cdef int64_t* _time
    cdef int64_t* _seq
    cdef Py_ssize_t* _slot
    cdef Py_ssize_t _n
    cdef Py_ssize_t _cap
    cdef list _payloads
    cdef list _free

    def __cinit__(self):
        self._cap = 64
        self._n = 0
        self._time = <int64_t*>malloc(self._cap * sizeof(int64_t))
        self._seq = <int64_t*>malloc(self._cap * sizeof(int64_t))
        self._slot = <Py_ssize_t*>malloc(self._cap * sizeof(Py_ssize_t))
        if not self._time or not self._seq or not self._slot:
            raise MemoryError()
        self._payloads = []
        self._free = []

    def __dealloc__(self):
        free(self._time)
        free(self._seq)
        free(self._slot)

    cdef void _grow(self) except *:
        cdef Py_ssize_t cap = self._cap * 2
        cdef int64_t* t = <int64_t*>realloc(self._time, cap * sizeof(int64_t))
        if not t:
            raise MemoryError()
        self._time = t
        cdef int64_t* s = <int64_t*>realloc(self._seq, cap * sizeof(int64_t))
        if not s:
            raise MemoryError()
        self._seq = s
        cdef Py_ssize_t* sl = <Py_ssize_t*>realloc(self._slot, cap * sizeof(Py_ssize_t))
        if not sl:
            raise MemoryError()
        self._slot = sl
        self._cap = cap

    def push(self, int64_t time, int64_t seq, payload):
        cdef Py_ssize_t slot
        if self._free:
            slot = self._free.pop()
            self._payloads[slot] = payload
        else:
            slot = len(self._payloads)
            self._payloads.append(payload)
        if self._n == self._cap:
            self._grow()
        cdef Py_ssize_t i = self._n
        cdef Py_ssize_t parent
        self._n += 1
        while i > 0:
            parent = (i - 1) >> 1
            if _less(time, seq, self._time[parent], self._seq[parent]):
                self._time[i] = self._time[parent]
                self._seq[i] = self._seq[parent]
                self._slot[i] = self._slot[parent]
                i = parent
            else:
                break
        self._time[i] = time
        self._seq[i] = seq
        self._slot[i] = slot

    def pop(self):
        if self._n == 0:
            raise IndexError("pop from empty EventHeap")
        cdef int64_t rt = self._time[0]
        cdef int64_t rs = self._seq[0]
        cdef Py_ssize_t rslot = self._slot[0]
        self._n -= 1
        cdef Py_ssize_t n = self._n
        cdef int64_t lt, ls
        cdef Py_ssize_t lslot, i, child
        if n > 0:
            lt = self._time[n]
            ls = self._seq[n]
            lslot = self._slot[n]
            i = 0
            while True:
                child = 2 * i + 1
                if child >= n:
                    break
                if child + 1 < n and _less(self._time[child + 1], self._seq[child + 1],
                                           self._time[child], self._seq[child]):
                    child += 1
                if _less(self._time[child], self._seq[child], lt, ls):
                    self._time[i] = self._time[child]
                    self._seq[i] = self._seq[child]
                    self._slot[i] = self._slot[child]
                    i = child
                else:
                    break
            self._time[i] = lt
            self._seq[i] = ls
            self._slot[i] = lslot
        payload = self._payloads[rslot]
        self._payloads[rslot] = None
        self._free.append(rslot)
        return (rt, rs, payload)

    def peek_time(self):
        if self._n == 0:
            raise IndexError("peek into empty EventHeap")
        return self._time[0]

    def __len__(self):
        return self._n


def scan_probes(int64_t start, int64_t stop, int64_t interval, down_starts, down_ends):
    """Sample a fixed-interval probe stream against sorted outage windows.

    Same contract as ``_pykernels.scan_probes``.
    """
    if interval <= 0:
        raise ValueError("probe interval must be positive")
    cdef Py_ssize_t n = len(down_starts)
    if len(down_ends) != n:
        raise ValueError("outage bounds differ in length")
    cdef int64_t* ds = <int64_t*>malloc((n + 1) * sizeof(int64_t))
    cdef int64_t* de = <int64_t*>malloc((n + 1) * sizeof(int64_t))
    if not ds or not de:
        free(ds)
        free(de)
        raise MemoryError()
    cdef Py_ssize_t k
    for k in range(n):
        ds[k] = down_starts[k]
        de[k] = down_ends[k]
    cdef int64_t sent = 0
    cdef int64_t answered = 0
    cdef int64_t missing_since = -1
    cdef Py_ssize_t i = 0
    cdef int64_t t = start
    cdef bint up
    runs = []
    try:
        while t < stop:
            while i < n and de[i] <= t:
                i += 1
            up = not (i < n and ds[i] <= t)
            sent += 1
            if up:
                answered += 1
                if missing_since >= 0:
                    runs.append((missing_since, t))
                    missing_since = -1
            elif missing_since < 0:
                missing_since = t
            t += interval
    finally:
        free(ds)
        free(de)
    if missing_since >= 0:
        runs.append((missing_since, -1))
    return sent, answered, runs
