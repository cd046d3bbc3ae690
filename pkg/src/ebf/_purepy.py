"""Pure-Python/numpy twins of the compiled loops in ``_speedups.pyx``."""

from __future__ import annotations

import heapq

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def fifo_schedule(arrivals, services, servers: int):
    arrivals = np.ascontiguousarray(arrivals, dtype=np.int64)
    services = np.ascontiguousarray(services, dtype=np.int64)
    if len(arrivals) != len(services):
        raise ValueError("arrivals and services differ in length")
    if servers < 1:
        raise ValueError("servers must be >= 1")
    n = len(arrivals)
    starts = [0] * n
    ends = [0] * n
    arr = arrivals.tolist()
    svc = services.tolist()
    if servers == 1:
        free = 0
        for i in range(n):
            s = arr[i] if arr[i] > free else free
            starts[i] = s
            free = ends[i] = s + svc[i]
    else:
        free_at = [0] * servers
        for i in range(n):
            earliest = free_at[0]
            s = arr[i] if arr[i] > earliest else earliest
            starts[i] = s
            ends[i] = s + svc[i]
            heapq.heapreplace(free_at, ends[i])
    return np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64)


def _windows(x, kh, kw, stride):
    H, W = x.shape
    if kh > H or kw > W or stride < 1:
        raise ValueError("kernel larger than input or bad stride")
    return sliding_window_view(np.asarray(x, dtype=np.float64), (kh, kw))[::stride, ::stride]


def conv2d_valid(x, w, stride: int):
    win = _windows(x, w.shape[0], w.shape[1], stride)
    return np.einsum("ijab,ab->ij", win, np.asarray(w, dtype=np.float64))


def pool2d(x, k: int, stride: int, average: bool):
    if k < 1:
        raise ValueError("window must be >= 1")
    win = _windows(x, k, k, stride)
    return win.mean(axis=(2, 3)) if average else win.max(axis=(2, 3))
