# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. ``ebf._purepy`` holds the semantic twins."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline void _sift_down(i64* heap, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i = 0, c
    cdef i64 tmp
    while True:
        c = 2 * i + 1
        if c >= n:
            return
        if c + 1 < n and heap[c + 1] < heap[c]:
            c += 1
        if heap[i] <= heap[c]:
            return
        tmp = heap[i]
        heap[i] = heap[c]
        heap[c] = tmp
        i = c


def fifo_schedule(const i64[::1] arrivals, const i64[::1] services, int servers):
    """Start/end times of FIFO jobs on ``servers`` identical servers.

    ``arrivals`` must already be in service order (non-decreasing).
    """
    cdef Py_ssize_t n = arrivals.shape[0], i
    if services.shape[0] != n:
        raise ValueError("arrivals and services differ in length")
    if servers < 1:
        raise ValueError("servers must be >= 1")
    starts_arr = np.empty(n, dtype=np.int64)
    ends_arr = np.empty(n, dtype=np.int64)
    cdef i64[::1] starts = starts_arr
    cdef i64[::1] ends = ends_arr
    free_arr = np.zeros(servers, dtype=np.int64)
    cdef i64[::1] free = free_arr
    cdef i64 s
    with nogil:
        for i in range(n):
            # free[0] is the earliest time any server frees up.
            s = arrivals[i] if arrivals[i] > free[0] else free[0]
            starts[i] = s
            ends[i] = s + services[i]
            free[0] = ends[i]
            _sift_down(&free[0], servers)
    return starts_arr, ends_arr


def conv2d_valid(const float[:, ::1] x, const float[:, ::1] w, int stride):
    """Single-channel valid cross-correlation, float64 accumulation."""
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1], kh = w.shape[0], kw = w.shape[1]
    if kh > H or kw > W or stride < 1:
        raise ValueError("kernel larger than input or bad stride")
    cdef Py_ssize_t oh = (H - kh) // stride + 1, ow = (W - kw) // stride + 1
    out_arr = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, a, b
    cdef double acc
    with nogil:
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        acc += <double>x[i * stride + a, j * stride + b] * <double>w[a, b]
                out[i, j] = acc
    return out_arr


def pool2d(const float[:, ::1] x, int k, int stride, bint average):
    """Valid max (or average) pooling over ``k`` x ``k`` windows."""
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1]
    if k > H or k > W or k < 1 or stride < 1:
        raise ValueError("window larger than input or bad stride")
    cdef Py_ssize_t oh = (H - k) // stride + 1, ow = (W - k) // stride + 1
    out_arr = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, a, b
    cdef double acc, v
    with nogil:
        for i in range(oh):
            for j in range(ow):
                if average:
                    acc = 0.0
                    for a in range(k):
                        for b in range(k):
                            acc += x[i * stride + a, j * stride + b]
                    out[i, j] = acc / (k * k)
                else:
                    acc = x[i * stride, j * stride]
                    for a in range(k):
                        for b in range(k):
                            v = x[i * stride + a, j * stride + b]
                            if v > acc:
                                acc = v
                    out[i, j] = acc
    return out_arr
