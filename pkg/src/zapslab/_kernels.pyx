# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled periodic two-channel filter bank.

Both routines operate on the last axis of a C-contiguous ``(batch, n)``
float64 array; ``n`` must be even. Filters wrap around modulo ``n`` so the
transform stays orthonormal for any even length.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def analysis_periodic(const double[:, ::1] x, const double[::1] lo, const double[::1] hi):
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t half = n // 2
    cdef Py_ssize_t taps = lo.shape[0]
    cdef Py_ssize_t b, k, j, idx
    cdef double acc_lo, acc_hi, v
    approx = np.empty((batch, half), dtype=np.float64)
    detail = np.empty((batch, half), dtype=np.float64)
    cdef double[:, ::1] a = approx
    cdef double[:, ::1] d = detail
    with nogil:
        for b in range(batch):
            for k in range(half):
                acc_lo = 0.0
                acc_hi = 0.0
                idx = (2 * k) % n
                for j in range(taps):
                    v = x[b, idx]
                    acc_lo = acc_lo + lo[j] * v
                    acc_hi = acc_hi + hi[j] * v
                    idx = idx + 1
                    if idx == n:
                        idx = 0
                a[b, k] = acc_lo
                d[b, k] = acc_hi
    return approx, detail


def synthesis_periodic(const double[:, ::1] a, const double[:, ::1] d,
                       const double[::1] lo, const double[::1] hi):
    cdef Py_ssize_t batch = a.shape[0]
    cdef Py_ssize_t half = a.shape[1]
    cdef Py_ssize_t n = 2 * half
    cdef Py_ssize_t taps = lo.shape[0]
    cdef Py_ssize_t b, k, j, idx
    cdef double ak, dk
    out = np.zeros((batch, n), dtype=np.float64)
    cdef double[:, ::1] x = out
    with nogil:
        for b in range(batch):
            for k in range(half):
                ak = a[b, k]
                dk = d[b, k]
                idx = (2 * k) % n
                for j in range(taps):
                    x[b, idx] += lo[j] * ak + hi[j] * dk
                    idx = idx + 1
                    if idx == n:
                        idx = 0
    return out
