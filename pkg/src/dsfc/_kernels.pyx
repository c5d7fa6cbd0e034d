# cython: language_level=3
"""Compiled per-block kernels.

Same contracts as ``_kernels_py``: exact integer results on int64 arrays.
Sums that might overflow a signed 64-bit accumulator return through the
Python fallback instead of wrapping.
"""

import numpy as np

from . import _kernels_py

BACKEND = "cython"

DEF SAFE_LIMIT = 4503599627370496  # 2**52


def abs_error_sum(x, y):
    # The overflow guard lives in a separate max-scan pass: a branch that can
    # return a Python object from inside the accumulation loop blocks SIMD
    # vectorization and costs ~20x at large blocks.
    cdef long long[::1] xs = np.ascontiguousarray(x, dtype=np.int64)
    cdef long long[::1] ys = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef long long acc = 0, d, worst = 0
    for i in range(n):
        d = xs[i] - ys[i]
        if d < 0:
            d = -d
        if d > worst:
            worst = d
    if n > 0 and worst > SAFE_LIMIT // n:
        return _kernels_py.abs_error_sum(np.asarray(x), np.asarray(y))
    for i in range(n):
        d = xs[i] - ys[i]
        if d < 0:
            d = -d
        acc += d
    return acc


def clipped_error_sum(x, y, cap):
    cdef long long[::1] xs = np.ascontiguousarray(x, dtype=np.int64)
    cdef long long[::1] ys = np.ascontiguousarray(y, dtype=np.int64)
    cdef long long c = cap
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef long long acc = 0, d
    for i in range(n):
        d = xs[i] - ys[i]
        if d < 0:
            d = -d
        if d > c:
            d = c
        acc += d
    return acc


def truncate_overflow(x, k):
    cdef long long[::1] xs = np.ascontiguousarray(x, dtype=np.int64)
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef long long kk = k
    head_arr = np.empty(n, dtype=np.int64)
    over_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] head = head_arr
    cdef long long[::1] over = over_arr
    for i in range(n):
        if xs[i] <= kk:
            head[i] = xs[i]
            over[i] = 1
        else:
            head[i] = kk + 1
            over[i] = xs[i]
    return head_arr, over_arr


def grid_quantize(head, r, k):
    cdef long long[::1] hs = np.ascontiguousarray(head, dtype=np.int64)
    cdef Py_ssize_t i, n = hs.shape[0]
    cdef long long width = 2 * r + 1, kk = k, rr = r, c, p
    cells_arr = np.empty(n, dtype=np.int64)
    protos_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] cells = cells_arr
    cdef long long[::1] protos = protos_arr
    for i in range(n):
        c = (hs[i] - 1) // width
        p = 1 + c * width + rr
        if p > kk + 1:
            p = kk + 1
        cells[i] = c
        protos[i] = p
    return cells_arr, protos_arr
