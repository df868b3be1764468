# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the hot numeric kernels in _kernels_py.

Same formulas as the pure-Python backend; scalar loops over libc erf/exp
replace the vectorized numpy expressions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, erfc, exp, sqrt

cnp.import_array()

BACKEND = "compiled"

cdef double SQRT_2_OVER_PI = sqrt(2.0 / np.pi)


cdef inline double _f1cdf(double x) nogil:
    if x <= 0.0:
        return 0.0
    return erf(sqrt(0.5 * x))


cdef inline double _f1sf(double x) nogil:
    if x <= 0.0:
        return 1.0
    return erfc(sqrt(0.5 * x))


cdef inline double _f2cdf(double x) nogil:
    if x <= 0.0:
        return 0.0
    return 1.0 - exp(-0.5 * x)


cdef inline double _f3cdf(double x) nogil:
    if x <= 0.0:
        return 0.0
    return erf(sqrt(0.5 * x)) - SQRT_2_OVER_PI * sqrt(x) * exp(-0.5 * x)


cdef inline double _f3sf(double x) nogil:
    if x <= 0.0:
        return 1.0
    return erfc(sqrt(0.5 * x)) + SQRT_2_OVER_PI * sqrt(x) * exp(-0.5 * x)


def _apply(fun_id, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(x.shape, dtype=np.float64)
    cdef double[::1] xv = x.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef int fid = fun_id
    with nogil:
        for i in range(n):
            if fid == 0:
                ov[i] = _f1cdf(xv[i])
            elif fid == 1:
                ov[i] = _f1sf(xv[i])
            elif fid == 2:
                ov[i] = _f2cdf(xv[i])
            elif fid == 3:
                ov[i] = exp(-0.5 * xv[i]) if xv[i] > 0.0 else 1.0
            elif fid == 4:
                ov[i] = _f3cdf(xv[i])
            else:
                ov[i] = _f3sf(xv[i])
    return out


def f1cdf(x):
    return _apply(0, x)


def f1sf(x):
    return _apply(1, x)


def f2cdf(x):
    return _apply(2, x)


def f2sf(x):
    return _apply(3, x)


def f3cdf(x):
    return _apply(4, x)


def f3sf(x):
    return _apply(5, x)


def g1(t, v, sin2, cw):
    """Partial convolution G1(t, v) = int_0^t f1(x) F1(v - x) dx, elementwise."""
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t, v = np.broadcast_arrays(t, v)
    t = np.ascontiguousarray(t)
    v = np.ascontiguousarray(v)
    out = np.empty(t.shape, dtype=np.float64)
    cdef double[::1] tv = t.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef double[::1] s2 = np.ascontiguousarray(sin2, dtype=np.float64)
    cdef double[::1] wq = np.ascontiguousarray(cw, dtype=np.float64)
    cdef Py_ssize_t i, q, n = tv.shape[0], nq = s2.shape[0]
    cdef double ti, vi, x, acc
    with nogil:
        for i in range(n):
            vi = vv[i]
            ti = tv[i]
            if vi < 0.0:
                vi = 0.0
            if ti > vi:
                ti = vi
            if ti <= 0.0:
                ov[i] = 0.0
                continue
            acc = 0.0
            for q in range(nq):
                x = ti * s2[q]
                acc += wq[q] * exp(-0.5 * x) * _f1cdf(vi - x)
            ov[i] = SQRT_2_OVER_PI * sqrt(ti) * acc
    return out


def scan_max(z2, trips):
    """Per-row maximum of triplet sums (see _kernels_py.scan_max)."""
    z2 = np.ascontiguousarray(z2, dtype=np.float64)
    trips = np.ascontiguousarray(trips, dtype=np.int64)
    out = np.empty(z2.shape[0], dtype=np.float64)
    cdef double[:, ::1] zv = z2
    cdef cnp.int64_t[:, ::1] tv = trips
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j, n = z2.shape[0], b = trips.shape[0]
    cdef double best, s
    with nogil:
        for i in range(n):
            best = -1.0
            for j in range(b):
                s = zv[i, tv[j, 0]] + zv[i, tv[j, 1]] + zv[i, tv[j, 2]]
                if s > best:
                    best = s
            ov[i] = best
    return out
