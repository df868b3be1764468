"""Pure-Python (numpy) implementations of the hot numeric kernels.

This module mirrors the surface of the compiled ``_kernels`` extension; the
active backend is chosen in ``_backend``.  All functions are elementwise
over float64 arrays unless stated otherwise.

Chi-square shorthand used throughout the scan-bound machinery:

    f1   density of chi-square(1)
    F1   CDF of chi-square(1)  = erf(sqrt(x/2))
    F2   CDF of chi-square(2)  = 1 - exp(-x/2)
    F3   CDF of chi-square(3)  = F1(x) - sqrt(2x/pi) exp(-x/2)
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, erfc

BACKEND = "python"

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def f1cdf(x):
    """Chi-square(1) CDF, elementwise; negative inputs clip to 0."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return erf(np.sqrt(0.5 * x))


def f1sf(x):
    """Chi-square(1) survival function with full tail precision."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return erfc(np.sqrt(0.5 * x))


def f2cdf(x):
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return -np.expm1(-0.5 * x)


def f2sf(x):
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return np.exp(-0.5 * x)


def f3cdf(x):
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return erf(np.sqrt(0.5 * x)) - _SQRT_2_OVER_PI * np.sqrt(x) * np.exp(-0.5 * x)


def f3sf(x):
    """Chi-square(3) survival function with full tail precision."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return erfc(np.sqrt(0.5 * x)) + _SQRT_2_OVER_PI * np.sqrt(x) * np.exp(-0.5 * x)


def g1(t, v, sin2, cw):
    """Partial convolution G1(t, v) = int_0^t f1(x) F1(v - x) dx, elementwise.

    Evaluated with the x = t sin^2(psi) substitution on fixed Gauss-Legendre
    nodes: ``sin2`` holds sin^2(psi_q) and ``cw`` holds cos(psi_q) times the
    quadrature weight over [0, pi/2].  Exact boundary: G1(v, v) = F2(v).
    """
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t, v = np.broadcast_arrays(t, v)
    tc = np.clip(t, 0.0, np.maximum(v, 0.0))
    out = np.empty(tc.shape, dtype=np.float64)
    flat_t = tc.reshape(-1)
    flat_v = np.broadcast_to(v, tc.shape).reshape(-1)
    flat_o = out.reshape(-1)
    chunk = 1 << 16
    for start in range(0, flat_t.size, chunk):
        tt = flat_t[start:start + chunk, None]
        vv = flat_v[start:start + chunk, None]
        x = tt * sin2
        vals = np.exp(-0.5 * x) * erf(np.sqrt(np.maximum(0.5 * (vv - x), 0.0)))
        flat_o[start:start + chunk] = (
            _SQRT_2_OVER_PI * np.sqrt(tt[:, 0]) * (vals @ cw))
    return out


def scan_max(z2, trips):
    """Per-row maximum of triplet sums.

    z2:    (n_draws, n_nodes) chi-square(1) values.
    trips: (b, 3) int64 node indices.
    Returns the (n_draws,) vector of max_i sum over trips[i].
    """
    z2 = np.ascontiguousarray(z2, dtype=np.float64)
    trips = np.asarray(trips, dtype=np.int64)
    sums = z2[:, trips[:, 0]] + z2[:, trips[:, 1]] + z2[:, trips[:, 2]]
    return sums.max(axis=1)
