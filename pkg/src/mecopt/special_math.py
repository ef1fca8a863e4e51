"""Principal-branch Lambert W and the positive cubic root used by the inner solver.

All kernels are numba-compiled scalar functions so the ellipsoid loop can call
them without leaving nopython mode. They are also callable from plain Python.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

INV_E = math.exp(-1.0)
_MAX_ITER = 50
_TOL = 1e-15
_HALLEY_LAST = 1e-6


@njit(cache=True)
def _shifted_h(v):
    # H(v) = (v - 1) e^v + 1; the series avoids cancellation near v = 0
    if abs(v) < 0.1:
        v2 = v * v
        return v2 * (0.5 + v * (1.0 / 3.0 + v * (1.0 / 8.0 + v * (1.0 / 30.0 + v * (
            1.0 / 144.0 + v * (1.0 / 840.0 + v * (1.0 / 5760.0 + v * (1.0 / 45360.0))))))))
    return (v - 1.0) * math.exp(v) + 1.0


@njit(cache=True)
def _w0_guess(x):
    if x < 3.0:
        return math.log1p(x)
    l1 = math.log(x)
    l2 = math.log(l1)
    return l1 - l2 + l2 / l1


@njit(cache=True)
def _w0_log_newton(lx):
    # large arguments: solve w + log(w) = log(x) to stay clear of overflow
    l2 = math.log(lx)
    w = lx - l2 + l2 / lx
    for _ in range(_MAX_ITER):
        step = (w + math.log(w) - lx) * w / (w + 1.0)
        w -= step
        if abs(step) <= _TOL * w:
            break
    return w


@njit(cache=True)
def lambert_w0p1(y):
    """Return 1 + W0((y - 1)/e) for y >= 0.

    Equivalently the root v >= 0 of (v - 1) e^v + 1 = y. Working with the shift
    keeps full relative precision when the argument of W0 sits near -1/e,
    which is where the optimal transmission times live for small multipliers.
    """
    if not (y >= 0.0):
        raise ValueError("lambert_w0p1: argument below the W0 branch point")
    if y == 0.0:
        return 0.0
    if math.isinf(y):
        return math.inf
    if y > 1e8:
        return 1.0 + _w0_log_newton(math.log(y - 1.0) - 1.0)
    if y < 1.0:
        p = math.sqrt(2.0 * y)
        v = p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 - p * 43.0 / 540.0)))
        if v <= 0.0:
            v = p
    else:
        v = 1.0 + _w0_guess((y - 1.0) * INV_E)
    for _ in range(_MAX_ITER):
        ev = math.exp(v)
        h = _shifted_h(v) if v < 0.1 else (v - 1.0) * ev + 1.0
        f = h - y
        d1 = v * ev
        d2 = (v + 1.0) * ev
        den = 2.0 * d1 * d1 - f * d2
        if den == 0.0:
            break
        step = 2.0 * f * d1 / den
        v_new = v - step
        if v_new <= 0.0:
            v_new = 0.5 * v
        # Halley converges cubically: after a step this small the error is below rounding
        if abs(v_new - v) <= _HALLEY_LAST * abs(v_new):
            v = v_new
            break
        v = v_new
    return v


@njit(cache=True)
def lambert_w0(x):
    """Principal branch W0(x) for x >= -1/e, via Halley iteration."""
    if x < -INV_E:
        # tolerate rounding of arguments that are -1/e in exact arithmetic
        if x < -INV_E * (1.0 + 4e-16):
            raise ValueError("lambert_w0: argument below -1/e")
        return -1.0
    if x == 0.0:
        return 0.0
    if x < -0.25:
        return lambert_w0p1(math.e * x + 1.0) - 1.0
    if math.isinf(x):
        return math.inf
    if x > 1e8:
        return _w0_log_newton(math.log(x))
    w = _w0_guess(x)
    for _ in range(_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        den = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / den
        w -= step
        if abs(step) <= _TOL * max(1.0, abs(w)):
            break
    return w


@dataclass(frozen=True)
class CubicCoeffs:
    """Coefficients of a*x**3 + b*x**2 + c*x + d."""

    a: float
    b: float
    c: float
    d: float


@njit(cache=True)
def _cubic(a, b, c, d, r):
    return ((a * r + b) * r + c) * r + d


@njit(cache=True)
def _convex_root(a, b, c, d):
    # b, c >= 0: the cubic is convex and increasing on r > 0. Each of the bounds
    # below drops a nonnegative term, so their minimum lies right of the root
    # and Newton descends monotonically onto it.
    r = (-d / a) ** (1.0 / 3.0)
    if b > 0.0:
        r = min(r, math.sqrt(-d / b))
    if c > 0.0:
        r = min(r, -d / c)
    for _ in range(100):
        fr = _cubic(a, b, c, d, r)
        if fr <= 0.0:
            return r
        r_new = r - fr / ((3.0 * a * r + 2.0 * b) * r + c)
        if r_new >= r * (1.0 - 4e-16):
            return r_new  # the step is down to rounding
        r = r_new
    return r


@njit(cache=True)
def cubic_positive_root(a, b, c, d):
    """Positive real root of a cubic with a > 0 and d <= 0 (unclamped).

    Safeguarded Newton inside a sign-change bracket; returns 0 when d == 0.
    """
    if not (a > 0.0) or d > 0.0:
        raise ValueError("cubic_positive_root: need a > 0 and d <= 0")
    if d == 0.0 and c >= 0.0 and b >= 0.0:
        return 0.0
    if b >= 0.0 and c >= 0.0:
        return _convex_root(a, b, c, d)
    lo = 0.0
    hi = (-d / a) ** (1.0 / 3.0) if d < 0.0 else 1.0
    if hi <= 0.0:
        hi = 1.0
    while _cubic(a, b, c, d, hi) < 0.0:
        lo = hi
        hi *= 2.0
    r = hi
    for _ in range(200):
        fr = _cubic(a, b, c, d, r)
        if fr == 0.0:
            return r
        if fr > 0.0:
            hi = r
        else:
            lo = r
        dfr = (3.0 * a * r + 2.0 * b) * r + c
        if dfr > 0.0:
            r_new = r - fr / dfr
        else:
            r_new = 0.5 * (lo + hi)
        if not (lo < r_new < hi):
            r_new = 0.5 * (lo + hi)
        if abs(r_new - r) <= 1e-16 * r_new:
            return r_new
        if hi - lo <= 4e-16 * hi:
            return r_new
        r = r_new
    return r


@njit(cache=True)
def cubic_root_clamped(a, b, c, d, lo, hi):
    if b >= 0.0 and c >= 0.0 and d < 0.0:
        # increasing on r > 0, so the sign at a bound settles a clamped answer
        if lo > 0.0 and _cubic(a, b, c, d, lo) >= 0.0:
            return lo
        if hi < math.inf and _cubic(a, b, c, d, hi) <= 0.0:
            return hi
    r = cubic_positive_root(a, b, c, d)
    if r < lo:
        return lo
    if r > hi:
        return hi
    return r


def solve_cubic_positive_root(coeffs: CubicCoeffs, bounds=(0.0, math.inf)) -> float:
    """Unique positive root of ``coeffs`` clamped into ``bounds``."""
    lo, hi = bounds
    return float(cubic_root_clamped(coeffs.a, coeffs.b, coeffs.c, coeffs.d, lo, hi))


def cubic_residual_scale(coeffs: CubicCoeffs, r: float) -> float:
    """Magnitude of the largest term of the cubic at ``r``; used for relative residuals."""
    return max(abs(coeffs.a * r**3), abs(coeffs.b * r**2), abs(coeffs.c * r), abs(coeffs.d))


lambert_w0_vec = np.vectorize(lambert_w0, otypes=[float])
