"""Independent reference computations used by several test modules.

The reference computations re-derive the model quantities from the scenario
directly. The sampling helpers at the end borrow the solver's scale estimate only
to place random points.
"""

from __future__ import annotations

import math

import numpy as np

from mecopt.inner_pd import DualPoint, _pack, min_latency, reference_energy
from mecopt.special_math import lambert_w0, lambert_w0p1

LN2 = math.log(2.0)


def link_params(s, scn, ch):
    """Per-user uplink/downlink coefficients, bit loads and minimum times."""
    rc = scn.radio
    s = np.asarray(s, dtype=float)
    a1 = rc.cap_gap_ul * ch.sigma1_sq / (rc.antennas * ch.gamma_hat)
    a2 = rc.cap_gap_dl * ch.sigma2_sq / (rc.antennas * ch.gamma_hat)
    k1 = s / (rc.pilot_overhead * rc.bandwidth)
    k2 = rc.output_ratio * s / rc.bandwidth
    # the time at which the power cap (user) or the full AP budget (downlink) is reached
    tu_lo = k1 / np.log2(1 + rc.ut_power_max / a1)
    td_lo = k2 / np.log2(1 + rc.ap_power / a2)
    return a1, a2, k1, k2, tu_lo, td_lo


def tx_energy(t, k, a):
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return np.where(t > 0, t * np.expm1(k / t * LN2) * a, np.where(k > 0, np.inf, 0.0))


def tx_energy_dt(t, k, a):
    x = k / t * LN2
    return a * (np.expm1(x) - x * np.exp(x))


def stationarity_residuals(alloc, dual, s, scn, ch, bound_tol=1e-12):
    """Relative residuals of the per-variable stationarity conditions of the Lagrangian.

    Variables at a box bound contribute the violated part of the sign condition
    (derivative must point out of the box) instead of the equality.
    Returns a dict of arrays, one entry per primal variable family.
    """
    cc = scn.compute
    w = cc.weight
    a1, a2, k1, k2, tu_lo, td_lo = link_params(s, scn, ch)
    s = np.asarray(s, float)
    q = scn.home_requests - s
    off = s > 0
    out = {}

    def resid(d, scale, x, lo, hi):
        r = np.abs(d) / scale
        at_lo = x <= lo * (1 + bound_tol)
        at_hi = x >= hi * (1 - bound_tol)
        r = np.where(at_lo & ~at_hi, np.maximum(-d, 0) / scale, r)
        r = np.where(at_hi & ~at_lo, np.maximum(d, 0) / scale, r)
        return np.where(at_lo & at_hi, 0.0, r)

    tu = np.where(off, alloc.t_u, 1.0)
    d_tx = (1 - w) * tx_energy_dt(tu, k1, a1)
    d = d_tx + dual.beta + dual.xi
    out["t_u"] = resid(d, np.abs(d_tx) + dual.beta + dual.xi, tu, tu_lo, cc.latency)[off]

    td = np.where(off, alloc.t_d, 1.0)
    d_tx = w * tx_energy_dt(td, k2, a2)
    d = d_tx + dual.phi
    out["t_d"] = resid(d, np.abs(d_tx) + dual.phi, td, td_lo, cc.latency)[off]

    fu = alloc.f_u
    loc = q > 0
    a = 2 * (1 - w) * cc.user_capacitance * cc.user_cycles * q * fu
    b = dual.xi * cc.user_cycles * q / fu**2
    out["f_u"] = resid(a - b, a + b, fu, cc.f_user_min, cc.f_user_max)[loc]

    fm = np.where(off, alloc.f_m, 1.0)
    a = 2 * w * cc.mec_capacitance * cc.mec_cycles * s * fm
    b = dual.theta * cc.mec_cycles * s / fm**2
    out["f_m"] = resid(a - b + dual.lambda5, a + b + dual.lambda5, fm, cc.f_mec_min, cc.f_mec_max)[off]
    return out


def single_user_energy(t_u, t_d, s, scn, ch):
    """Weighted energy of a one-user cell for times (t_u, t_d) with the cheapest feasible frequencies.

    Energy increases in both CPU speeds, so each frequency sits at the slowest
    value that still meets its deadline; infeasible points return inf.
    """
    cc = scn.compute
    w = cc.weight
    Td = cc.latency
    a1, a2, k1, k2, tu_lo, td_lo = (float(np.asarray(x)[0]) for x in link_params([s], scn, ch))
    q = float(scn.home_requests[0]) - s
    t_u = np.asarray(t_u, float)
    t_d = np.asarray(t_d, float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if q > 0:
            fu = np.maximum(cc.user_cycles * q / (Td - t_u), cc.f_user_min)
        else:
            fu = np.full_like(t_u, cc.f_user_min)
        fm = np.maximum(cc.mec_cycles * s / (Td - t_u - t_d), cc.f_mec_min)
        e = ((1 - w) * (tx_energy(t_u, k1, a1) + cc.user_capacitance * cc.user_cycles * q * fu**2)
             + w * (tx_energy(t_d, k2, a2) + cc.mec_capacitance * cc.mec_cycles * s * fm**2))
    ok = ((t_u >= tu_lo) & (t_d >= td_lo) & (t_u + t_d < Td) & (fu <= cc.f_user_max) & (fm <= cc.f_mec_max)
          & (Td - t_u > 0))
    return np.where(ok, e, np.inf)


def single_user_grid_search(s, scn, ch, n=201, rounds=12, shrink=0.25):
    """Refined brute-force minimum of :func:`single_user_energy` over (t_u, t_d)."""
    Td = scn.compute.latency
    _, _, _, _, tu_lo, td_lo = (float(np.asarray(x)[0]) for x in link_params([s], scn, ch))
    lo = np.array([tu_lo, td_lo])
    hi = np.array([Td, Td])
    box_lo, box_hi = lo.copy(), hi.copy()
    best_e, best_x = np.inf, None
    for _ in range(rounds):
        g1 = np.linspace(lo[0], hi[0], n)
        g2 = np.linspace(lo[1], hi[1], n)
        T1, T2 = np.meshgrid(g1, g2, indexing="ij")
        e = single_user_energy(T1, T2, s, scn, ch)
        i = np.unravel_index(np.argmin(e), e.shape)
        if e[i] < best_e:
            best_e, best_x = float(e[i]), np.array([T1[i], T2[i]])
        if not np.isfinite(best_e):
            break
        half = shrink * (hi - lo) / 2
        lo = np.maximum(best_x - half, box_lo)
        hi = np.minimum(best_x + half, box_hi)
    return best_e, best_x


def min_latency_bisection(s, scn, ch):
    """Shortest achievable T_total for split ``s`` found by bisection on the deadline."""
    cc = scn.compute
    s = np.asarray(s, float)
    q = scn.home_requests - s
    _, _, _, _, tu_lo, td_lo = link_params(s, scn, ch)
    off = s > 0

    def feasible(T):
        local = cc.user_cycles * q / cc.f_user_max
        if np.any(np.where(off, tu_lo, 0.0) + local > T):
            return False
        if not off.any():
            return True
        rest = T - tu_lo[off].max() - td_lo[off].max()
        if rest <= 0:
            return False
        need = np.maximum(cc.mec_cycles * s[off] / rest, cc.f_mec_min)
        return need.max() <= cc.f_mec_max and need.sum() <= cc.f_mec_max

    lo, hi = 0.0, 1.0
    while not feasible(hi):
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def random_dual(rng, s, scn, ch, spread=(-4, 3)):
    """Log-uniform multipliers around the natural energy-per-time scale of the instance."""
    pu, cst = _pack(s, scn, ch)
    k = len(s)
    ys = reference_energy(pu, cst) / scn.compute.latency

    def draw(m):
        return ys * 10 ** rng.uniform(*spread, m)

    lam5 = float(draw(1)[0]) * scn.compute.latency / scn.compute.f_mec_max
    return DualPoint(float(draw(1)[0]), draw(k), draw(k), draw(k), draw(k), lam5)


def feasible_split(rng, scn, ch, lo=0.05):
    for _ in range(100):
        s = scn.home_requests * rng.uniform(lo, 1.0, len(scn.home_requests))
        if min_latency(s, scn, ch) <= scn.compute.latency:
            return s
    raise RuntimeError("no feasible split found")


def w_identity_residual(x):
    w = lambert_w0(x)
    return abs(w * math.exp(w) - x) / max(abs(x), 1e-300)


def shifted_identity_residual(y):
    # v = 1 + W0((y-1)/e) solves (v - 1) e^v + 1 = y
    # evaluated in extended precision: the left side cancels badly in floats for small v
    import mpmath
    v = lambert_w0p1(y)
    if y == 0:
        return abs(v)
    with mpmath.workdps(40 + int(abs(math.log10(y)))):
        mv = mpmath.mpf(v)
        lhs = (mv - 1) * mpmath.exp(mv) + 1
        return float(abs(lhs - y) / y)
