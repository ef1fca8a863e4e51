"""Inner primal-dual solver: fixed offloaded bits, ellipsoid ascent on the dual.

For a fixed split ``s`` the remaining problem over times and CPU frequencies is
convex. Its Lagrangian separates per user, so every dual point gives the
primal minimizer in closed form (Lambert W for the transmission times, a cube
root for the local frequency, a cubic for the MEC frequency). The dual
function is maximized over the nonnegative orthant with the ellipsoid method.

Dual vector layout (length 4K+2)::

    [lambda1, beta_1..K, xi_1..K, theta_1..K, phi_1..K, lambda5]

``lambda1`` prices the total-latency constraint, ``beta``/``theta``/``phi`` the
per-phase budgets, ``xi`` the per-user offload-plus-local deadline and
``lambda5`` the MEC frequency budget. With pinned frequencies ``lambda5`` is
dropped.

Besides the constraints that are dualized, each variable lives in a box that
is kept implicit: ``t_u`` between the time at maximum user power and ``T_d``,
``t_d`` between the time at full AP power and ``T_d``, the CPU frequencies in
their hardware ranges and ``T_j`` in ``[0, T_d]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .phymodel import LN2, Allocation, evaluate
from .scenario import ChannelRealization, NetworkScenario
from .special_math import cubic_root_clamped, lambert_w0p1

# rows of the per-user parameter block
S, Q, A1, A2, K1, K2, TU_LO, TD_LO, FU_FIX, FM_FIX = range(10)
# entries of the constant vector
W, KAP_U, CYC_U, KAP_M, CYC_M, FU_MIN, FU_MAX, FM_MIN, FM_MAX, TD, FM_TOTAL, PINNED = range(12)

STATUS = ("converged", "iteration-cap", "infeasible-cut-stall", "latency-infeasible", "numerical")
_CUTS = {"shallow": 0, "central": 1, "deep": 2}
MIN_BITS = 1e-6


# --------------------------------------------------------------------------- kernels

@njit(cache=True)
def _primal_kernel(y, pu, cst, tu, td, fu, fm):
    k = pu.shape[1]
    w = cst[W]
    lam5 = y[4 * k + 1] if cst[PINNED] == 0.0 else 0.0
    for i in range(k):
        beta = y[1 + i]
        xi = y[1 + k + i]
        theta = y[1 + 2 * k + i]
        phi = y[1 + 3 * k + i]
        s = pu[S, i]
        q = pu[Q, i]
        if cst[PINNED] != 0.0:
            fu[i] = pu[FU_FIX, i]
        elif q > 0.0:
            f = (xi / (2.0 * (1.0 - w) * cst[KAP_U])) ** (1.0 / 3.0)
            fu[i] = min(max(f, cst[FU_MIN]), cst[FU_MAX])
        else:
            fu[i] = cst[FU_MIN]
        if s <= 0.0:
            tu[i] = 0.0
            td[i] = 0.0
            fm[i] = 0.0
            continue
        v = lambert_w0p1((beta + xi) / ((1.0 - w) * pu[A1, i]))
        t = pu[K1, i] * LN2 / v if v > 0.0 else math.inf
        tu[i] = min(max(t, pu[TU_LO, i]), cst[TD])
        v = lambert_w0p1(phi / (w * pu[A2, i]))
        t = pu[K2, i] * LN2 / v if v > 0.0 else math.inf
        td[i] = min(max(t, pu[TD_LO, i]), cst[TD])
        if cst[PINNED] != 0.0:
            fm[i] = pu[FM_FIX, i]
        else:
            a = 2.0 * w * cst[KAP_M] * cst[CYC_M] * s
            fm[i] = cubic_root_clamped(a, lam5, 0.0, -theta * cst[CYC_M] * s, cst[FM_MIN], cst[FM_MAX])


@njit(cache=True)
def _tx_energy(t, k, a):
    # t (2^(k/t) - 1) a with the convention 0 at t = 0 (nothing sent)
    if t <= 0.0:
        return 0.0
    return t * math.expm1(k / t * LN2) * a


@njit(cache=True)
def _energy(pu, cst, tu, td, fu, fm):
    k = pu.shape[1]
    w = cst[W]
    eu = 0.0
    em = 0.0
    for i in range(k):
        eu += _tx_energy(tu[i], pu[K1, i], pu[A1, i]) + cst[KAP_U] * cst[CYC_U] * pu[Q, i] * fu[i] ** 2
        if pu[S, i] > 0.0:
            em += _tx_energy(td[i], pu[K2, i], pu[A2, i]) + cst[KAP_M] * cst[CYC_M] * pu[S, i] * fm[i] ** 2
    return (1.0 - w) * eu + w * em


@njit(cache=True)
def _slacks(pu, cst, tu, td, fu, fm, T1, T2, T3, out):
    """Constraint values (<= 0 when satisfied) in dual-vector order."""
    k = pu.shape[1]
    Td = cst[TD]
    out[0] = T1 + T2 + T3 - Td
    fsum = 0.0
    for i in range(k):
        s = pu[S, i]
        out[1 + i] = tu[i] - T1
        loc = cst[CYC_U] * pu[Q, i] / fu[i] if pu[Q, i] > 0.0 else 0.0
        out[1 + k + i] = loc + tu[i] - Td
        out[1 + 2 * k + i] = (cst[CYC_M] * s / fm[i] if s > 0.0 else 0.0) - T2
        out[1 + 3 * k + i] = td[i] - T3
        if s > 0.0:
            fsum += fm[i]
    if out.shape[0] > 4 * k + 1:
        out[4 * k + 1] = fsum - cst[FM_TOTAL]


@njit(cache=True)
def _lagrangian(y, pu, cst, tu, td, fu, fm, slack):
    """Dual function value and supergradient at ``y`` (primal minimizer written to the buffers)."""
    k = pu.shape[1]
    Td = cst[TD]
    _primal_kernel(y, pu, cst, tu, td, fu, fm)
    sb = 0.0
    st = 0.0
    sp = 0.0
    for i in range(k):
        sb += y[1 + i]
        st += y[1 + 2 * k + i]
        sp += y[1 + 3 * k + i]
    T1 = Td if y[0] - sb < 0.0 else 0.0
    T2 = Td if y[0] - st < 0.0 else 0.0
    T3 = Td if y[0] - sp < 0.0 else 0.0
    _slacks(pu, cst, tu, td, fu, fm, T1, T2, T3, slack)
    val = _energy(pu, cst, tu, td, fu, fm)
    for j in range(slack.shape[0]):
        val += y[j] * slack[j]
    return val


@njit(cache=True)
def _repair(pu, cst, tu, td, fu, fm):
    """Make a recovered primal point feasible in place; returns its objective (inf if impossible)."""
    k = pu.shape[1]
    Td = cst[TD]
    cyc_m = cst[CYC_M]
    pinned = cst[PINNED] != 0.0
    fsum = 0.0
    for i in range(k):
        if pu[S, i] > 0.0:
            fsum += fm[i]
    if not pinned and fsum > cst[FM_TOTAL]:
        for i in range(k):
            if pu[S, i] > 0.0:
                fm[i] = max(fm[i] * cst[FM_TOTAL] / fsum, cst[FM_MIN])
    T1 = 0.0
    T2 = 0.0
    T3 = 0.0
    T1lo = 0.0
    T3lo = 0.0
    for i in range(k):
        if pu[S, i] > 0.0:
            T1 = max(T1, tu[i])
            T3 = max(T3, td[i])
            T2 = max(T2, cyc_m * pu[S, i] / fm[i])
            T1lo = max(T1lo, pu[TU_LO, i])
            T3lo = max(T3lo, pu[TD_LO, i])
    if T1 + T2 + T3 > Td:
        budget = Td - T2
        if budget < T1lo + T3lo:
            if pinned:
                return math.inf
            T2 = Td - T1lo - T3lo
            if T2 <= 0.0:
                return math.inf
            fsum = 0.0
            for i in range(k):
                if pu[S, i] > 0.0:
                    fm[i] = max(fm[i], cyc_m * pu[S, i] / T2)
                    if fm[i] > cst[FM_MAX]:
                        return math.inf
                    fsum += fm[i]
            if fsum > cst[FM_TOTAL] * (1.0 + 1e-12):
                return math.inf
            budget = Td - T2
        excess = T1 - T1lo + T3 - T3lo
        rho = (budget - T1lo - T3lo) / excess if excess > 0.0 else 0.0
        rho = min(max(rho, 0.0), 1.0)
        n1 = T1lo + (T1 - T1lo) * rho
        n3 = T3lo + (T3 - T3lo) * rho
        for i in range(k):
            tu[i] = min(tu[i], n1)
            td[i] = min(td[i], n3)
    for i in range(k):
        q = pu[Q, i]
        if q <= 0.0:
            if tu[i] > Td:
                return math.inf
            continue
        room = Td - tu[i]
        need = cst[CYC_U] * q / room if room > 0.0 else math.inf
        if need <= fu[i]:
            continue
        if need <= cst[FU_MAX] and not pinned:
            fu[i] = need
            continue
        # local part too slow: shorten the upload instead
        fcap = fu[i] if pinned else cst[FU_MAX]
        fu[i] = fcap
        t_new = Td - cst[CYC_U] * q / fcap
        if pu[S, i] > 0.0:
            if t_new < pu[TU_LO, i] * (1.0 - 1e-12):
                return math.inf
            tu[i] = min(tu[i], t_new)
        elif t_new < 0.0:
            return math.inf
    return _energy(pu, cst, tu, td, fu, fm)


@njit(cache=True)
def _free_logdet(P, free):
    """log det of the principal submatrix on ``free`` (Cholesky; -inf if not positive definite)."""
    idx = np.flatnonzero(free)
    m = idx.shape[0]
    L = np.zeros((m, m))
    out = 0.0
    for a in range(m):
        for b in range(a + 1):
            acc = P[idx[a], idx[b]]
            for j in range(b):
                acc -= L[a, j] * L[b, j]
            if a == b:
                if acc <= 0.0:
                    return -math.inf
                L[a, a] = math.sqrt(acc)
                out += math.log(acc)
            else:
                L[a, b] = acc / L[b, b]
    return out


@njit(cache=True)
def _ellipsoid_kernel(pu, cst, yscale, unit, z0, radius, eps2, max_iter, cut_mode,
                      gap_tol, check_every, e_ref, trace_best, trace_vol, alpha_cap, pin_width):
    n = z0.shape[0]
    k = pu.shape[1]
    c = z0.copy()
    # the shape matrix is kept factored, P = J J', so it stays positive semidefinite
    J = np.eye(n) * radius
    P = np.empty((n, n))
    free = np.ones(n, dtype=np.bool_)
    m = n
    logdet = 2.0 * n * math.log(radius)
    y = np.empty(n)
    h = np.empty(n)
    tu = np.empty(k)
    td = np.empty(k)
    fu = np.empty(k)
    fm = np.empty(k)
    cp = np.empty(n)
    gt = np.empty(n)
    Ph = np.empty(n)
    pj = np.empty(n)
    diagP = np.empty(n)
    rtu = np.empty(k)
    rtd = np.empty(k)
    rfu = np.empty(k)
    rfm = np.empty(k)
    best_tu = np.zeros(k)
    best_td = np.zeros(k)
    best_fu = np.zeros(k)
    best_fm = np.zeros(k)
    ub_tu = np.zeros(k)
    ub_td = np.zeros(k)
    ub_fu = np.zeros(k)
    ub_fm = np.zeros(k)
    best_z = c.copy()
    best_g = -math.inf
    ub = math.inf
    status = 1
    coord_run = 0
    stall_cap = 10 * n * n
    it = 0
    vol = radius
    for it in range(max_iter):
        for j in range(n):
            acc = 0.0
            for b in range(n):
                acc += J[j, b] * J[j, b]
            diagP[j] = acc
        # pin coordinates whose axis has collapsed onto the z_j = 0 face
        pinned_now = False
        for j in range(n):
            if free[j] and diagP[j] <= pin_width * pin_width and c[j] <= math.sqrt(diagP[j]):
                free[j] = False
                pinned_now = True
                c[j] = 0.0
                for b in range(n):
                    J[j, b] = 0.0
                m -= 1
        if pinned_now:
            if m == 0:
                status = 0
                trace_best[it] = best_g
                trace_vol[it] = 0.0
                break
            P[:, :] = J @ J.T
            logdet = _free_logdet(P, free)
        alpha_shallow = -1.0 / (2.0 * m)
        # most violated nonnegativity constraint, in ellipsoid-normalized units
        worst = 0.0
        jw = -1
        for j in range(n):
            if free[j] and c[j] < 0.0:
                r = -c[j] / math.sqrt(diagP[j])
                if r > worst:
                    worst = r
                    jw = j
        # evaluate at the projection onto the orthant; the supergradient there
        # gives a valid cut h.(z - c) >= h.(cp - c) through the current center
        for j in range(n):
            cp[j] = max(c[j], 0.0)
            y[j] = cp[j] * yscale[j]
        g = _lagrangian(y, pu, cst, tu, td, fu, fm, h) / e_ref
        offset = 0.0
        for j in range(n):
            h[j] = -h[j] * unit[j] if free[j] else 0.0
            offset -= h[j] * (cp[j] - c[j])
        if g > best_g:
            best_g = g
            best_z[:] = cp
            best_tu[:] = tu
            best_td[:] = td
            best_fu[:] = fu
            best_fm[:] = fm
        if check_every > 0 and it % check_every == 0:
            rtu[:] = tu
            rtd[:] = td
            rfu[:] = fu
            rfm[:] = fm
            val = _repair(pu, cst, rtu, rtd, rfu, rfm) / e_ref
            if val < ub:
                ub = val
                ub_tu[:] = rtu
                ub_td[:] = rtd
                ub_fu[:] = rfu
                ub_fm[:] = rfm
            if ub - best_g <= gap_tol * abs(ub):
                status = 0
                trace_best[it] = best_g
                trace_vol[it] = vol
                break
        # pj = J'h, so h'Ph = |pj|^2
        hPh = 0.0
        for b in range(n):
            acc = 0.0
            for a in range(n):
                acc += J[a, b] * h[a]
            pj[b] = acc
            hPh += acc * acc
        if not hPh > 0.0:
            # a zero supergradient certifies a maximizer; anything else is lost definiteness
            hmax = 0.0
            for j in range(n):
                hmax = max(hmax, abs(h[j]))
            status = 0 if hmax == 0.0 else 4
            trace_best[it] = best_g
            trace_vol[it] = vol
            break
        sq = math.sqrt(hPh)
        if cut_mode == 0:
            alpha = offset / sq + alpha_shallow
        elif cut_mode == 1:
            alpha = offset / sq
        else:
            alpha = (offset + max(best_g - g, 0.0)) / sq
        if alpha < alpha_shallow and jw >= 0:
            coord_run += 1
            if coord_run > stall_cap:
                status = 2
                trace_best[it] = best_g
                trace_vol[it] = vol
                break
            # the shifted cut barely helps: fall back to the coordinate cut
            for j in range(n):
                h[j] = 0.0
                pj[j] = -J[jw, j]
            h[jw] = -1.0
            alpha = worst
            hPh = diagP[jw]
            sq = math.sqrt(hPh)
        else:
            coord_run = 0
        alpha = min(max(alpha, alpha_shallow), alpha_cap)
        # minimisation-form cut: keep {z : h.(z - c) <= -alpha sqrt(h' P h)}
        tau = (1.0 + m * alpha) / (m + 1.0)
        if m > 1:
            delta = m * m * (1.0 - alpha * alpha) / (m * m - 1.0)
            sig = 2.0 * (1.0 + m * alpha) / ((m + 1.0) * (1.0 + alpha))
        else:
            delta = 1.0
            sig = 0.0
        for b in range(n):
            pj[b] /= sq
        # gt = P h / sqrt(h'Ph) = J pj
        for a in range(n):
            acc = 0.0
            for b in range(n):
                acc += J[a, b] * pj[b]
            gt[a] = acc
            c[a] -= tau * acc
        if m == 1:
            # one free coordinate: the ellipsoid is an interval
            shrink = (1.0 - alpha) / 2.0
            for a in range(n):
                for b in range(n):
                    J[a, b] *= shrink
            logdet += 2.0 * math.log(shrink)
        else:
            # J <- sqrt(delta) (J - (1 - sqrt(1 - sig)) (J pj) pj')
            beta_ = 1.0 - math.sqrt(1.0 - sig)
            sd = math.sqrt(delta)
            for a in range(n):
                ga = beta_ * gt[a]
                for b in range(n):
                    J[a, b] = sd * (J[a, b] - ga * pj[b])
            logdet += m * math.log(delta) + math.log(1.0 - sig)
        vol = math.exp(logdet / (2.0 * m))
        trace_best[it] = best_g
        trace_vol[it] = vol
        if vol <= eps2:
            status = 0
            break
    P[:, :] = J @ J.T
    return (status, it + 1, best_z, best_g, ub, c, P,
            best_tu, best_td, best_fu, best_fm, ub_tu, ub_td, ub_fu, ub_fm)


# --------------------------------------------------------------------------- python surface

@dataclass
class DualPoint:
    """Multipliers of the inner problem (all nonnegative)."""

    lambda1: float
    beta: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    lambda5: float = 0.0

    # fixed multipliers of the energy-definition constraints
    LAMBDA0 = -1.0

    @staticmethod
    def lambda2(w: float) -> float:
        return 1.0 - w

    @staticmethod
    def lambda3(w: float) -> float:
        return w

    @property
    def n_users(self) -> int:
        return len(self.beta)

    def to_vector(self, with_lambda5: bool = True) -> np.ndarray:
        parts = [[self.lambda1], self.beta, self.xi, self.theta, self.phi]
        if with_lambda5:
            parts.append([self.lambda5])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def from_vector(cls, v, k: int) -> "DualPoint":
        v = np.asarray(v, dtype=float)
        lam5 = float(v[4 * k + 1]) if len(v) > 4 * k + 1 else 0.0
        return cls(float(v[0]), v[1:1 + k].copy(), v[1 + k:1 + 2 * k].copy(),
                   v[1 + 2 * k:1 + 3 * k].copy(), v[1 + 3 * k:1 + 4 * k].copy(), lam5)

    @classmethod
    def zeros(cls, k: int) -> "DualPoint":
        z = np.zeros(k)
        return cls(0.0, z.copy(), z.copy(), z.copy(), z.copy(), 0.0)


@dataclass
class Ellipsoid:
    center: np.ndarray
    shape: np.ndarray

    @property
    def volume_proxy(self) -> float:
        """Geometric mean of the semi-axes."""
        sign, logdet = np.linalg.slogdet(self.shape)
        return float(np.exp(logdet / (2 * len(self.center)))) if sign > 0 else 0.0


@dataclass
class InnerConfig:
    radius: float = 1e2
    eps2: float = 1e-8
    max_iter: int | None = None       # default 200 * n^2
    cut: str = "shallow"
    gap_tol: float = 1e-6
    check_every: int | None = None    # default n
    max_depth: float = 0.999          # deeper cuts are clipped to this depth
    pin_width: float = 1e-9           # axis half-width below which a zero dual is pinned
    pinned_f_u: np.ndarray | None = None
    pinned_f_m: np.ndarray | None = None
    warm_start: np.ndarray | None = None

    @property
    def pinned(self) -> bool:
        return self.pinned_f_u is not None


@dataclass
class InnerSolution:
    alloc: Allocation
    dual: DualPoint
    dual_value: float
    best_dual_value: float
    primal_value: float
    iterations: int
    status: str
    channel: ChannelRealization
    ellipsoid: Ellipsoid | None = None
    trace: list = field(default_factory=list)
    min_latency: float = 0.0

    @property
    def gap(self) -> float:
        """Relative primal-dual gap of the reported (feasible) primal point."""
        if not np.isfinite(self.primal_value) or not np.isfinite(self.best_dual_value):
            return math.inf
        return (self.primal_value - self.best_dual_value) / max(abs(self.primal_value), 1e-300)


def _pack(s, scn: NetworkScenario, ch: ChannelRealization, cfg: InnerConfig | None = None):
    rc, cc = scn.radio, scn.compute
    s = np.asarray(s, dtype=float)
    u = scn.home_requests
    if np.any(s < -1e-9 * u) or np.any(s > u * (1 + 1e-12)):
        raise ValueError("offloaded bits must satisfy 0 <= s <= u")
    # fractions of a bit would underflow the closed forms; they count as nothing offloaded
    s = np.where(s < MIN_BITS, 0.0, np.clip(s, 0.0, u))
    k = len(s)
    a1 = rc.cap_gap_ul * ch.sigma1_sq / (rc.antennas * ch.gamma_hat)
    a2 = rc.cap_gap_dl * ch.sigma2_sq / (rc.antennas * ch.gamma_hat)
    k1 = s / (rc.pilot_overhead * rc.bandwidth)
    k2 = rc.output_ratio * s / rc.bandwidth
    pu = np.zeros((10, k))
    pu[S] = s
    pu[Q] = u - s
    pu[A1] = a1
    pu[A2] = a2
    pu[K1] = k1
    pu[K2] = k2
    pu[TU_LO] = k1 / np.log2(1.0 + rc.ut_power_max / a1)
    pu[TD_LO] = k2 / np.log2(1.0 + rc.ap_power / a2)
    pinned = cfg is not None and cfg.pinned
    if pinned:
        pu[FU_FIX] = np.broadcast_to(cfg.pinned_f_u, (k,))
        pu[FM_FIX] = np.broadcast_to(cfg.pinned_f_m, (k,))
    cst = np.array([cc.weight, cc.user_capacitance, cc.user_cycles, cc.mec_capacitance, cc.mec_cycles,
                    cc.f_user_min, cc.f_user_max, cc.f_mec_min, cc.f_mec_max, cc.latency, cc.f_mec_max,
                    1.0 if pinned else 0.0])
    return pu, cst


def _alloc(pu, cst, tu, td, fu, fm, T=None) -> Allocation:
    s = pu[S].copy()
    off = s > 0
    if T is None:
        T1 = float(tu[off].max(initial=0.0))
        T2 = float((cst[CYC_M] * s[off] / fm[off]).max(initial=0.0))
        T3 = float(td[off].max(initial=0.0))
    else:
        T1, T2, T3 = T
    return Allocation(s, tu.copy(), td.copy(), fu.copy(), fm.copy(), T1, T2, T3)


def primal_from_dual(dual: DualPoint, s, scn: NetworkScenario, ch: ChannelRealization,
                     cfg: InnerConfig | None = None) -> Allocation:
    """Primal minimizer of the Lagrangian for ``dual``; phase budgets set to the per-user maxima."""
    pu, cst = _pack(s, scn, ch, cfg)
    k = pu.shape[1]
    y = dual.to_vector()
    if np.any(y < 0):
        raise ValueError("dual variables must be nonnegative")
    tu, td, fu, fm = (np.empty(k) for _ in range(4))
    _primal_kernel(y, pu, cst, tu, td, fu, fm)
    return _alloc(pu, cst, tu, td, fu, fm)


def lagrangian_minimizer(dual: DualPoint, s, scn, ch, cfg=None) -> tuple[Allocation, float]:
    """Exact minimizer of the Lagrangian (phase budgets at 0 or T_d) and the dual function value."""
    pu, cst = _pack(s, scn, ch, cfg)
    k = pu.shape[1]
    y = dual.to_vector()
    tu, td, fu, fm = (np.empty(k) for _ in range(4))
    slack = np.empty(4 * k + 2)
    val = _lagrangian(y, pu, cst, tu, td, fu, fm, slack)
    Td = cst[TD]
    T1 = Td if y[0] < dual.beta.sum() else 0.0
    T2 = Td if y[0] < dual.theta.sum() else 0.0
    T3 = Td if y[0] < dual.phi.sum() else 0.0
    return _alloc(pu, cst, tu, td, fu, fm, (T1, T2, T3)), float(val)


def lagrangian(alloc: Allocation, dual: DualPoint, scn: NetworkScenario, ch: ChannelRealization) -> float:
    """Lagrangian of the inner problem at an arbitrary primal point."""
    energy, _ = evaluate(alloc, scn, ch)
    g = subgradient(dual, alloc, alloc.s, scn, ch)
    return energy.E_total_weighted + float(np.dot(dual.to_vector(), g))


def dual_value(dual: DualPoint, s, scn: NetworkScenario, ch: ChannelRealization,
               cfg: InnerConfig | None = None) -> float:
    """Dual function: the Lagrangian evaluated at its minimizer over the primal boxes."""
    return lagrangian_minimizer(dual, s, scn, ch, cfg)[1]


def subgradient(dual: DualPoint, alloc: Allocation, s, scn: NetworkScenario,
                ch: ChannelRealization) -> np.ndarray:
    """Constraint values at ``alloc`` in dual-vector order (a supergradient when ``alloc`` minimizes the Lagrangian)."""
    pu, cst = _pack(s, scn, ch)
    k = pu.shape[1]
    out = np.empty(4 * k + 2)
    fu = np.where(alloc.f_u > 0, alloc.f_u, np.inf)
    _slacks(pu, cst, np.asarray(alloc.t_u, float), np.asarray(alloc.t_d, float), fu,
            np.asarray(alloc.f_m, float), alloc.T1, alloc.T2, alloc.T3, out)
    return out


def _min_phase2(s, cc) -> float:
    """Shortest MEC phase achievable under the frequency budget."""
    s = s[s > 0]
    if len(s) == 0:
        return 0.0
    dm = cc.mec_cycles

    def need(T):
        return np.maximum(cc.f_mec_min, dm * s / T).sum()

    lo_T = dm * s.max() / cc.f_mec_max
    if need(lo_T) <= cc.f_mec_max:
        return lo_T
    if len(s) * cc.f_mec_min > cc.f_mec_max:
        return math.inf
    hi_T = lo_T
    while need(hi_T) > cc.f_mec_max:
        hi_T *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo_T + hi_T)
        if need(mid) > cc.f_mec_max:
            lo_T = mid
        else:
            hi_T = mid
    return hi_T


def min_latency(s, scn: NetworkScenario, ch: ChannelRealization, cfg: InnerConfig | None = None) -> float:
    """Smallest total time any allocation can achieve for split ``s`` (power and frequency caps respected)."""
    pu, cst = _pack(s, scn, ch, cfg)
    cc = scn.compute
    s = pu[S]
    off = s > 0
    if cfg is not None and cfg.pinned:
        fu_top = pu[FU_FIX]
        t2 = float((cc.mec_cycles * s[off] / pu[FM_FIX][off]).max(initial=0.0))
    else:
        fu_top = np.full(len(s), cc.f_user_max)
        t2 = _min_phase2(s, cc)
    local = cc.user_cycles * pu[Q] / fu_top
    rt = float((np.where(off, pu[TU_LO], 0.0) + local).max(initial=0.0))
    phases = float(pu[TU_LO][off].max(initial=0.0)) + t2 + float(pu[TD_LO][off].max(initial=0.0))
    return max(rt, phases)


def reference_energy(pu, cst, ch_scale=None) -> float:
    """Energy scale used to normalize dual variables."""
    w = cst[W]
    q, s = pu[Q], pu[S]
    fq = np.clip(cst[CYC_U] * q / cst[TD], cst[FU_MIN], cst[FU_MAX])
    e = ((1 - w) * cst[KAP_U] * cst[CYC_U] * q * fq**2
         + (1 - w) * LN2 * pu[A1] * pu[K1]
         + w * LN2 * pu[A2] * pu[K2]
         + w * cst[KAP_M] * cst[CYC_M] * s * cst[FM_MIN] ** 2)
    return max(float(e.sum()), 1e-300)


def solve_inner(s, scn: NetworkScenario, ch: ChannelRealization, cfg: InnerConfig | None = None) -> InnerSolution:
    """Solve the fixed-split subproblem by ellipsoid ascent on the dual."""
    cfg = cfg or InnerConfig()
    pu, cst = _pack(s, scn, ch, cfg)
    k = pu.shape[1]
    n = 4 * k + (1 if cfg.pinned else 2)
    t_min = min_latency(pu[S], scn, ch, cfg)
    if t_min > cst[TD]:
        alloc = _fastest_allocation(pu, cst, scn, ch, cfg)
        energy, _ = evaluate(alloc, scn, ch)
        return InnerSolution(alloc, DualPoint.zeros(k), -math.inf, -math.inf, energy.E_total_weighted,
                             0, "latency-infeasible", ch, min_latency=t_min)

    e_ref = reference_energy(pu, cst)
    unit = np.full(n, cst[TD])
    if not cfg.pinned:
        unit[-1] = cst[FM_TOTAL]
    yscale = e_ref / unit
    if cfg.warm_start is not None:
        z0 = np.maximum(np.asarray(cfg.warm_start, dtype=float)[:n] / yscale, 0.0)
    else:
        z0 = np.ones(n)
    max_iter = cfg.max_iter or 200 * n * n
    check = cfg.check_every if cfg.check_every is not None else n
    trace_best = np.full(max_iter, np.nan)
    trace_vol = np.full(max_iter, np.nan)
    (status, iters, best_z, best_g, ub, c, P, btu, btd, bfu, bfm,
     utu, utd, ufu, ufm) = _ellipsoid_kernel(
        pu, cst, yscale, unit, z0, float(cfg.radius), float(cfg.eps2), int(max_iter), _CUTS[cfg.cut],
        float(cfg.gap_tol), int(check), e_ref, trace_best, trace_vol, float(cfg.max_depth),
        float(cfg.pin_width))

    # repair the best dual point's primal as a second candidate
    rtu, rtd, rfu, rfm = btu.copy(), btd.copy(), bfu.copy(), bfm.copy()
    val = _repair(pu, cst, rtu, rtd, rfu, rfm) / e_ref
    if val < ub:
        ub, utu, utd, ufu, ufm = val, rtu, rtd, rfu, rfm
    y_best = best_z * yscale
    if cfg.pinned:
        y_best = np.append(y_best, 0.0)
    if np.isfinite(ub):
        alloc = _alloc(pu, cst, utu, utd, ufu, ufm)
    else:
        alloc = _alloc(pu, cst, btu, btd, bfu, bfm)
    energy, _ = evaluate(alloc, scn, ch)
    # thin the per-iteration record to about 200 rows
    idx = np.union1d(np.arange(0, iters, max(1, iters // 200)), [iters - 1]) if iters else np.array([], int)
    idx = idx[np.isfinite(trace_vol[idx])]
    trace = [{"iteration": int(i) + 1, "best_dual_value": float(trace_best[i] * e_ref),
              "volume_proxy": float(trace_vol[i])} for i in idx]
    return InnerSolution(
        alloc=alloc, dual=DualPoint.from_vector(y_best, k), dual_value=float(best_g * e_ref),
        best_dual_value=float(best_g * e_ref), primal_value=energy.E_total_weighted,
        iterations=int(iters), status=STATUS[status], channel=ch,
        ellipsoid=Ellipsoid(c * yscale, P), trace=trace, min_latency=t_min,
    )


def _fastest_allocation(pu, cst, scn, ch, cfg) -> Allocation:
    """Minimum-latency point reported when the split cannot meet the deadline."""
    cc = scn.compute
    s = pu[S]
    off = s > 0
    tu = np.where(off, pu[TU_LO], 0.0)
    td = np.where(off, pu[TD_LO], 0.0)
    if cfg.pinned:
        fu = pu[FU_FIX].copy()
        fm = np.where(off, pu[FM_FIX], 0.0)
    else:
        fu = np.full(len(s), cc.f_user_max)
        t2 = _min_phase2(s, cc)
        fm = np.where(off, np.maximum(cc.f_mec_min, cc.mec_cycles * s / max(t2, 1e-300)), 0.0)
        fm = np.minimum(fm, cc.f_mec_max)
    return _alloc(pu, cst, tu, td, fu, fm)
