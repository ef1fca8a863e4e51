"""Rates, powers, times and energies of the three-phase offloading model.

Every function works on the home cell's K users at once (numpy arrays of
length K). A user with ``s_i == 0`` does not transmit: its times and powers are
zero and it is left out of the phase maxima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelRealization, NetworkScenario, RadioConstants

LN2 = math.log(2.0)


@dataclass
class Allocation:
    """Primal point for the home cell."""

    s: np.ndarray
    t_u: np.ndarray
    t_d: np.ndarray
    f_u: np.ndarray
    f_m: np.ndarray
    T1: float = 0.0
    T2: float = 0.0
    T3: float = 0.0

    def copy(self) -> "Allocation":
        return Allocation(self.s.copy(), self.t_u.copy(), self.t_d.copy(), self.f_u.copy(),
                          self.f_m.copy(), self.T1, self.T2, self.T3)

    def as_dict(self) -> dict:
        return {"s": self.s.tolist(), "t_u": self.t_u.tolist(), "t_d": self.t_d.tolist(),
                "f_u": self.f_u.tolist(), "f_m": self.f_m.tolist(),
                "T1": self.T1, "T2": self.T2, "T3": self.T3}


@dataclass
class EnergyBreakdown:
    e_off: np.ndarray
    e_lc: np.ndarray
    e_oc: np.ndarray
    e_dl: np.ndarray
    E_u: float
    E_m: float
    E_total_weighted: float
    p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def per_user_weighted(self, w: float) -> np.ndarray:
        return (1 - w) * (self.e_off + self.e_lc) + w * (self.e_oc + self.e_dl)


@dataclass
class TimingReport:
    t_L: np.ndarray
    t_M: np.ndarray
    round_trip: np.ndarray
    T1: float
    T2: float
    T3: float
    T_total: float
    slack: float
    power_cap_exceeded: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    eta_sum_exceeded: bool = False

    @property
    def phase_fractions(self) -> np.ndarray:
        """Share of T1+T2+T3 spent in each phase (zeros when nothing is offloaded)."""
        tot = self.T1 + self.T2 + self.T3
        if tot <= 0:
            return np.zeros(3)
        return np.array([self.T1, self.T2, self.T3]) / tot


def _ul_coeff(ch: ChannelRealization, rc: RadioConstants) -> np.ndarray:
    # Gamma1 * sigma1^2 / (N gamma)
    return rc.cap_gap_ul * ch.sigma1_sq / (rc.antennas * ch.gamma_hat)


def _dl_coeff(ch: ChannelRealization, rc: RadioConstants) -> np.ndarray:
    return rc.cap_gap_dl * ch.sigma2_sq / (rc.antennas * ch.gamma_hat)


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    pos = num > 0
    if np.any(pos & (den <= 0)):
        raise ValueError("positive bits need a positive transmission time")
    np.divide(num, den, out=out, where=pos)
    return out


def uplink_power(s, t_u, ch: ChannelRealization, rc: RadioConstants) -> np.ndarray:
    """Transmit power needed to push ``s`` bits uplink in ``t_u`` seconds."""
    x = _safe_ratio(s, rc.pilot_overhead * np.asarray(t_u, dtype=float) * rc.bandwidth)
    return np.expm1(x * LN2) * _ul_coeff(ch, rc)


def downlink_coeff(s, t_d, ch: ChannelRealization, rc: RadioConstants) -> np.ndarray:
    """Fraction of the AP power needed to return ``mu*s`` result bits in ``t_d`` seconds."""
    x = _safe_ratio(rc.output_ratio * np.asarray(s, dtype=float), np.asarray(t_d, dtype=float) * rc.bandwidth)
    return np.expm1(x * LN2) * _dl_coeff(ch, rc) / rc.ap_power


def evaluate(alloc: Allocation, scn: NetworkScenario, ch: ChannelRealization):
    """Energy and timing of ``alloc``; constraint violations are reported, never raised."""
    rc, cc = scn.radio, scn.compute
    u = scn.home_requests
    s = np.asarray(alloc.s, dtype=float)
    off = s > 0
    q = u - s
    p = uplink_power(s, alloc.t_u, ch, rc)
    eta = downlink_coeff(s, alloc.t_d, ch, rc)
    t_u = np.where(off, alloc.t_u, 0.0)
    t_d = np.where(off, alloc.t_d, 0.0)
    e_off = p * t_u
    e_dl = rc.ap_power * eta * t_d
    e_lc = cc.user_capacitance * cc.user_cycles * q * alloc.f_u**2
    f_m = np.where(off, alloc.f_m, 0.0)
    e_oc = cc.mec_capacitance * f_m**2 * cc.mec_cycles * s
    E_u = float(np.sum(e_off + e_lc))
    E_m = float(np.sum(e_oc + e_dl))
    w = cc.weight
    energy = EnergyBreakdown(e_off, e_lc, e_oc, e_dl, E_u, E_m, (1 - w) * E_u + w * E_m, p, eta)

    t_L = _safe_ratio(cc.user_cycles * q, alloc.f_u)
    t_M = _safe_ratio(cc.mec_cycles * s, f_m)
    T1 = float(t_u.max(initial=0.0))
    T2 = float(t_M.max(initial=0.0))
    T3 = float(t_d.max(initial=0.0))
    rt = t_u + t_L
    T_total = max(float(rt.max(initial=0.0)), T1 + T2 + T3)
    timing = TimingReport(t_L, t_M, rt, T1, T2, T3, T_total, cc.latency - T_total,
                          power_cap_exceeded=p > rc.ut_power_max * (1 + 1e-9),
                          eta_sum_exceeded=bool(eta.sum() > 1 + 1e-9))
    return energy, timing


def user_objective(s, alloc: Allocation, scn: NetworkScenario, ch: ChannelRealization,
                   t_ref: float | None = None) -> np.ndarray:
    """Per-user weighted energy as a function of ``s`` with times and frequencies of ``alloc`` held fixed.

    Users whose ``alloc`` times are zero (nothing offloaded) are evaluated at the
    reference time ``t_ref`` (default: a third of the latency budget).
    """
    t_u, t_d, f_m = _fixed_inner(alloc, scn, t_ref)
    trial = Allocation(np.asarray(s, dtype=float), t_u, t_d, alloc.f_u, f_m)
    energy, _ = evaluate(trial, scn, ch)
    return energy.per_user_weighted(scn.compute.weight)


def _fixed_inner(alloc: Allocation, scn: NetworkScenario, t_ref: float | None):
    if t_ref is None:
        t_ref = scn.compute.latency / 3.0
    t_u = np.where(alloc.t_u > 0, alloc.t_u, t_ref)
    t_d = np.where(alloc.t_d > 0, alloc.t_d, t_ref)
    f_m = np.where(alloc.f_m > 0, alloc.f_m, scn.compute.f_mec_min)
    return t_u, t_d, f_m


def gradient_terms(alloc: Allocation, scn: NetworkScenario, ch: ChannelRealization,
                   at_zero: bool = False, t_ref: float | None = None) -> np.ndarray:
    """(4, K) array: uplink, downlink, MEC-compute and local-compute parts of d f0 / d s_i."""
    rc, cc = scn.radio, scn.compute
    w = cc.weight
    t_u, t_d, f_m = _fixed_inner(alloc, scn, t_ref)
    s = np.zeros_like(alloc.s) if at_zero else np.asarray(alloc.s, dtype=float)
    nu, B, mu = rc.pilot_overhead, rc.bandwidth, rc.output_ratio
    up = (1 - w) * np.exp2(s / (nu * t_u * B)) * LN2 * _ul_coeff(ch, rc) / (nu * B)
    down = w * mu * np.exp2(mu * s / (t_d * B)) * LN2 * _dl_coeff(ch, rc) / B
    mec = w * cc.mec_capacitance * cc.mec_cycles * f_m**2
    local = -(1 - w) * cc.user_capacitance * cc.user_cycles * alloc.f_u**2
    return np.vstack([up, down, mec, local])


def objective_grad_s(alloc: Allocation, scn: NetworkScenario, ch: ChannelRealization,
                     t_ref: float | None = None) -> np.ndarray:
    """Partial derivative of the weighted energy w.r.t. each s_i at fixed times and frequencies."""
    return gradient_terms(alloc, scn, ch, t_ref=t_ref).sum(axis=0)


def objective_hess_s(alloc: Allocation, scn: NetworkScenario, ch: ChannelRealization,
                     t_ref: float | None = None) -> np.ndarray:
    """Second derivative w.r.t. each s_i (the Hessian is diagonal)."""
    rc, cc = scn.radio, scn.compute
    w = cc.weight
    t_u, t_d, _ = _fixed_inner(alloc, scn, t_ref)
    s = np.asarray(alloc.s, dtype=float)
    nu, B, mu = rc.pilot_overhead, rc.bandwidth, rc.output_ratio
    up = (1 - w) * np.exp2(s / (nu * t_u * B)) * LN2**2 * _ul_coeff(ch, rc) / (nu**2 * B**2 * t_u)
    down = w * mu**2 * np.exp2(mu * s / (t_d * B)) * LN2**2 * _dl_coeff(ch, rc) / (B**2 * t_d)
    return up + down


def check_typical_condition(scn: NetworkScenario, ch: ChannelRealization, alloc: Allocation) -> np.ndarray:
    """True per user when the energy gradient at s_i -> 0 is nonnegative."""
    return gradient_terms(alloc, scn, ch, at_zero=True).sum(axis=0) >= 0.0


def refresh_channel(ch: ChannelRealization, alloc: Allocation, scn: NetworkScenario) -> ChannelRealization:
    """Update home-cell interference for the powers implied by ``alloc``.

    Powers are computed with the current noise levels (a single refresh pass).
    """
    rc = scn.radio
    p = np.minimum(uplink_power(alloc.s, alloc.t_u, ch, rc), rc.ut_power_max)
    eta = downlink_coeff(alloc.s, alloc.t_d, ch, rc)
    return ch.refresh(p, eta)
