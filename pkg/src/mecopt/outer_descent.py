"""Latency-aware descent over the offloaded bits ``s``.

Each outer iteration solves the inner time/frequency problem at the current
split, takes a per-user step on the weighted energy with the inner variables
held fixed, and stops when the scaled gradient is small, when ``s`` sits on a
bound, or when the next step would break the deadline. In the last case the
step is shrunk until the minimum achievable latency meets the deadline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .inner_pd import InnerConfig, InnerSolution, min_latency, solve_inner
from .phymodel import (Allocation, EnergyBreakdown, TimingReport, _fixed_inner, check_typical_condition,
                       downlink_coeff, evaluate, gradient_terms, objective_grad_s, objective_hess_s,
                       refresh_channel, uplink_power, user_objective)
from .scenario import ChannelRealization, NetworkScenario
from .special_math import lambert_w0p1

LN2 = float(np.log(2.0))

log = logging.getLogger(__name__)

TERMINATIONS = ("gradient-tolerance", "latency-binding", "boundary-s-zero", "boundary-s-full",
                "iteration-cap", "case-II-unsupported", "latency-infeasible")


@dataclass
class OuterConfig:
    method: str = "newton"
    s_init_fraction: float = 0.6
    eps1: float = 1e-4
    backtrack_alpha: float = 0.3
    backtrack_beta: float = 0.7
    max_outer_iters: int = 200
    max_halvings: int = 60
    latency_tol: float = 1e-4
    max_bisections: int = 60
    snap_fraction: float = 1e-3
    refresh: str = "fixed-point"      # fixed-point | initial | outer | off
    refresh_tol: float = 1e-3         # relative change of the noise powers that ends the refresh rounds
    max_refresh_rounds: int = 5
    case2_policy: str = "descend"     # descend | all-offload
    warm_start: bool = False
    gradient_model: str = "envelope"  # envelope | surrogate
    stall_tol: float = 1e-5           # relative decrease below which a step counts as converged
    probe_fraction: float = 0.05      # users this close to the bound they head for also try the bound
    accept_tol: float = 1e-6          # relative increase still accepted, at the accuracy of the inner solves
    max_rejections: int = 8           # step shrinks when the re-solved inner does not confirm a decrease

    def validate(self) -> None:
        if self.method not in ("gradient", "newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.s_init_fraction < 1:
            raise ValueError("s_init_fraction must lie in (0, 1)")
        if not 0 < self.backtrack_alpha < 0.5 or not 0 < self.backtrack_beta < 1:
            raise ValueError("backtracking parameters out of range")
        if self.refresh not in ("fixed-point", "initial", "outer", "off"):
            raise ValueError(f"unknown refresh mode {self.refresh!r}")
        if self.gradient_model not in ("surrogate", "envelope"):
            raise ValueError(f"unknown gradient_model {self.gradient_model!r}")
        if self.case2_policy not in ("all-offload", "descend"):
            raise ValueError(f"unknown case2_policy {self.case2_policy!r}")


@dataclass
class SolverTrace:
    rows: list = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def round(self, index: int) -> "SolverTrace":
        """Rows of one refresh round (a descent on a fixed channel)."""
        return SolverTrace([r for r in self.rows if r.get("round", 0) == index])

    @property
    def objectives(self) -> np.ndarray:
        return self.column("objective")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class OuterSolution:
    alloc: Allocation
    energy: EnergyBreakdown
    timing: TimingReport
    trace: SolverTrace
    termination: str
    outer_iterations: int = 0
    inner_iterations: int = 0
    inner_status: str = ""
    typical: np.ndarray | None = None
    channel: ChannelRealization | None = None
    inner: InnerSolution | None = None
    requests: np.ndarray | None = None
    curvature: np.ndarray | None = None   # per-user curvature model at the last iterate

    @property
    def objective(self) -> float:
        return self.energy.E_total_weighted

    @property
    def offloaded_fraction(self) -> float:
        """Share of all requested bits that is offloaded."""
        if self.requests is None:
            return float("nan")
        return float(np.sum(self.alloc.s) / np.sum(self.requests))

    @property
    def feasible(self) -> bool:
        return self.termination not in ("latency-infeasible",)


def step_direction(s, grad, hess, method: str, scale=None) -> np.ndarray:
    """Descent direction per user: ``-scale*grad`` (gradient) or ``-grad/hess`` (Newton)."""
    grad = np.asarray(grad, dtype=float)
    if method == "gradient":
        return -grad * (1.0 if scale is None else np.asarray(scale, dtype=float))
    if method == "newton":
        hess = np.asarray(hess, dtype=float)
        assert np.all(hess > 0), "Hessian must be positive"
        return -grad / hess
    raise ValueError(f"unknown method {method!r}")


def backtracking_search(s, ds, grad, f_user, upper, alpha=0.3, beta=0.7, max_halvings=60) -> np.ndarray:
    """Per-user Armijo steps for the separable objective ``f_user(s) -> per-user values``.

    Candidates are clipped into ``[0, upper]`` before evaluation and the
    sufficient-decrease test uses the clipped displacement. Users that fail
    ``max_halvings`` reductions get a zero step.
    """
    s = np.asarray(s, dtype=float)
    ds = np.asarray(ds, dtype=float)
    t = np.where(ds != 0, 1.0, 0.0)
    f0 = f_user(s)
    pending = ds != 0
    for _ in range(max_halvings + 1):
        if not pending.any():
            break
        cand = np.clip(s + t * ds, 0.0, upper)
        fc = f_user(cand)
        ok = fc <= f0 + alpha * grad * (cand - s)
        pending &= ~ok
        t = np.where(pending, t * beta, t)
    t[pending] = 0.0
    return t


def _requests(scn) -> np.ndarray:
    return np.asarray(scn.home_requests, dtype=float)


def _bisect_latency(s_ok, s_bad, scn, ch, icfg, cfg) -> np.ndarray:
    """Point on the segment where the minimum latency meets the deadline (feasible side)."""
    Td = scn.compute.latency
    lo, hi = 0.0, 1.0
    best = s_ok
    for _ in range(cfg.max_bisections):
        mid = 0.5 * (lo + hi)
        cand = s_ok + mid * (s_bad - s_ok)
        t = min_latency(cand, scn, ch, icfg)
        if t <= Td:
            lo, best = mid, cand
            if t >= Td * (1.0 - cfg.latency_tol):
                break
        else:
            hi = mid
    return best


def _scaled_residual(s, grad, u, f0) -> np.ndarray:
    """Bound-scaled gradient: zero exactly at a KKT point of min f0 over the box [0, u]."""
    g = grad * u / max(f0, 1e-300)
    dist = np.where(g > 0, s, u - s) / u
    return g * dist


def idle_link_slopes(inner: InnerSolution, scn: NetworkScenario, ch: ChannelRealization):
    """Uplink and downlink energy per bit for users that offload nothing yet.

    As ``s_i -> 0`` the inner optimum sends the first bits in a vanishing slot at
    the rate fixed by the multipliers, so the transmit energy grows linearly in
    ``s_i`` with these slopes. The time the slot takes from the local deadline is
    priced in through the multipliers.
    """
    rc, cc, dual = scn.radio, scn.compute, inner.dual
    w = cc.weight
    a1 = rc.cap_gap_ul * ch.sigma1_sq / (rc.antennas * ch.gamma_hat)
    a2 = rc.cap_gap_dl * ch.sigma2_sq / (rc.antennas * ch.gamma_hat)
    v1 = np.array([lambert_w0p1(float(y)) for y in (dual.beta + dual.xi) / ((1 - w) * a1)])
    v2 = np.array([lambert_w0p1(float(y)) for y in dual.phi / (w * a2)])
    # the power caps bound the rate, so the spectral efficiency is capped too
    v1 = np.minimum(v1, np.log1p(rc.ut_power_max / a1))
    v2 = np.minimum(v2, np.log1p(rc.ap_power / a2))
    up = (1 - w) * np.exp(v1) * LN2 * a1 / (rc.pilot_overhead * rc.bandwidth)
    down = w * rc.output_ratio * np.exp(v2) * LN2 * a2 / rc.bandwidth
    return up, down


def envelope_gradient(inner: InnerSolution, scn: NetworkScenario, ch: ChannelRealization) -> np.ndarray:
    """Derivative of the inner-optimal energy w.r.t. s: the fixed-(t, f) gradient plus the
    multiplier-weighted derivatives of the local-deadline and MEC-phase constraints."""
    alloc, dual, cc = inner.alloc, inner.dual, scn.compute
    terms = gradient_terms(alloc, scn, ch)
    idle = alloc.s <= 0
    if idle.any():
        up, down = idle_link_slopes(inner, scn, ch)
        terms[0] = np.where(idle, up, terms[0])
        terms[1] = np.where(idle, down, terms[1])
    f_m = np.where(alloc.f_m > 0, alloc.f_m, cc.f_mec_min)
    return terms.sum(axis=0) - dual.xi * cc.user_cycles / alloc.f_u + dual.theta * cc.mec_cycles / f_m


def lagrangian_user_objective(s, inner: InnerSolution, scn: NetworkScenario, ch: ChannelRealization) -> np.ndarray:
    """Per-user energy plus the s-dependent multiplier terms, with times, frequencies and
    multipliers held at the inner solution. Its derivative is :func:`envelope_gradient`.

    Users that offload nothing at the inner solution get their link energy from
    :func:`idle_link_slopes`, linear in ``s``.
    """
    alloc, dual, cc, rc = inner.alloc, inner.dual, scn.compute, scn.radio
    s = np.asarray(s, dtype=float)
    f_m = np.where(alloc.f_m > 0, alloc.f_m, cc.f_mec_min)
    q = scn.home_requests - s
    # rates beyond reach at the held times cost inf; where() discards the inf - inf of busy users
    with np.errstate(over="ignore", invalid="ignore"):
        val = (user_objective(s, alloc, scn, ch) + dual.xi * cc.user_cycles * q / alloc.f_u
               + dual.theta * cc.mec_cycles * s / f_m)
        idle = alloc.s <= 0
        if idle.any():
            w = cc.weight
            t_u, t_d, _ = _fixed_inner(alloc, scn, None)
            fixed = ((1 - w) * uplink_power(s, t_u, ch, rc) * t_u
                     + w * rc.ap_power * downlink_coeff(s, t_d, ch, rc) * t_d)
            up, down = idle_link_slopes(inner, scn, ch)
            val = np.where(idle, val - fixed + (up + down) * s, val)
    return val


def secant_curvature(hess, ds, dg) -> np.ndarray:
    """Per-user curvature ``max(hess, dg/ds)`` where ``s`` actually moved."""
    hess = np.asarray(hess, dtype=float).copy()
    moved = np.abs(ds) > 0
    sec = np.zeros_like(hess)
    np.divide(dg, ds, out=sec, where=moved)
    return np.where(moved & (sec > hess), sec, hess)


def interpolated_shrink(f0: float, f1: float, slope: float, lo: float = 0.1, hi: float = 0.5) -> float:
    """Step fraction at the minimum of the quadratic through f0, slope and f1, safeguarded to [lo, hi]."""
    curv = f1 - f0 - slope
    if slope >= 0 or curv <= 0:
        return hi
    return float(np.clip(-slope / (2.0 * curv), lo, hi))


def _jump_to_bound(s, cand, ds, f_user, upper) -> np.ndarray:
    """Move users straight to the bound their step points at when the model is lower there.

    Steps toward a bound shrink geometrically when curvature grows near it; the
    separable model makes the per-user comparison free.
    """
    bound = np.where(ds < 0, 0.0, upper)
    moving = (ds != 0) & (cand != bound)
    if not moving.any():
        return cand
    trial = np.where(moving, bound, cand)
    better = moving & (f_user(trial) < f_user(cand))
    return np.where(better, bound, cand)


def _termination_for(s, u) -> str:
    if np.all(s == 0):
        return "boundary-s-zero"
    if np.all(s == u):
        return "boundary-s-full"
    return "gradient-tolerance"


def _finish(inner: InnerSolution, scn, trace, termination, k, inner_iters, typical, ch) -> OuterSolution:
    energy, timing = evaluate(inner.alloc, scn, ch)
    return OuterSolution(inner.alloc, energy, timing, trace, termination, k, inner_iters,
                         inner.status, typical, ch, inner, _requests(scn))


def channel_change(old: ChannelRealization, new: ChannelRealization) -> float:
    """Largest relative change of the home-cell noise powers."""
    d1 = np.abs(new.sigma1_sq - old.sigma1_sq) / old.sigma1_sq
    d2 = np.abs(new.sigma2_sq - old.sigma2_sq) / old.sigma2_sq
    return float(max(d1.max(), d2.max()))


def solve(scn: NetworkScenario, ch: ChannelRealization, cfg: OuterConfig | None = None,
          inner_cfg: InnerConfig | None = None) -> OuterSolution:
    """Minimize the weighted energy over ``s`` with the inner problem solved at every iterate.

    With ``refresh="fixed-point"`` the home-cell interference is recomputed from
    the solution's powers and the descent restarts from that solution until the
    noise powers settle, so the result does not depend on the starting split.
    """
    cfg = cfg or OuterConfig()
    cfg.validate()
    icfg = inner_cfg or InnerConfig()
    u = _requests(scn)
    sol = _descend(scn, ch, cfg, icfg, cfg.s_init_fraction * u, cfg.refresh != "off")
    if cfg.refresh != "fixed-point":
        return sol
    outer_iters, inner_iters = sol.outer_iterations, sol.inner_iterations
    rows = [dict(r, round=0) for r in sol.trace.rows]
    for rnd in range(1, cfg.max_refresh_rounds + 1):
        if sol.termination == "latency-infeasible":
            break
        new_ch = refresh_channel(sol.channel, sol.alloc, scn)
        if channel_change(sol.channel, new_ch) <= cfg.refresh_tol:
            break
        if sol.termination == "case-II-unsupported":
            inner = solve_inner(sol.alloc.s, scn, new_ch, icfg)
            inner_iters += inner.iterations
            trace = SolverTrace([dict(rows[-1], round=rnd, objective=inner.primal_value,
                                      inner_iterations=inner.iterations, inner_status=inner.status)])
            sol = _finish(inner, scn, trace, sol.termination, 0, 0, sol.typical, new_ch)
            rows += trace.rows
            continue
        sol = _descend(scn, new_ch, cfg, icfg, sol.alloc.s, False, sol.curvature)
        outer_iters += sol.outer_iterations
        inner_iters += sol.inner_iterations
        rows += [dict(r, round=rnd) for r in sol.trace.rows]
    sol.outer_iterations, sol.inner_iterations = outer_iters, inner_iters
    sol.trace = SolverTrace(rows)
    return sol


def _descend(scn: NetworkScenario, ch: ChannelRealization, cfg: OuterConfig, icfg: InnerConfig,
             s0, refresh_first: bool, curvature=None) -> OuterSolution:
    u = _requests(scn)
    Td = scn.compute.latency
    trace = SolverTrace()
    inner_iters = 0

    def inner_at(s, warm=None):
        nonlocal inner_iters
        c = replace(icfg, warm_start=warm) if (cfg.warm_start and warm is not None) else icfg
        sol = solve_inner(s, scn, ch, c)
        inner_iters += sol.iterations
        return sol

    s = np.asarray(s0, dtype=float).copy()
    if min_latency(s, scn, ch, icfg) > Td:
        # start infeasible: move toward full offloading until the deadline can be met
        if min_latency(u, scn, ch, icfg) > Td:
            fr = np.linspace(0.0, 1.0, 101)
            lat = [min_latency(f * u, scn, ch, icfg) for f in fr]
            s = fr[int(np.argmin(lat))] * u
            inner = inner_at(s)
            trace.add(iteration=0, objective=inner.primal_value, grad_norm=np.nan,
                      T_total=inner.min_latency, s=s.tolist(), inner_iterations=inner.iterations,
                      inner_status=inner.status)
            return _finish(inner, scn, trace, "latency-infeasible", 0, inner_iters, None, ch)
        s = _bisect_latency(u, s, scn, ch, icfg, cfg)

    inner = inner_at(s)
    if refresh_first:
        ch = refresh_channel(ch, inner.alloc, scn)
        inner = inner_at(s)
    typical = check_typical_condition(scn, ch, inner.alloc)
    if not typical.all() and cfg.case2_policy == "all-offload":
        log.info("typical-case condition fails for users %s", np.flatnonzero(~typical))
        s_full = u.copy()
        if min_latency(s_full, scn, ch, icfg) > Td:
            s_full = s
        inner = inner_at(s_full)
        trace.add(iteration=0, objective=inner.primal_value, grad_norm=np.nan, T_total=Td,
                  s=s_full.tolist(), inner_iterations=inner.iterations, inner_status=inner.status)
        return _finish(inner, scn, trace, "case-II-unsupported", 0, inner_iters, typical, ch)

    termination = "iteration-cap"
    k = 0
    prev = None
    for k in range(1, cfg.max_outer_iters + 1):
        alloc = inner.alloc
        f_cur = inner.primal_value
        if cfg.gradient_model == "envelope":
            grad = envelope_gradient(inner, scn, ch)
        else:
            grad = objective_grad_s(alloc, scn, ch)
        hess = objective_hess_s(alloc, scn, ch)
        if curvature is not None and prev is None:
            # a restart after a small channel change keeps the curvature learned so far
            hess = np.maximum(hess, curvature)
        if cfg.gradient_model == "envelope" and prev is not None:
            # the fixed-(t, f) curvature misses how the inner optimum moves with s; the
            # observed gradient change supplies the missing part
            hess = secant_curvature(hess, s - prev[0], grad - prev[1])
        prev = (s.copy(), grad.copy())
        resid = _scaled_residual(s, grad, u, f_cur)
        _, timing = evaluate(alloc, scn, ch)
        trace.add(iteration=k, objective=f_cur, grad_norm=float(np.linalg.norm(resid)),
                  T_total=timing.T_total, s=s.tolist(), inner_iterations=inner.iterations,
                  inner_status=inner.status)
        if np.max(np.abs(resid)) <= cfg.eps1:
            snapped = np.where((grad > 0) & (s <= cfg.snap_fraction * u), 0.0, s)
            snapped = np.where((grad < 0) & (u - s <= cfg.snap_fraction * u), u, snapped)
            if np.any(snapped != s) and min_latency(snapped, scn, ch, icfg) <= Td:
                s = snapped
                inner = inner_at(s, inner.dual.to_vector())
                continue
            # a shallow stationary point near a bound can sit just above the bound itself
            edge = np.where(s <= cfg.probe_fraction * u, 0.0, s)
            edge = np.where(u - s <= cfg.probe_fraction * u, u, edge)
            if np.any(edge != s) and min_latency(edge, scn, ch, icfg) <= Td:
                alt = inner_at(edge, inner.dual.to_vector())
                if alt.status != "latency-infeasible" and alt.primal_value < f_cur:
                    s, inner = edge, alt
                    continue
            termination = _termination_for(s, u)
            break

        # components pressed against a bound by the gradient stay put
        frozen = ((s <= 0) & (grad > 0)) | ((s >= u) & (grad < 0))
        if cfg.method == "gradient":
            dist = np.where(grad > 0, s, u - s)
            scale = u * dist / max(f_cur, 1e-300)
            ds = step_direction(s, grad, hess, "gradient", scale)
        else:
            ds = step_direction(s, grad, hess, "newton")
        ds[frozen] = 0.0
        if cfg.method == "newton":
            decrement = float(np.sum(grad[~frozen] ** 2 / hess[~frozen]))
            if decrement <= 2.0 * cfg.eps1 * f_cur and np.max(np.abs(resid[~frozen]), initial=0.0) <= cfg.eps1:
                termination = _termination_for(s, u)
                break

        if cfg.gradient_model == "envelope":
            def f_user(x, alloc=alloc, inner=inner):
                return lagrangian_user_objective(x, inner, scn, ch)
        else:
            def f_user(x, alloc=alloc):
                return user_objective(x, alloc, scn, ch)

        t = backtracking_search(s, ds, grad, f_user, u, cfg.backtrack_alpha, cfg.backtrack_beta,
                                cfg.max_halvings)
        plain = np.clip(s + t * ds, 0.0, u)
        cand = _jump_to_bound(s, plain, ds, f_user, u)
        if np.all(cand == s):
            termination = _termination_for(s, u)
            break

        # splits that cannot meet the deadline lie outside the domain: shrink the step
        blocked = False
        for _ in range(cfg.max_halvings):
            if min_latency(cand, scn, ch, icfg) <= Td:
                break
            blocked = True
            t = t * cfg.backtrack_beta
            cand = np.clip(s + t * ds, 0.0, u)
        else:
            if min_latency(cand, scn, ch, icfg) > Td:
                cand = s.copy()
        done = "latency-binding" if blocked else _termination_for(s, u)
        if np.all(cand == s):
            termination = done
            break

        new = inner_at(cand, inner.dual.to_vector())
        if new.primal_value > f_cur * (1.0 + cfg.accept_tol) and np.any(cand != plain) \
                and min_latency(plain, scn, ch, icfg) <= Td:
            # the model overrated the bound: fall back to the line-search point
            cand = plain
            new = inner_at(cand, inner.dual.to_vector())
        tries = 0
        while new.primal_value > f_cur * (1.0 + cfg.accept_tol) and tries < cfg.max_rejections:
            # the model promised a decrease that the re-optimized inner does not deliver
            t = t * interpolated_shrink(f_cur, new.primal_value, float(np.dot(grad, cand - s)))
            cand = np.clip(s + t * ds, 0.0, u)
            if -float(np.dot(grad, cand - s)) < cfg.stall_tol * f_cur:
                break  # by convexity even an accepted step would count as stalled
            new = inner_at(cand, inner.dual.to_vector())
            tries += 1
        if new.primal_value > f_cur * (1.0 + cfg.accept_tol):
            termination = done
            break
        near = ((ds < 0) & (cand > 0) & (cand <= cfg.probe_fraction * u)) | \
               ((ds > 0) & (cand < u) & (u - cand <= cfg.probe_fraction * u))
        if near.any():
            probe = np.where(near, np.where(ds < 0, 0.0, u), cand)
            if min_latency(probe, scn, ch, icfg) <= Td:
                alt = inner_at(probe, new.dual.to_vector())
                if alt.primal_value < new.primal_value:
                    cand, new = probe, alt
        stalled = f_cur - new.primal_value < cfg.stall_tol * f_cur
        s, inner = cand, new
        if stalled:
            # progress has dropped to the accuracy of the inner solves
            termination = "latency-binding" if blocked else _termination_for(s, u)
            _, timing = evaluate(inner.alloc, scn, ch)
            trace.add(iteration=k + 1, objective=inner.primal_value, grad_norm=np.nan,
                      T_total=timing.T_total, s=s.tolist(), inner_iterations=inner.iterations,
                      inner_status=inner.status)
            break
        if cfg.refresh == "outer":
            ch = refresh_channel(ch, inner.alloc, scn)
    sol = _finish(inner, scn, trace, termination, k, inner_iters, typical, ch)
    sol.curvature = hess
    return sol
