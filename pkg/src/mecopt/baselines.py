"""Reference schemes: all-or-nothing offloading and partial offloading at fixed CPU speeds."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .inner_pd import InnerConfig, min_latency, solve_inner
from .outer_descent import OuterConfig, OuterSolution, SolverTrace, channel_change, solve
from .phymodel import Allocation, evaluate, refresh_channel
from .scenario import ChannelRealization, NetworkScenario

MAX_BINARY_USERS = 16


@dataclass
class BinaryAssignment:
    offload_mask: np.ndarray

    def split(self, requests) -> np.ndarray:
        return np.where(self.offload_mask, np.asarray(requests, dtype=float), 0.0)

    @property
    def n_offloading(self) -> int:
        return int(np.count_nonzero(self.offload_mask))


def user_energy_floors(scn: NetworkScenario, ch: ChannelRealization) -> tuple[np.ndarray, np.ndarray]:
    """Per-user energy floors for computing locally and for offloading the whole task.

    Each floor drops the coupling between users: the full deadline for every phase,
    the slowest admissible MEC speed and a channel without home-cell interference.
    """
    cc = scn.compute
    u = np.asarray(scn.home_requests, dtype=float)
    k = len(u)
    w, Td = cc.weight, cc.latency
    f_u = np.clip(cc.user_cycles * u / Td, cc.f_user_min, cc.f_user_max)
    local = (1 - w) * cc.user_capacitance * cc.user_cycles * u * f_u**2
    quiet = ch.refresh(np.zeros(k), np.zeros(k))
    full = np.full(k, Td)
    alloc = Allocation(u, full, full, f_u, np.full(k, cc.f_mec_min))
    energy, _ = evaluate(alloc, scn, quiet)
    return local, energy.per_user_weighted(w)


def _masks(k: int, local=None, offload=None):
    """All offloading decisions, cheapest energy floor first.

    Ties keep the fewest offloaders first, so they resolve toward a lighter MEC load.
    """
    combos = itertools.product((False, True), repeat=k)
    items = []
    for m in combos:
        mask = np.array(m, dtype=bool)
        floor = 0.0 if local is None else float(np.where(mask, offload, local).sum())
        items.append((floor, sum(m), m[::-1], mask))
    items.sort(key=lambda it: it[:3])
    for floor, _, _, mask in items:
        yield floor, mask


def solve_mask(mask, scn: NetworkScenario, ch: ChannelRealization, cfg: OuterConfig | None = None,
               inner_cfg: InnerConfig | None = None) -> OuterSolution:
    """Inner solve with ``s`` fixed by ``mask``; the channel refresh follows ``cfg.refresh``."""
    cfg = cfg or OuterConfig()
    icfg = inner_cfg or InnerConfig()
    s = BinaryAssignment(np.asarray(mask, bool)).split(scn.home_requests)
    sol = solve_inner(s, scn, ch, icfg)
    iters = sol.iterations
    rounds = {"off": 0, "initial": 1, "outer": 1}.get(cfg.refresh, 1 + cfg.max_refresh_rounds)
    for _ in range(rounds):
        if sol.status == "latency-infeasible":
            break
        new_ch = refresh_channel(ch, sol.alloc, scn)
        if cfg.refresh == "fixed-point" and channel_change(ch, new_ch) <= cfg.refresh_tol:
            break
        ch = new_ch
        sol = solve_inner(s, scn, ch, icfg)
        iters += sol.iterations
    energy, timing = evaluate(sol.alloc, scn, ch)
    term = "latency-infeasible" if sol.status == "latency-infeasible" else "fixed-split"
    trace = SolverTrace()
    trace.add(iteration=0, objective=energy.E_total_weighted, grad_norm=np.nan, T_total=timing.T_total,
              s=s.tolist(), inner_iterations=sol.iterations, inner_status=sol.status)
    return OuterSolution(sol.alloc, energy, timing, trace, term, 0, iters, sol.status, None, ch, sol,
                         np.asarray(scn.home_requests, float))


def solve_binary(scn: NetworkScenario, ch: ChannelRealization, cfg: OuterConfig | None = None,
                 inner_cfg: InnerConfig | None = None) -> tuple[BinaryAssignment, OuterSolution]:
    """Best whole-task offloading decision by branch and bound over the energy floors."""
    k = len(scn.home_requests)
    if k > MAX_BINARY_USERS:
        raise ValueError(f"binary enumeration capped at {MAX_BINARY_USERS} users, got {k}")
    icfg = inner_cfg or InnerConfig()
    u = np.asarray(scn.home_requests, dtype=float)
    Td = scn.compute.latency
    best = None
    fallback = None
    local, offload = user_energy_floors(scn, ch)
    for floor, mask in _masks(k, local, offload):
        if best is not None and floor >= best[1].objective:
            break  # no remaining decision can beat the incumbent
        s = np.where(mask, u, 0.0)
        excess = min_latency(s, scn, ch, icfg) - Td
        if excess > 0:
            if fallback is None or excess < fallback[0]:
                fallback = (excess, mask)
            continue
        sol = solve_mask(mask, scn, ch, cfg, icfg)
        if sol.termination == "latency-infeasible":
            continue
        if best is None or sol.objective < best[1].objective:
            best = (mask, sol)
    if best is None:
        mask = fallback[1]
        return BinaryAssignment(mask), solve_mask(mask, scn, ch, cfg, icfg)
    return BinaryAssignment(best[0]), best[1]


def pinned_frequencies(scn: NetworkScenario) -> tuple[np.ndarray, np.ndarray]:
    """Local CPUs at full speed and the MEC budget split evenly across the cell's users."""
    k = len(scn.home_requests)
    cc = scn.compute
    return np.full(k, cc.f_user_max), np.full(k, cc.f_mec_max / k)


def solve_fixed_frequency(scn: NetworkScenario, ch: ChannelRealization, cfg: OuterConfig | None = None,
                          inner_cfg: InnerConfig | None = None) -> OuterSolution:
    """Nested descent with CPU frequencies pinned, optimizing only the split and the times."""
    f_u, f_m = pinned_frequencies(scn)
    icfg = replace(inner_cfg or InnerConfig(), pinned_f_u=f_u, pinned_f_m=f_m)
    return solve(scn, ch, cfg, icfg)
