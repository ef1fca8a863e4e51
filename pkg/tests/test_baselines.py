import itertools

import numpy as np
import pytest

from mecopt.baselines import (BinaryAssignment, MAX_BINARY_USERS, _masks, pinned_frequencies, solve_binary,
                              solve_fixed_frequency, solve_mask, user_energy_floors)
from mecopt.inner_pd import min_latency

from conftest import make_instance


def _exhaustive(scn, ch):
    best = None
    for m in itertools.product((False, True), repeat=len(scn.home_requests)):
        mask = np.array(m)
        s = np.where(mask, scn.home_requests, 0.0)
        if min_latency(s, scn, ch) > scn.compute.latency:
            continue
        sol = solve_mask(mask, scn, ch)
        if sol.termination == "latency-infeasible":
            continue
        if best is None or sol.objective < best.objective:
            best = sol
    return best


def test_split_follows_mask():
    a = BinaryAssignment(np.array([True, False, True]))
    assert a.split([5.0, 6.0, 7.0]).tolist() == [5.0, 0.0, 7.0]
    assert a.n_offloading == 2


def test_masks_cover_every_decision_in_floor_order():
    local = np.array([1.0, 3.0, 2.0])
    offload = np.array([2.0, 1.0, 2.0])
    items = list(_masks(3, local, offload))
    assert len({tuple(m) for _, m in items}) == 8
    floors = [f for f, _ in items]
    assert floors == sorted(floors)
    assert floors[0] == pytest.approx(1.0 + 1.0 + 2.0)


@pytest.mark.parametrize("u,seed", [(10e3, 0), (40e3, 1), (70e3, 2)])
def test_floors_never_exceed_the_actual_energy(u, seed):
    scn, ch = make_instance(3, u, seed=seed)
    local, offload = user_energy_floors(scn, ch)
    for mask in itertools.product((False, True), repeat=3):
        mask = np.array(mask)
        sol = solve_mask(mask, scn, ch)
        if sol.termination == "latency-infeasible":
            continue
        floor = np.where(mask, offload, local).sum()
        assert floor <= sol.objective * (1 + 1e-6)


@pytest.mark.parametrize("u,seed", [(10e3, 3), (30e3, 4), (50e3, 5)])
def test_pruned_search_matches_exhaustive_search(u, seed):
    scn, ch = make_instance(3, u, seed=seed)
    _, sol = solve_binary(scn, ch)
    ref = _exhaustive(scn, ch)
    assert sol.objective == pytest.approx(ref.objective, rel=1e-9)


def test_binary_split_is_all_or_nothing():
    scn, ch = make_instance(4, 40e3, seed=6)
    assignment, sol = solve_binary(scn, ch)
    u = scn.home_requests
    assert np.allclose(sol.alloc.s, assignment.split(u))
    assert sol.timing.T_total <= scn.compute.latency * (1 + 1e-4)


def test_too_many_users_rejected():
    scn, ch = make_instance(MAX_BINARY_USERS + 1, 20e3)
    with pytest.raises(ValueError):
        solve_binary(scn, ch)


def test_pinned_frequencies_split_the_server_evenly():
    scn, _ = make_instance(4)
    f_u, f_m = pinned_frequencies(scn)
    assert np.all(f_u == scn.compute.f_user_max)
    assert f_m.sum() == pytest.approx(scn.compute.f_mec_max)


def test_fixed_frequency_keeps_the_pinned_speeds():
    scn, ch = make_instance(4, 30e3, seed=7)
    sol = solve_fixed_frequency(scn, ch)
    f_u, f_m = pinned_frequencies(scn)
    local = sol.alloc.s < scn.home_requests
    assert np.allclose(sol.alloc.f_u[local], f_u[local])
    offloading = sol.alloc.s > 0
    assert np.allclose(sol.alloc.f_m[offloading], f_m[offloading])
