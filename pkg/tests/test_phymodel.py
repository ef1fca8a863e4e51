import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mecopt.phymodel import (Allocation, check_typical_condition, downlink_coeff, evaluate, gradient_terms,
                             objective_grad_s, objective_hess_s, refresh_channel, uplink_power, user_objective)

from conftest import make_instance


def _alloc(scn, frac=0.5, t_u=4e-3, t_d=5e-3, f_u=1e9, f_m=5e9):
    k = len(scn.home_requests)
    s = frac * scn.home_requests
    return Allocation(s, np.full(k, t_u), np.full(k, t_d), np.full(k, f_u), np.full(k, f_m))


def test_uplink_power_inverts_the_rate_formula(instance4):
    scn, ch = instance4
    rc = scn.radio
    s = np.array([1e3, 5e3, 1e4, 2e4])
    t = np.array([1e-3, 2e-3, 5e-3, 1e-2])
    p = uplink_power(s, t, ch, rc)
    sinr = p * rc.antennas * ch.gamma_hat / (rc.cap_gap_ul * ch.sigma1_sq)
    bits = rc.pilot_overhead * rc.bandwidth * t * np.log2(1 + sinr)
    np.testing.assert_allclose(bits, s, rtol=1e-12)


def test_downlink_coefficient_inverts_the_rate_formula(instance4):
    scn, ch = instance4
    rc = scn.radio
    s = np.array([1e3, 5e3, 1e4, 2e4])
    t = np.array([1e-3, 2e-3, 5e-3, 1e-2])
    eta = downlink_coeff(s, t, ch, rc)
    sinr = eta * rc.ap_power * rc.antennas * ch.gamma_hat / (rc.cap_gap_dl * ch.sigma2_sq)
    bits = rc.bandwidth * t * np.log2(1 + sinr)
    np.testing.assert_allclose(bits, rc.output_ratio * s, rtol=1e-12)


def test_zero_bits_cost_nothing(instance4):
    scn, ch = instance4
    assert np.all(uplink_power(np.zeros(4), np.zeros(4), ch, scn.radio) == 0)
    with pytest.raises(ValueError):
        uplink_power(np.ones(4), np.zeros(4), ch, scn.radio)


def test_evaluate_energy_breakdown(instance4):
    scn, ch = instance4
    cc = scn.compute
    a = _alloc(scn)
    e, tm = evaluate(a, scn, ch)
    q = scn.home_requests - a.s
    np.testing.assert_allclose(e.e_lc, cc.user_capacitance * cc.user_cycles * q * a.f_u**2)
    np.testing.assert_allclose(e.e_oc, cc.mec_capacitance * cc.mec_cycles * a.s * a.f_m**2)
    np.testing.assert_allclose(e.e_off, e.p * a.t_u)
    np.testing.assert_allclose(e.e_dl, scn.radio.ap_power * e.eta * a.t_d)
    assert e.E_total_weighted == pytest.approx((1 - cc.weight) * e.E_u + cc.weight * e.E_m)
    assert e.E_u == pytest.approx(np.sum(e.e_off + e.e_lc))


def test_evaluate_timing(instance4):
    scn, ch = instance4
    cc = scn.compute
    a = _alloc(scn)
    _, tm = evaluate(a, scn, ch)
    assert tm.T1 == pytest.approx(4e-3)
    assert tm.T2 == pytest.approx(cc.mec_cycles * 10e3 / 5e9)
    assert tm.T3 == pytest.approx(5e-3)
    local = cc.user_cycles * 10e3 / 1e9
    assert tm.T_total == pytest.approx(max(4e-3 + local, tm.T1 + tm.T2 + tm.T3))
    assert tm.slack == pytest.approx(cc.latency - tm.T_total)
    assert tm.phase_fractions.sum() == pytest.approx(1.0)


def test_all_local_allocation_has_no_phases(instance4):
    scn, ch = instance4
    k = 4
    a = Allocation(np.zeros(k), np.zeros(k), np.zeros(k), np.full(k, 1e9), np.zeros(k))
    e, tm = evaluate(a, scn, ch)
    assert e.E_m == 0.0
    assert tm.T1 == tm.T2 == tm.T3 == 0.0
    assert np.all(tm.phase_fractions == 0)
    assert tm.T_total == pytest.approx(scn.compute.user_cycles * 20e3 / 1e9)


def test_violations_are_reported_not_raised(instance4):
    scn, ch = instance4
    a = _alloc(scn, frac=1.0, t_u=1e-5, t_d=1e-5)
    e, tm = evaluate(a, scn, ch)
    assert tm.power_cap_exceeded.all()
    assert tm.eta_sum_exceeded


def _fd_grad(f, s, h):
    return (f(s + h) - f(s - h)) / (2 * h)


@pytest.mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_gradient_matches_central_differences(instance4, frac):
    scn, ch = instance4
    a = _alloc(scn, frac)
    h = 1e-3 * scn.home_requests

    def f(s):
        return user_objective(s, a, scn, ch)

    fd = _fd_grad(f, a.s, h)
    np.testing.assert_allclose(objective_grad_s(a, scn, ch), fd, rtol=1e-6)


@pytest.mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_hessian_matches_differences_of_gradient(instance4, frac):
    scn, ch = instance4
    a = _alloc(scn, frac)
    h = 1e-3 * scn.home_requests

    def g(s):
        b = a.copy()
        b.s = s
        return objective_grad_s(b, scn, ch)

    fd = _fd_grad(g, a.s, h)
    np.testing.assert_allclose(objective_hess_s(a, scn, ch), fd, rtol=1e-6)


def test_gradient_terms_split(instance4):
    scn, ch = instance4
    a = _alloc(scn)
    terms = gradient_terms(a, scn, ch)
    assert terms.shape == (4, 4)
    assert np.all(terms[:3] > 0) and np.all(terms[3] < 0)
    np.testing.assert_allclose(terms.sum(0), objective_grad_s(a, scn, ch))


def test_typical_condition_sign_of_gradient_at_zero(instance4):
    scn, ch = instance4
    a = _alloc(scn)
    g0 = gradient_terms(a, scn, ch, at_zero=True).sum(0)
    assert np.array_equal(check_typical_condition(scn, ch, a), g0 >= 0)
    # a very fast local CPU makes local computing expensive and breaks the condition
    fast = _alloc(scn, f_u=1.8e9)
    fast.f_u = np.full(4, 1e12)
    assert not check_typical_condition(scn, ch, fast).any()


def test_refresh_channel_uses_capped_powers(instance4):
    scn, ch = instance4
    a = _alloc(scn, frac=1.0, t_u=1e-5)
    new = refresh_channel(ch, a, scn)
    p = np.full(4, scn.radio.ut_power_max)
    np.testing.assert_allclose(new.sigma1_sq, ch.sigma1_fixed + np.dot(ch.home_beta, p))


@given(st.floats(0.0, 1.0), st.floats(2e-4, 2e-2), st.floats(2e-4, 2e-2), st.integers(0, 50))
def test_hessian_positive_everywhere_sampled(frac, t_u, t_d, seed):
    scn, ch = make_instance(4, seed=seed)
    a = _alloc(scn, frac, t_u=t_u, t_d=t_d)
    assert np.all(objective_hess_s(a, scn, ch) > 0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(1e-3, 2e-2))
def test_objective_convex_along_segments(fa, fb, theta, t_u):
    scn, ch = make_instance(4, seed=3)
    a = _alloc(scn, t_u=t_u)
    sa, sb = fa * scn.home_requests, fb * scn.home_requests
    mid = theta * sa + (1 - theta) * sb
    f = lambda s: user_objective(s, a, scn, ch).sum()
    assert f(mid) <= theta * f(sa) + (1 - theta) * f(sb) + 1e-12 * abs(f(sa) + f(sb))
