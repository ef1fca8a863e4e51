import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mecopt.special_math import (INV_E, CubicCoeffs, cubic_positive_root, cubic_residual_scale,
                                 cubic_root_clamped, lambert_w0, lambert_w0p1, solve_cubic_positive_root)

from oracles import shifted_identity_residual, w_identity_residual


@pytest.mark.parametrize("x", [-INV_E, -INV_E + 1e-15, -0.3, -1e-3, 0.0, 1e-12, 0.5, 1.0, math.e, 1e3, 1e300])
def test_lambert_w0_identity_at_selected_points(x):
    w = lambert_w0(x)
    if x == -INV_E:
        assert w == pytest.approx(-1.0, abs=1e-7)
    else:
        assert w_identity_residual(x) <= 1e-12


def test_lambert_w0_matches_high_precision_reference():
    import mpmath
    mpmath.mp.dps = 50
    xs = np.concatenate([-INV_E + np.logspace(-12, -0.5, 50), np.logspace(-10, 200, 200)])
    for x in xs:
        ref = float(mpmath.lambertw(mpmath.mpf(x)).real)
        # |x W'(x)| = |W / (1 + W)| blows up at the branch point
        cond = abs(ref / (1.0 + ref))
        assert abs(lambert_w0(x) - ref) <= 4e-16 * max(cond, 1.0) * max(abs(ref), 1.0) + 1e-300


def test_lambert_w0_matches_scipy_away_from_branch_point():
    from scipy.special import lambertw
    xs = np.concatenate([np.linspace(-0.3, 0.0, 20), np.logspace(-10, 200, 200)])
    ours = np.array([lambert_w0(x) for x in xs])
    np.testing.assert_allclose(ours, lambertw(xs, 0).real, rtol=1e-13, atol=1e-15)


def test_lambert_w0_rejects_arguments_below_branch_point():
    with pytest.raises(ValueError):
        lambert_w0(-0.4)


@pytest.mark.parametrize("y", [0.0, 1e-300, 1e-30, 1e-12, 1e-6, 0.01, 0.5, 1.0, 2.0, 50.0, 1e7, 1e9, 1e200])
def test_shifted_lambert_identity(y):
    assert shifted_identity_residual(y) <= 1e-12


def test_shifted_lambert_near_branch_point_keeps_relative_precision():
    # near y = 0 the root behaves like sqrt(2y); the naive 1 + W0(-1/e + y/e) loses every digit
    for y in np.logspace(-30, -8, 12):
        v = lambert_w0p1(y)
        assert v == pytest.approx(math.sqrt(2 * y), rel=1e-3)
        assert shifted_identity_residual(y) <= 1e-12


def test_shifted_lambert_agrees_with_plain_branch_away_from_branch_point():
    for y in [0.5, 3.0, 40.0, 1e4]:
        assert lambert_w0p1(y) == pytest.approx(1.0 + lambert_w0((y - 1.0) / math.e), rel=1e-13)


def test_shifted_lambert_rejects_negative():
    with pytest.raises(ValueError):
        lambert_w0p1(-1e-3)


@given(st.floats(min_value=0.0, max_value=1e250, allow_nan=False))
def test_shifted_lambert_identity_property(y):
    assert shifted_identity_residual(y) <= 1e-12


@given(st.floats(min_value=-INV_E + 1e-14, max_value=1e250, allow_nan=False))
def test_lambert_w0_identity_property(x):
    if x == 0.0:
        assert lambert_w0(x) == 0.0
    else:
        assert w_identity_residual(x) <= 1e-12


def test_lambert_w0_monotone():
    xs = np.linspace(-INV_E, 10, 2001)
    ws = np.array([lambert_w0(x) for x in xs])
    assert np.all(np.diff(ws) > 0)


def cubic_rel_residual(a, b, c, d, r):
    co = CubicCoeffs(a, b, c, d)
    val = a * r**3 + b * r**2 + c * r + d
    return abs(val) / cubic_residual_scale(co, r)


def test_cubic_positive_root_solves_the_stationarity_form():
    # a r^3 + b r^2 - d' = 0 with a, b >= 0, d' > 0: the form produced by the MEC frequency condition
    r = cubic_positive_root(2.0, 3.0, 0.0, -5.0)
    assert r > 0
    assert cubic_rel_residual(2.0, 3.0, 0.0, -5.0, r) <= 1e-12


def test_cubic_with_zero_quadratic_term_is_a_cube_root():
    assert cubic_positive_root(4.0, 0.0, 0.0, -32.0) == pytest.approx(2.0, rel=1e-14)


def test_cubic_clamping():
    assert cubic_root_clamped(1.0, 0.0, 0.0, -8.0, 3.0, 10.0) == 3.0
    assert cubic_root_clamped(1.0, 0.0, 0.0, -8.0, 0.0, 1.5) == 1.5
    assert solve_cubic_positive_root(CubicCoeffs(1.0, 0.0, 0.0, -8.0)) == pytest.approx(2.0)


def test_cubic_residual_on_random_instances(rng):
    # magnitudes spanning the solver's range (kappa * cycles * bits, multipliers, ...)
    n = 10_000
    a = 10.0 ** rng.uniform(-30, 0, n)
    b = np.where(rng.random(n) < 0.3, 0.0, 10.0 ** rng.uniform(-25, 5, n))
    d = -(10.0 ** rng.uniform(-10, 10, n))
    worst = 0.0
    for i in range(n):
        r = cubic_positive_root(a[i], b[i], 0.0, d[i])
        assert r > 0
        worst = max(worst, cubic_rel_residual(a[i], b[i], 0.0, d[i], r))
    assert worst <= 1e-9


@given(st.floats(1e-20, 1e3), st.floats(0.0, 1e3), st.floats(1e-12, 1e12))
def test_cubic_root_is_unique_positive_property(a, b, dd):
    r = cubic_positive_root(a, b, 0.0, -dd)
    assert r > 0
    assert cubic_rel_residual(a, b, 0.0, -dd, r) <= 1e-9
    # the cubic is increasing for r > 0, so the root splits signs
    assert a * (0.5 * r) ** 3 + b * (0.5 * r) ** 2 - dd < 0
