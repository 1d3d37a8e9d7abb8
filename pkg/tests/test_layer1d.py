import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fraccat.constants_kernels import normalization_constant
from fraccat.layer1d import (CutoffPair, LayerSolveError, allen_cahn_nonlinearity, c_H, c_H_alternative,
                             far_interaction, projection_constants, solve_layer, symmetric_grid)
from fraccat.verification import fit_slope


def pv_oracle(w, z0, s):
    # symmetric second difference integrated by adaptive quadrature
    C1 = normalization_constant(1, s)
    g = lambda t: (2 * w(np.array([z0]))[0] - w(np.array([z0 + t]))[0] - w(np.array([z0 - t]))[0]) * t ** (-1 - 2 * s)  # noqa: E731
    a = quad(g, 1e-3, 1, limit=200, epsabs=1e-12)[0]
    b = quad(g, 1, np.inf, limit=400, epsabs=1e-12)[0]
    # [0, 1e-3]: second difference ~ -w''(z0) t^2
    h = 1e-3
    d2 = (w(np.array([z0 + h]))[0] - 2 * w(np.array([z0]))[0] + w(np.array([z0 - h]))[0]) / h**2
    a += -d2 * h ** (2 - 2 * s) / (2 - 2 * s)
    return C1 * (a + b)


def c_H_oracle(w, z0, s):
    C1 = normalization_constant(1, s)
    g = lambda t: (w(np.array([z0 + t]))[0] - w(np.array([z0 - t]))[0]) * t ** (-2 * s)  # noqa: E731
    return C1 * (quad(g, 0, 1, limit=200)[0] + quad(g, 1, np.inf, limit=400)[0])


def test_profile_invariants(profile):
    v, z = profile.values, profile.grid
    np.testing.assert_allclose(z, -z[::-1], atol=1e-12)
    assert np.all(np.diff(v) > 0)
    assert np.all(np.abs(v) < 1)
    np.testing.assert_allclose(v, -v[::-1], atol=1e-12)
    assert profile.evaluate(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)
    assert profile.residual_sup <= 1e-4


def test_tail_exponent_and_coefficient(profile):
    assert profile.tail_exponent == pytest.approx(1.5, rel=0.05)
    assert profile.c_w > 0
    z = np.array([60.0, 80.0, 99.0])
    np.testing.assert_allclose(1 - profile.evaluate(z), profile.c_w * z**-1.5, rtol=0.05)


@pytest.mark.parametrize("z0", [0.3, 1.7, 6.0, 25.0])
def test_equation_holds_off_grid(profile, z0):
    # independent principal-value quadrature of the interpolated profile
    w = profile.evaluate
    lap = pv_oracle(w, z0, profile.s)
    u = w(np.array([z0]))[0]
    assert abs(lap + u**3 - u) <= 1e-4


def test_residual_method_matches_oracle(profile):
    z0 = 2.3
    got = profile.residual(np.array([z0]))[0]
    u = profile.evaluate(np.array([z0]))[0]
    assert got == pytest.approx(pv_oracle(profile.evaluate, z0, profile.s) + u**3 - u, abs=1e-7)


def test_derivative_is_positive_and_even(profile):
    z = np.linspace(-150, 150, 301)
    d = profile.derivative(z)
    assert np.all(d > 0)
    np.testing.assert_allclose(d, d[::-1], rtol=1e-10)


@pytest.mark.parametrize("s", [0.6, 0.9])
def test_other_orders(s):
    p = solve_layer(s)
    assert p.residual_sup <= 1e-4
    assert p.tail_exponent == pytest.approx(2 * s, rel=0.05)


def test_continuation_near_lower_end():
    p = solve_layer(0.51, continuation=True)
    assert p.residual_sup <= 1e-4
    assert np.all(np.diff(p.values) > 0)


def test_solver_rejects_bad_arguments():
    with pytest.raises(ValueError):
        solve_layer(0.75, Z_max=10)
    with pytest.raises(ValueError):
        solve_layer(0.75, node_count=100)
    with pytest.raises(ValueError):
        solve_layer(1.2)


def test_solver_error_type():
    assert issubclass(LayerSolveError, RuntimeError)


def test_symmetric_grid():
    g = symmetric_grid(100.0, 601)
    np.testing.assert_allclose(g, -g[::-1], atol=0)
    assert g[300] == 0.0 and g[-1] == pytest.approx(100.0)


@pytest.mark.parametrize("z0", [0.0, 1.0, 5.0, 20.0])
def test_c_H_against_quadrature(profile, z0):
    assert c_H(z0, profile) == pytest.approx(c_H_oracle(profile.evaluate, z0, profile.s), rel=1e-6)


def test_c_H_even_and_forms_agree(profile):
    z = np.array([0.0, 0.5, 2.0, 9.0, 30.0])
    np.testing.assert_allclose(c_H(z, profile), c_H(-z, profile), atol=1e-10)
    np.testing.assert_allclose(c_H(z, profile), c_H_alternative(z, profile), rtol=1e-5)


def test_c_H_decay(profile):
    z = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
    slope, _ = fit_slope(z, c_H(z, profile))
    assert slope == pytest.approx(-0.5, rel=0.1)


def test_c_H_strict_range(profile):
    with pytest.raises(ValueError):
        c_H(80.0, profile)
    assert np.isfinite(c_H(80.0, profile, strict=False))


def test_projection_constants(profile):
    # frozen from an independent trapezoid rule on a fine grid
    Cb, Cpm = projection_constants(profile)
    assert Cb == pytest.approx(3.0210, rel=1e-3)
    assert Cpm == pytest.approx(0.79994, rel=1e-3)
    z = np.linspace(-40, 40, 4001)
    zeta = CutoffPair().zeta(z, 20.0)
    wp = profile.derivative(z)
    w = profile.evaluate(z)
    ref_pm = np.trapezoid(3 * profile.c_w * (1 - w * w) * zeta * wp, z)
    ref_b = np.trapezoid(c_H(z, profile, strict=False) * zeta * wp, z)
    assert Cpm == pytest.approx(ref_pm, rel=1e-6)
    assert Cb == pytest.approx(ref_b, rel=1e-5)


def test_projection_support_check(profile):
    with pytest.raises(ValueError):
        projection_constants(profile, R_zeta=60.0)


def test_cutoffs():
    c = CutoffPair()
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(c.chi(t), [0, 0, 0.5, 1, 1, 1])
    np.testing.assert_allclose(c.eta(t), [1, 1, 1, 1, 0, 0])


@settings(max_examples=30)
@given(st.floats(min_value=-3, max_value=3), st.floats(min_value=-3, max_value=3))
def test_far_interaction_vanishes_for_opposite_leaves(profile, a, b):
    v = far_interaction(profile, np.array([a]), np.array([b]))[0]
    assert np.isfinite(v)
    assert far_interaction(profile, np.array([a]), np.array([-a]))[0] == pytest.approx(0.0, abs=1e-12)


def test_allen_cahn_nonlinearity():
    np.testing.assert_allclose(allen_cahn_nonlinearity(np.array([-1.0, 0.0, 1.0, 0.5])), [0, 0, 0, -0.375])
