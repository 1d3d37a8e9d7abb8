import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraccat.reduced_profile import (EmdenFowlerState, NonContractionError, RadialProfile, WeightedNormSpec,
                                     catenoid_arc, continue_f_eps, decay_exponent, ef_hamiltonian,
                                     emden_fowler_flow, emden_fowler_variables, far_field_coefficient,
                                     far_ode_residual, graph_mean_curvature, growth_exponent, kernel_Z1,
                                     reduced_context, rescaled_g, self_similar_coefficient, self_similar_profile,
                                     solve_neck, solve_reduced, tail_slope, weighted_norms, wronskian_product)
from fraccat.suites import manufactured_recovery

S = 0.75


def test_exponents():
    assert growth_exponent(S) == pytest.approx(0.8)
    assert decay_exponent(S) == pytest.approx(0.2)
    assert growth_exponent(S) + decay_exponent(S) == pytest.approx(1.0)


@given(st.floats(min_value=0.51, max_value=0.99), st.floats(min_value=0.1, max_value=10.0))
def test_power_solution_solves_far_equation(s, k):
    # A rho^beta with A^{2s+1} beta^2 = k solves g'' + g'/rho = k g^{-2s}
    A, b = self_similar_coefficient(s, k), growth_exponent(s)
    assert A ** (2 * s + 1) * b * b == pytest.approx(k, rel=1e-12)
    rho = np.geomspace(0.1, 100, 7)
    g = self_similar_profile(s, rho, k)
    np.testing.assert_allclose(far_ode_residual(g, rho), 0.0, atol=1e-10)
    np.testing.assert_allclose(kernel_Z1(g, rho), 0.0, atol=1e-10)


def test_catenoid_arc_derivatives():
    r = np.array([1.2, 3.0, 50.0])
    f, f1, f2, _ = catenoid_arc(r)
    h = 1e-5
    np.testing.assert_allclose(f1, (catenoid_arc(r + h, derivatives=False) - catenoid_arc(r - h, derivatives=False)) / (2 * h), rtol=1e-8)
    np.testing.assert_allclose(graph_mean_curvature(r, f1, f2), 0.0, atol=1e-12)


def test_continuation_bounds_and_far_coefficient():
    eps = 1e-3
    f = continue_f_eps(S, eps, 1e8)
    L = abs(np.log(eps))
    assert f.info["f_min"] >= 0.5 * (2 * S - 1) * L
    assert f.info["slope_bound"] < 2.0
    r = np.array([1e6, 1e7])
    ratio = f(r) / (far_field_coefficient(S, eps) * r ** growth_exponent(S))
    np.testing.assert_allclose(ratio, 1.0, atol=0.1)


def test_continuation_rejects_short_domain():
    with pytest.raises(ValueError):
        continue_f_eps(S, 1e-3, 10.0)
    with pytest.raises(ValueError):
        continue_f_eps(S, 0.05, 1e8)


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=0.6, max_value=1.6), st.floats(min_value=-0.3, max_value=0.3))
def test_hamiltonian_non_increasing(h0, hp0):
    tr = emden_fowler_flow(S, EmdenFowlerState(0.0, h0, hp0, S), 20.0, samples=801)
    assert np.max(np.diff(tr.hamiltonian)) <= 1e-12
    assert tr.hamiltonian[0] == pytest.approx(ef_hamiltonian(S, h0, hp0))


@pytest.mark.parametrize("s", [0.6, 0.75, 0.9])
def test_emden_fowler_rate_and_spacing(s):
    tr = emden_fowler_flow(s, EmdenFowlerState(0.0, 1.05, 0.0, s), 40.0)
    assert tr.envelope_rate(5.0) == pytest.approx(1.0, rel=0.1)
    assert tr.crossing_spacing() == pytest.approx(np.pi / np.sqrt(2 * s), rel=0.05)


def test_emden_fowler_rejects_nonpositive_start():
    with np.errstate(divide="ignore"), pytest.raises(ValueError):
        emden_fowler_flow(S, EmdenFowlerState(0.0, 0.0, 0.0, S), 1.0)


def test_rescaled_profile_tends_to_power_solution():
    eps = 1e-3
    g = rescaled_g(continue_f_eps(S, eps, 1e8), eps)
    t, h, hp = emden_fowler_variables(g, np.array([1e2, 1e3]))
    np.testing.assert_allclose(h, 1.0, atol=0.05)


@pytest.fixture(scope="module")
def context(constants):
    return reduced_context(S, 1e-3, constants["C_bar_pm"] / constants["C_bar"])


def test_wronskian(context):
    Z2 = context.Z2_profile
    np.testing.assert_allclose(Z2.info["rW"], 1.0, atol=1e-6)
    rho = np.geomspace(Z2.r[0], Z2.r[-1], 50)
    np.testing.assert_allclose(wronskian_product(Z2, rho), 1.0, atol=1e-6)


def test_right_inverse_recovers_manufactured_solution(context):
    err, bound = manufactured_recovery(context)
    assert err <= 1e-4
    assert np.isfinite(bound) and bound > 0


def test_right_inverse_bound_stable(constants):
    k = constants["C_bar_pm"] / constants["C_bar"]
    b = [manufactured_recovery(reduced_context(S, 1e-3, k, nodes=n))[1] for n in (1500, 6000)]
    assert b[1] == pytest.approx(b[0], rel=0.1)


def test_norm_spec_validation():
    with pytest.raises(ValueError):
        WeightedNormSpec(S, gamma=2.5)
    with pytest.raises(ValueError):
        WeightedNormSpec(S, alpha=1.0)


@given(st.floats(min_value=-5, max_value=5))
def test_norms_are_homogeneous(c):
    r = np.geomspace(1.5, 100, 200)
    f = np.sin(r) / r
    spec = WeightedNormSpec(S)
    base = weighted_norms((r, f, f, f), spec, "*")
    assert weighted_norms((r, c * f, c * f, c * f), spec, "*") == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)


def test_neck_is_catenoid():
    nk = solve_neck()
    np.testing.assert_allclose(nk.G, np.cosh(nk.z), rtol=1e-10)
    assert nk.residual <= 1e-10
    assert nk.r1 == pytest.approx(np.sqrt(2.0))


def test_reduced_solution_report(reduced_solution):
    rep = reduced_solution.report
    assert rep["contraction_rate"] < 0.5
    assert rep["tail_fit"]["slope"] == pytest.approx(0.8, rel=0.05)
    assert rep["inner_envelope_ok"]
    assert rep["residual_norms"]["matching_value"] <= 1e-8
    assert rep["residual_norms"]["matching_slope"] <= 1e-6


def test_reduced_tail_slope_function(reduced_solution):
    F = reduced_solution.F
    rt = reduced_solution.report["tilde_r_eps"]
    assert tail_slope(F, 10 * rt, 100 * rt) == pytest.approx(reduced_solution.report["tail_fit"]["slope"])


def test_mid_residual_scaling(constants):
    a = solve_reduced(S, 1e-2, constants).report["residual_norms"]["mid_curvature_sup"]
    b = solve_reduced(S, 5e-3, constants).report["residual_norms"]["mid_curvature_sup"]
    assert np.log2(a / b) == pytest.approx(2 * S - 1, rel=0.15)


def test_reduced_input_checks(constants):
    with pytest.raises(ValueError):
        solve_reduced(S, 0.02, constants)
    with pytest.raises(ValueError):
        solve_reduced(S, 1e-3, {"C_bar": -1.0, "C_bar_pm": 1.0})


@pytest.mark.parametrize("k", [1e2, 1e4])
def test_strong_forcing_does_not_contract(k):
    with pytest.raises(NonContractionError):
        solve_reduced(S, 1e-2, {"C_bar": 1.0, "C_bar_pm": k})


def test_radial_profile_tail_and_domain():
    r = np.geomspace(1, 100, 50)
    A = 2.0
    p = RadialProfile(r, A * r**0.8, A * 0.8 * r**-0.2, A * 0.8 * -0.2 * r**-1.2, S)
    p.fit_tail()
    assert p.tail_A == pytest.approx(A, rel=1e-8)
    assert p(np.array([400.0]))[0] == pytest.approx(A * 400**0.8, rel=1e-8)
    with pytest.raises(ValueError):
        p(np.array([0.5]))
