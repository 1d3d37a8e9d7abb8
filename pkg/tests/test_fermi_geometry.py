import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraccat.fermi_geometry import (ApproxSolutionSpec, FermiChart, GraphMeridian, TubeError, approx_solution,
                                    catenoid_graph, catenoid_meridian, curvatures, fd_jacobian, fermi_coordinates,
                                    fermi_jacobian, flat_meridian, graph_remainder, kernel_expansion_check,
                                    neck_mean_curvature)
from fraccat.verification import fit_slope


@pytest.fixture(scope="module")
def chart():
    return FermiChart(catenoid_meridian(), eps=0.02, delta_bar=0.1)


@pytest.mark.parametrize("r", [1.1, 2.0, 10.0, 100.0])
def test_catenoid_graph_is_minimal(r):
    c = curvatures(catenoid_graph, r)
    assert abs(c.H) <= 1e-10
    # independent divergence-form difference quotient
    assert abs(c.divergence_form) <= 1e-6


def test_sphere_mean_curvature():
    # lower hemisphere of the unit sphere as a graph: both curvatures equal 1
    def F(r):
        r = np.asarray(r, dtype=float)
        q = np.sqrt(1 - r * r)
        return -q, r / q, 1 / q**3

    c = curvatures(F, 0.5)
    assert c.kappa1 == pytest.approx(1.0, rel=1e-12)
    assert c.kappa2 == pytest.approx(1.0, rel=1e-12)
    assert c.divergence_form == pytest.approx(2.0, rel=1e-6)


@pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 2.0])
def test_neck_form_vanishes_for_cosh(z):
    assert abs(neck_mean_curvature(lambda x: (np.cosh(x), np.sinh(x), np.cosh(x)), z)) <= 1e-10


def test_neck_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        neck_mean_curvature(lambda x: (np.zeros_like(x), x, x), 0.3)


def test_chart_mean_curvature_vanishes(chart):
    sig = np.linspace(-4, 4, 41)
    np.testing.assert_allclose(chart.mean_curvature(sig), 0.0, atol=1e-12)


def test_round_trip_and_jacobian(chart, rng):
    sig = rng.uniform(-3, 3, 100)
    th = rng.uniform(0, 2 * np.pi, 100)
    z = rng.uniform(-0.5, 0.5, 100) * chart.delta_bar / chart.eps
    x = chart.phi(sig, th, z)
    y, zz, ss = fermi_coordinates(chart, x)
    np.testing.assert_allclose(zz, z, atol=1e-6)
    np.testing.assert_allclose(ss, sig, atol=1e-6)
    np.testing.assert_allclose(y + zz[:, None] * 0, chart.phi(ss, th, 0 * ss), atol=1e-6)
    for a, b in zip(sig, z):
        assert fermi_jacobian(chart, a, b) == pytest.approx(fd_jacobian(chart, a, b, h=1e-3), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-4, max_value=4), st.floats(min_value=-2.0, max_value=2.0))
def test_round_trip_property(sigma, z):
    ch = FermiChart(catenoid_meridian(), eps=0.1, delta_bar=0.1)
    rho, x3 = ch.phi_planar(np.array([sigma]), np.array([z]))
    s2, z2 = ch.project_planar(rho, x3)
    assert z2[0] == pytest.approx(z, abs=1e-8)
    assert s2[0] == pytest.approx(sigma, abs=1e-8)


def test_tube_check(chart):
    with pytest.raises(TubeError):
        fermi_coordinates(chart, np.array([[0.0, 0.0, 1e4]]))


def test_flat_chart_is_identity():
    ch = FermiChart(flat_meridian(0.0), eps=1.0)
    x = np.array([[3.0, 4.0, 0.7]])
    _, z, sig = fermi_coordinates(ch, x)
    assert z[0] == pytest.approx(0.7) and sig[0] == pytest.approx(5.0)
    assert fermi_jacobian(ch, 5.0, 0.7) == pytest.approx(1.0)


def test_jacobian_degenerate_tube():
    ch = FermiChart(catenoid_meridian(), eps=1.0)
    with pytest.raises(TubeError):
        fermi_jacobian(ch, 0.0, 5.0)


def test_graph_remainder_order(chart):
    ys = np.array([1.0, 0.5, 0.25, 0.125])
    g = [abs(graph_remainder(chart, 0.7, y, 0.5 * y)) for y in ys]
    order, r2 = fit_slope(ys, g)
    assert order >= 2.25
    assert r2 > 0.999


def test_kernel_expansion_within_bound(chart):
    s = 0.75
    for y in [(0.5, 0.2), (1.0, -0.5), (2.0, 1.0)]:
        exact, expanded, bound = kernel_expansion_check(chart, 0.7, 0.3, -0.2, y, s)
        assert abs(exact - expanded) <= 10 * bound


def test_graph_meridian_geometry():
    m = GraphMeridian(lambda r: (r * r, 2 * r, 2 + 0 * r), r_start=0.0)
    (r, h), (r1, h1), _ = m.derivs(np.array([1.5]))
    assert (r[0], h[0], r1[0], h1[0]) == (1.5, 2.25, 1.0, 3.0)


@pytest.fixture(scope="module")
def spec(profile):
    ch = FermiChart(catenoid_meridian(), eps=0.02, delta_bar=0.5)
    return ApproxSolutionSpec(ch, profile, catenoid_graph)


def test_approximate_solution_limits(spec):
    eps = spec.eps
    # +1 outside the two leaves, -1 between them, 0 on the interface
    r = np.array([200 / eps])
    F = spec.F_eps(r)[0]
    assert spec.evaluate_rz(r, F + 1e4)[0] == pytest.approx(1.0, abs=1e-3)
    assert spec.evaluate_rz(r, 0.0)[0] < -0.99
    assert spec.evaluate_rz(np.array([0.0]), 0.0)[0] > 0.99
    # on the upper leaf only the tail of the lower layer remains
    tail = spec.profile.c_w * (2 * F) ** (-2 * spec.profile.s)
    assert spec.evaluate_rz(r, F)[0] == pytest.approx(tail, rel=0.05)


def test_approximate_solution_even_in_x3(spec, rng):
    rho = rng.uniform(0, 300, 50)
    x3 = rng.uniform(0, 300, 50)
    np.testing.assert_allclose(spec.evaluate_rz(rho, x3), spec.evaluate_rz(rho, -x3), atol=1e-12)


def test_approximate_solution_axisymmetric(spec):
    th = np.linspace(0, 2 * np.pi, 7)
    x = np.stack([120 * np.cos(th), 120 * np.sin(th), np.full_like(th, 40.0)], axis=1)
    u = approx_solution(spec, x)
    np.testing.assert_allclose(u, u[0], atol=1e-12)


def test_parameter_ranges_enforced(profile):
    ch = FermiChart(catenoid_meridian(), eps=0.02)
    with pytest.raises(ValueError):
        ApproxSolutionSpec(ch, profile, catenoid_graph, alpha=0.6)
    with pytest.raises(ValueError):
        ApproxSolutionSpec(ch, profile, catenoid_graph, tau=1.5)


def test_leaf_height(spec):
    eps = spec.eps
    r = np.array([0.5 / eps, 3 / eps])
    np.testing.assert_allclose(spec.F_eps(r), [0.0, np.arccosh(3.0) / eps])
