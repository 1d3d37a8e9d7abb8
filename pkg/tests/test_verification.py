import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gamma

from fraccat.constants_kernels import normalization_constant
from fraccat.verification import (AxisymGrid, EnergyReport, EnergyRule, ErrorSample, LayerPrimitive, audit_csv,
                                  axisym_quadratic_form, double_well, energy_csv, energy_growth, exterior_bound,
                                  field_laplacian_axisym, fit_slope, flat_exterior, localized_energy,
                                  rayleigh_probe, rayleigh_quotient_1d, summary_json, window_weight)

S = 0.75


@given(st.floats(min_value=0.0, max_value=3.0))
def test_window_weight_range_and_plateaus(t):
    v = float(window_weight(t))
    assert 0.0 <= v <= 1.0
    if t <= 0.5:
        assert v == 1.0
    if t >= 1.0:
        assert v == 0.0


def test_window_weight_monotone():
    t = np.linspace(0, 1.2, 500)
    assert np.all(np.diff(window_weight(t)) <= 0)
    assert window_weight(0.75) == pytest.approx(0.5)


@given(st.floats(min_value=-3, max_value=3), st.floats(min_value=0.1, max_value=10))
def test_fit_slope_recovers_power(p, c):
    x = np.geomspace(1, 100, 6)
    slope, r2 = fit_slope(x, c * x**p)
    assert slope == pytest.approx(p, abs=1e-9)
    if abs(p) > 1e-3:
        assert r2 == pytest.approx(1.0)


def test_layer_primitive(profile):
    W = LayerPrimitive(profile)
    for t in (3.0, 150.0):
        ref = quad(lambda x: profile.evaluate(np.array([x]))[0], 0, t, limit=400)[0]
        assert W(np.array([t]))[0] == pytest.approx(ref, rel=1e-6)


def flat_exterior_oracle(profile, z0, R, s):
    # 2 pi C3 int_R^inf rho^{-1-2s} int_{-1}^{1} (w(z0) - w(z0 + rho mu)) dmu drho
    w = lambda x: profile.evaluate(np.array([x]))[0]  # noqa: E731
    w0 = w(z0)
    inner = lambda rho: quad(lambda m: w0 - w(z0 + rho * m), -1, 1, limit=200, points=[-z0 / rho])[0]  # noqa: E731
    val = quad(lambda rho: rho ** (-1 - 2 * s) * inner(rho), R, np.inf, limit=200)[0]
    return 2 * np.pi * normalization_constant(3, s) * val


@pytest.mark.parametrize("z0", [0.0, 2.0, 8.0])
def test_flat_exterior_against_nested_quadrature(profile, z0):
    R = 10.0
    got = flat_exterior(profile, z0, R, smooth=False)
    assert got == pytest.approx(flat_exterior_oracle(profile, z0, R, S), rel=1e-5, abs=1e-9)
    assert abs(flat_exterior(profile, z0, R)) <= exterior_bound(S, R)


def lorentzian_laplacian(x, s):
    return gamma(2 * s + 1) * np.cos((2 * s + 1) * np.arctan(x)) * (1 + x * x) ** (-(2 * s + 1) / 2)


@pytest.mark.parametrize("h0", [0.0, 1.5])
def test_axisymmetric_laplacian_of_one_dimensional_field(h0):
    # a field of x3 alone has the one-dimensional fractional Laplacian
    got = field_laplacian_axisym(lambda r, h: 1.0 / (1.0 + h * h), None, 3.0, h0, S, 4.0)
    assert got == pytest.approx(lorentzian_laplacian(h0, S), rel=2e-3)


def test_double_well():
    np.testing.assert_allclose(double_well(np.array([-1.0, 0.0, 1.0])), [0.0, 0.25, 0.0])


def flat_energy_per_area(profile, s):
    # (C1/2) int_0^inf t^{-1-2s} int (w(a+t) - w(a))^2 da dt + int W(w)
    w = profile.evaluate
    a = np.concatenate([-np.geomspace(1e7, 1e-3, 4000), [0.0], np.geomspace(1e-3, 1e7, 4000)])
    tt = np.geomspace(1e-4, 1e6, 600)
    I = np.array([np.trapezoid((w(a + t / 2) - w(a - t / 2)) ** 2, a) for t in tt])
    gag = np.trapezoid(I * tt ** (-2 * s), np.log(tt)) + 4 * tt[-1] ** (1 - 2 * s) / (2 * s - 1)
    pot = 2 * quad(lambda z: double_well(w(np.array([z]))[0]), 0, np.inf, limit=400)[0]
    return normalization_constant(1, s) / 2 * gag + pot


def test_flat_energy_per_area_matches_one_dimensional_oracle(profile):
    sigma = flat_energy_per_area(profile, S)
    R = 1000.0
    e, se = localized_energy(lambda r, h: profile.evaluate(h), S, R)
    assert e / (np.pi * R * R) == pytest.approx(sigma, rel=5e-3)
    assert se < 1e-3 * e


def test_energy_is_deterministic(profile):
    f = lambda r, h: profile.evaluate(h)  # noqa: E731
    rule = EnergyRule(samples=256)
    assert localized_energy(f, S, 300.0, rule=rule, seed=3) == localized_energy(f, S, 300.0, rule=rule, seed=3)


def test_energy_of_constant_is_zero():
    rep = energy_growth(lambda r, h: np.ones(np.broadcast(r, h).shape), S, [10, 20, 40, 80],
                        rule=EnergyRule(samples=64))
    assert rep.energies == [0.0] * 4
    assert rep.fitted_slope == 0.0


def test_energy_growth_needs_wide_range():
    f = lambda r, h: np.ones(np.broadcast(r, h).shape)  # noqa: E731
    with pytest.raises(ValueError):
        energy_growth(f, S, [10, 20, 40])
    with pytest.raises(ValueError):
        energy_growth(f, S, [10, 20, 30, 40])


def test_energy_report_monotone():
    assert EnergyReport([1, 2], [1.0, 2.0], 1.0, 1.0).monotone
    assert not EnergyReport([1, 2], [2.0, 1.0], -1.0, 1.0).monotone


def test_gagliardo_of_ring_matches_cartesian_fft():
    s = S
    f = lambda r, h: np.exp(-((r - 8) ** 2 + h * h) / 2)  # noqa: E731
    g = AxisymGrid(16, 16, 0.25)
    R, H = g.mesh()
    gag, _, n2 = axisym_quadratic_form(f(R, H), 0 * R, g, s)
    n, dx = 128, 0.25
    x = (np.arange(n) - n // 2) * dx
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    phi = f(np.hypot(X, Y), Z)
    k = 2 * np.pi * np.fft.fftfreq(n, dx)
    KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
    ref = np.sum((KX**2 + KY**2 + KZ**2) ** s * np.abs(np.fft.fftn(phi)) ** 2) * dx**6 * k[1] ** 3 / (2 * np.pi) ** 3
    assert gag == pytest.approx(ref, rel=1e-3)
    assert n2 == pytest.approx(np.sum(phi**2) * dx**3, rel=1e-10)


def test_parseval_at_order_zero():
    g = AxisymGrid(16, 16, 0.25)
    R, H = g.mesh()
    phi = np.exp(-((R - 8) ** 2 + H * H) / 2)
    gag, _, n2 = axisym_quadratic_form(phi, 0 * R, g, 0.0)
    assert gag == pytest.approx(n2, rel=1e-8)


def test_flat_layer_is_stable(profile):
    # bumps along a flat interface have positive quotients, shrinking like 1/L^2
    g = AxisymGrid(200, 64, 0.5)
    R, H = g.mesh()
    u = profile.evaluate(H)
    cands = [(dict(width=L), profile.derivative(H) * window_weight(np.abs(H) / 40) / np.cosh(R / L) ** 2)
             for L in (25.0, 50.0)]
    res = rayleigh_probe(u, S, cands, g)
    q = [c["quotient"] for c in res.quotients]
    assert not res.unstable
    assert q[0] > q[1] > 0


def test_one_dimensional_quotient_near_zero(profile):
    # the translation mode is a zero direction of the 1D linearization
    q = rayleigh_quotient_1d(lambda z: profile.derivative(z) * window_weight(np.abs(z) / 80), profile.evaluate, S)
    assert abs(q) <= 1e-2


def test_constant_state_is_stable():
    g = AxisymGrid(50, 20, 0.5)
    R, H = g.mesh()
    res = rayleigh_probe(np.ones_like(R), S, [({}, np.exp(-((R - 25) ** 2 + H * H) / 20))], g)
    assert res.min_quotient >= 2.0


def test_audit_csv_and_json():
    smp = ErrorSample((1.0, 2.0), "near", 0.5, 0.25, 0.0, 1e-3, 4.0, 0.1, 0.2, 1e-4, True)
    assert smp.remainder == 0.25
    rows = list(csv.reader(io.StringIO(audit_csv([smp]))))
    assert rows[0][:5] == ["r", "z", "S_value", "predicted", "remainder"]
    assert float(rows[1][4]) == 0.25
    text = summary_json({"b": np.float64(1.5), "a": [np.nan, np.bool_(True)], "c": np.arange(2)})
    assert json.loads(text) == {"a": [None, True], "b": 1.5, "c": [0, 1]}
    assert text.index('"a"') < text.index('"b"')
    ecsv = energy_csv(EnergyReport([1.0, 2.0], [3.0, 4.0], 0.4, 1.0, [0.1, 0.2]))
    assert ecsv.splitlines()[0] == "R,E_R,std_error"
