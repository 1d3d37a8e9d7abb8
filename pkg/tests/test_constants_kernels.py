import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gamma

from fraccat.constants_kernels import (AlgebraicTail, QuadratureScheme, check_order, frac_laplacian_1d,
                                       frac_laplacian_1d_many, gamma_ratio_identity, kernel_reduction_closed_form,
                                       normalization_constant, normalization_constant_alt, reduce_kernel_integral)

orders = st.floats(min_value=0.51, max_value=0.99)


def mp_constant(n, s):
    # independent high-precision evaluation of 4^s Gamma((n+2s)/2) / (pi^{n/2} |Gamma(-s)|)
    mpmath.mp.dps = 40
    s = mpmath.mpf(s)
    return 4**s * mpmath.gamma((n + 2 * s) / 2) / (mpmath.pi ** (mpmath.mpf(n) / 2) * abs(mpmath.gamma(-s)))


@pytest.mark.parametrize("n", [1, 2, 3, 5])
@pytest.mark.parametrize("s", [0.3, 0.55, 0.75, 0.95])
def test_normalization_matches_high_precision(n, s):
    assert normalization_constant(n, s) == pytest.approx(float(mp_constant(n, s)), rel=1e-13)


def test_half_laplacian_constant_in_one_dimension():
    # C_{1,1/2} = 1/pi
    assert normalization_constant(1, 0.5) == pytest.approx(1 / np.pi, rel=1e-14)


@given(orders, st.integers(min_value=1, max_value=6))
def test_two_gamma_forms_agree(s, n):
    assert normalization_constant(n, s) == pytest.approx(normalization_constant_alt(n, s), rel=1e-12)


@given(orders)
def test_gamma_ratio_identity(s):
    lhs, rhs = gamma_ratio_identity(s)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
def test_order_outside_unit_interval_rejected(bad):
    with pytest.raises(ValueError):
        normalization_constant(3, bad)


def test_pipeline_order_requires_above_half():
    with pytest.raises(ValueError):
        check_order(0.4, pipeline=True)
    assert check_order(0.6, pipeline=True) == 0.6


def test_dimension_must_be_positive_integer():
    with pytest.raises(ValueError):
        normalization_constant(0, 0.5)
    with pytest.raises(ValueError):
        normalization_constant(1.5, 0.5)


def lorentzian_laplacian(x, s):
    # Fourier: (-Delta)^s (1+x^2)^{-1} = Gamma(2s+1) cos((2s+1) atan x) (1+x^2)^{-(2s+1)/2}
    return gamma(2 * s + 1) * np.cos((2 * s + 1) * np.arctan(x)) * (1 + x * x) ** (-(2 * s + 1) / 2)


@pytest.mark.parametrize("s", [0.3, 0.6, 0.75, 0.9])
def test_frac_laplacian_of_lorentzian(s):
    x = np.array([0.0, 0.3, 1.0, 2.5, 7.0])
    got = frac_laplacian_1d_many(lambda z: 1.0 / (1.0 + z * z), x, s)
    np.testing.assert_allclose(got, lorentzian_laplacian(x, s), rtol=1e-6, atol=1e-9)


def test_scalar_and_vector_laplacian_agree():
    f = lambda z: np.exp(-z * z)  # noqa: E731
    many = frac_laplacian_1d_many(f, np.array([0.0, 0.7]), 0.6)
    assert frac_laplacian_1d(f, 0.7, 0.6) == pytest.approx(many[1], rel=1e-12)


def test_laplacian_of_constant_vanishes():
    got = frac_laplacian_1d_many(lambda z: np.full_like(z, 3.0), np.array([0.0, 5.0]), 0.7)
    np.testing.assert_allclose(got, 0.0, atol=1e-14)


def test_algebraic_tail_model_of_odd_step():
    # an exact 1 - c|z|^{-p} odd step: the tail closure reproduces the full-line integral
    tail = AlgebraicTail(p=1.5, c=0.2, lim_plus=1.0, lim_minus=-1.0)
    assert tail(np.array([10.0]))[0] == pytest.approx(1 - 0.2 * 10**-1.5)
    assert tail(np.array([-10.0]))[0] == pytest.approx(-1 + 0.2 * 10**-1.5)


def radial_oracle(kind, zeta, s):
    # independent adaptive quadrature of the angular-reduced radial integral
    if kind == "plain":
        c, k, p = 2 * np.pi, 1.0, 3 + 2 * s
    else:
        c, k, p = np.pi, 3.0, 5 + 2 * s
    val = quad(lambda r: r**k * (r * r + zeta * zeta) ** (-p / 2), 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    return c * val


@pytest.mark.parametrize("kind", ["plain", "quadratic_moment"])
@pytest.mark.parametrize("zeta", [0.5, 1.0, 2.0, 4.0])
@pytest.mark.parametrize("s", [0.6, 0.75, 0.9])
def test_kernel_reduction_against_quadrature_and_closed_form(kind, zeta, s):
    num = reduce_kernel_integral(kind, zeta, s)
    assert num == pytest.approx(radial_oracle(kind, zeta, s), rel=1e-8)
    assert num == pytest.approx(kernel_reduction_closed_form(kind, zeta, s), rel=1e-6)


def test_kernel_reduction_is_even_in_zeta():
    assert reduce_kernel_integral("plain", -1.3, 0.7) == reduce_kernel_integral("plain", 1.3, 0.7)


def test_moment_ratio_is_one_over_three_plus_two_s():
    s = 0.8
    ratio = reduce_kernel_integral("quadratic_moment", 1.7, s) / reduce_kernel_integral("plain", 1.7, s)
    assert ratio == pytest.approx(1 / (3 + 2 * s), rel=1e-8)


def test_alpha_moment_closed_form():
    s, a = 0.8, 0.3
    assert reduce_kernel_integral("alpha_moment", 2.0, s, alpha=a) == pytest.approx(
        kernel_reduction_closed_form("alpha_moment", 2.0, s, alpha=a), rel=1e-6)


def test_kernel_reduction_rejects_bad_input():
    with pytest.raises(ValueError):
        reduce_kernel_integral("plain", 0.0, 0.7)
    with pytest.raises(ValueError):
        reduce_kernel_integral("alpha_moment", 1.0, 0.7, alpha=0.5)
    with pytest.raises(ValueError):
        reduce_kernel_integral("cubic", 1.0, 0.7)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.05, max_value=50.0), orders)
def test_kernel_reduction_scaling(zeta, s):
    # homogeneity of degree -1-2s in zeta
    a = reduce_kernel_integral("plain", zeta, s)
    b = reduce_kernel_integral("plain", 1.0, s)
    assert a == pytest.approx(b * zeta ** (-1 - 2 * s), rel=1e-8)


def test_refined_scheme_is_consistent():
    sch = QuadratureScheme()
    f = lambda z: 1.0 / (1.0 + z * z)  # noqa: E731
    a = frac_laplacian_1d_many(f, np.array([0.5]), 0.75, sch)
    b = frac_laplacian_1d_many(f, np.array([0.5]), 0.75, sch.refined())
    assert a[0] == pytest.approx(b[0], rel=1e-7)
