"""Normalization constants, principal-value quadrature and kernel reductions.

The fractional Laplacian of order s in R^n is the singular integral

    (-Delta)^s u(x0) = C_{n,s} PV int (u(x0) - u(x)) / |x0 - x|^{n+2s} dx.

In one dimension the principal value is handled by symmetrizing the
integrand, which removes the odd (linear) Taylor term, and by integrating the
remaining second-order term analytically on a small excised window.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma, gammaln


class QuadratureError(RuntimeError):
    """Raised when a quadrature fails its refinement check."""


def check_order(s: float, pipeline: bool = False) -> float:
    s = float(s)
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s must lie in (0, 1), got {s}")
    if pipeline and s <= 0.5:
        raise ValueError(f"fractional order s must lie in (1/2, 1), got {s}")
    return s


def normalization_constant(n: int, s: float) -> float:
    """Constant C_{n,s} of the singular-integral fractional Laplacian.

    Parameters
    ----------
    n : int
        Ambient dimension, n >= 1.
    s : float
        Fractional order in (0, 1).

    Returns
    -------
    float
        2^{2s} s (1-s) Gamma((n+2s)/2) / (Gamma(2-s) pi^{n/2}).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"dimension n must be a positive integer, got {n}")
    s = check_order(s)
    return 4.0**s * s * (1.0 - s) * gamma(0.5 * (n + 2 * s)) / (gamma(2.0 - s) * np.pi ** (0.5 * n))


def normalization_constant_alt(n: int, s: float) -> float:
    """Same constant written with Gamma(1-s) instead of (1-s)/Gamma(2-s)."""
    if int(n) != n or n < 1:
        raise ValueError(f"dimension n must be a positive integer, got {n}")
    s = check_order(s)
    logc = s * np.log(4.0) + np.log(s) + gammaln(0.5 * (n + 2 * s)) - gammaln(1.0 - s) - 0.5 * n * np.log(np.pi)
    return float(np.exp(logc))


def gamma_ratio_identity(s: float) -> tuple[float, float]:
    """Return (1 - C_{3,s}^2 / (C_{1,s} C_{5,s}), 2/(3+2s))."""
    c1, c3, c5 = (normalization_constant(n, s) for n in (1, 3, 5))
    return 1.0 - c3 * c3 / (c1 * c5), 2.0 / (3.0 + 2.0 * s)


# ---------------------------------------------------------------------------
# quadrature scheme


@dataclass(frozen=True)
class AlgebraicTail:
    """Far-field model f(z) ~ L_+ - c z^{-p} (z -> +inf), L_- + c |z|^{-p} (z -> -inf)."""

    p: float
    c: float = 0.0
    lim_plus: float = 0.0
    lim_minus: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        az = np.maximum(np.abs(z), 1e-300)
        return np.where(z >= 0, self.lim_plus - self.c * az ** (-self.p), self.lim_minus + self.c * az ** (-self.p))


@dataclass(frozen=True)
class QuadratureScheme:
    """Graded composite Gauss-Legendre scheme for one-sided radial integrals.

    Panels are geometric (ratio 2) from ``excision_radius`` up to 1, then
    power-graded with exponent ``grading_exponent`` from 1 up to
    ``truncation_radius``.  Beyond the truncation radius the integral is
    mapped to a finite interval through u = t^{-q}; with an algebraic tail
    model the integrand there is evaluated from the model.
    """

    excision_radius: float = 1e-3
    grading_exponent: float = 1.5
    truncation_radius: float = 1e3
    tail_model: Optional[AlgebraicTail] = None
    node_budget: int = 8192
    order: int = 8

    def __post_init__(self):
        if self.excision_radius <= 0:
            raise ValueError("excision_radius must be positive")
        if self.truncation_radius <= max(self.excision_radius, 1.0):
            raise ValueError("truncation_radius must exceed max(excision_radius, 1)")
        if self.node_budget < 16:
            raise ValueError("node_budget must be at least 16")

    def refined(self, factor: int = 2) -> "QuadratureScheme":
        return QuadratureScheme(self.excision_radius, self.grading_exponent, self.truncation_radius,
                                self.tail_model, self.node_budget * factor, self.order)

    def with_tail(self, tail: Optional[AlgebraicTail]) -> "QuadratureScheme":
        return QuadratureScheme(self.excision_radius, self.grading_exponent, self.truncation_radius,
                                tail, self.node_budget, self.order)

    def radial_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights on [excision_radius, truncation_radius]."""
        return _radial_nodes(self.excision_radius, self.grading_exponent, self.truncation_radius,
                             self.node_budget, self.order)


@lru_cache(maxsize=64)
def _gauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def panel_rule(edges: np.ndarray, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights over consecutive panel edges."""
    x, w = _gauss(order)
    a = edges[:-1, None]
    h = np.diff(edges)[:, None]
    return (a + h * x).ravel(), (h * w).ravel()


@lru_cache(maxsize=32)
def _radial_nodes(delta, q, T, budget, order):
    near = []
    t = delta
    while t < 1.0:
        near.append(t)
        t *= 2.0
    near.append(1.0)
    near = np.array(near)
    m = max(4, budget // order - (len(near) - 1))
    k = np.arange(m + 1) / m
    far = 1.0 + (T - 1.0) * k**q
    edges = np.concatenate([near, far[1:]])
    x, w = panel_rule(edges, order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _tail_nodes(T: float, q: float, order: int = 16):
    # int_T^inf g(t) t^{-1-q} dt = (1/q) int_0^{T^{-q}} g(u^{-1/q}) du
    x, w = _gauss(order)
    umax = T ** (-q)
    u = umax * x
    return u ** (-1.0 / q), umax * w / q


def weighted_radial_integral(g: Callable, q: float, scheme: QuadratureScheme,
                             tail_g: Optional[Callable] = None, vanishing_order: float = 2.0):
    """int_0^inf g(t) t^{-1-q} dt with g(t) = O(t^m) at the origin, m > q > 0.

    ``g`` maps an array of radii of shape (k,) to shape (..., k), so many
    integrals can be done at once.  On [0, delta] the model
    g(delta) (t/delta)^m is integrated exactly; beyond the truncation radius
    the variable u = t^{-q} is used, with ``tail_g`` (default g) as integrand.
    """
    delta = scheme.excision_radius
    m = vanishing_order
    t, w = scheme.radial_nodes()
    core = g(t) @ (w * t ** (-1.0 - q))
    excised = np.asarray(g(np.array([delta])))[..., 0] * delta ** (-q) / (m - q)
    tt, tw = _tail_nodes(scheme.truncation_radius, q)
    tail = (tail_g or g)(tt) @ tw
    return excised + core + tail


def frac_laplacian_1d_many(f: Callable, z0, s: float, scheme: Optional[QuadratureScheme] = None) -> np.ndarray:
    """Vectorized (-d^2/dz^2)^s f at every point of the array z0."""
    s = check_order(s)
    scheme = scheme or QuadratureScheme()
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    f0 = np.asarray(f(z0), dtype=float)[:, None]
    zc = z0[:, None]

    def D(t):
        return 2.0 * f0 - f(zc + t) - f(zc - t)

    tm = scheme.tail_model

    def tail_D(t):
        return 2.0 * f0 - tm(zc + t) - tm(zc - t)

    return normalization_constant(1, s) * weighted_radial_integral(D, 2 * s, scheme,
                                                                  tail_D if tm is not None else None)


def frac_laplacian_1d(f: Callable, z0: float, s: float, scheme: Optional[QuadratureScheme] = None,
                      rtol: Optional[float] = None) -> float:
    """(-d^2/dz^2)^s f at z0 by graded principal-value quadrature.

    The integrand is symmetrized, 2 f(z0) - f(z0+t) - f(z0-t), which removes
    the linear Taylor term; the remaining O(t^2) behaviour is integrated
    analytically on the excised window.  ``f`` must accept arrays and be
    defined on the whole line; if the scheme carries an algebraic tail model,
    f is replaced by the model beyond the truncation radius.  With ``rtol``
    set, the value is compared against a run with twice the node budget.
    """
    val = float(frac_laplacian_1d_many(f, [z0], s, scheme)[0])
    if rtol is not None:
        scheme = scheme or QuadratureScheme()
        fine = float(frac_laplacian_1d_many(f, [z0], s, scheme.refined())[0])
        if abs(fine - val) > rtol * max(abs(fine), 1.0):
            raise QuadratureError(f"PV quadrature not converged at z0={z0}: {val} vs {fine}")
        return fine
    return val


# ---------------------------------------------------------------------------
# kernel reduction over the tangent plane


KERNEL_KINDS = ("plain", "quadratic_moment", "alpha_moment")


def _radial_profile(kind, s, alpha):
    # int_{R^2} m(y) |(y, zeta)|^{-p} dy = c_ang int_0^inf rho^{k} (rho^2 + zeta^2)^{-p/2} drho
    if kind == "plain":
        return 2 * np.pi, 1.0, 3.0 + 2 * s
    if kind == "quadratic_moment":
        return np.pi, 3.0, 5.0 + 2 * s
    if kind == "alpha_moment":
        return 2 * np.pi, 1.0 + alpha, 3.0 + 2 * s
    raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")


def reduce_kernel_integral(kind: str, zeta: float, s: float, scheme: Optional[QuadratureScheme] = None,
                           index: int = 1, alpha: Optional[float] = None, n_tail_terms: int = 12) -> float:
    """Integral over y in R^2 of {1, y_i^2, |y|^alpha} / |(y, zeta)|^{3+2s(+2)}.

    The angular integral is done exactly and the radial integral by the
    graded scheme in the variable rho/|zeta|, with the far tail closed by
    the binomial expansion of (1 + zeta^2/rho^2)^{-p/2}.
    """
    s = check_order(s)
    if zeta == 0:
        raise ValueError("zeta = 0 gives a non-integrable kernel")
    if kind == "quadratic_moment" and index not in (1, 2):
        raise ValueError("quadratic_moment index must be 1 or 2")
    if kind == "alpha_moment":
        if alpha is None or not 0.0 < alpha < 2 * s - 1:
            raise ValueError(f"alpha must lie in (0, 2s-1) = (0, {2 * s - 1}), got {alpha}")
    scheme = scheme or QuadratureScheme()
    c_ang, k, p = _radial_profile(kind, s, alpha)
    a = abs(float(zeta))
    # rho = a t:  int rho^k (rho^2+a^2)^{-p/2} drho = a^{k+1-p} int t^k (t^2+1)^{-p/2} dt
    t, w = scheme.radial_nodes()
    delta, T = scheme.excision_radius, scheme.truncation_radius
    body = np.dot(w, t**k * (t * t + 1.0) ** (-0.5 * p))
    # [0, delta]: expand (1+t^2)^{-p/2} = 1 - (p/2) t^2 + ...
    head = delta ** (k + 1) / (k + 1) - 0.5 * p * delta ** (k + 3) / (k + 3)
    # [T, inf): t^{k-p} sum_j binom(-p/2, j) t^{-2j}
    tail = 0.0
    coef = 1.0
    for j in range(n_tail_terms):
        e = k - p - 2 * j + 1
        tail += coef * T**e / (-e)
        coef *= (-0.5 * p - j) / (j + 1)
    return float(c_ang * a ** (k + 1 - p) * (head + body + tail))


def kernel_reduction_closed_form(kind: str, zeta: float, s: float, alpha: Optional[float] = None) -> float:
    """Closed forms of the kernel reduction in terms of C_{1,s}/C_{3,s}."""
    s = check_order(s)
    ratio = normalization_constant(1, s) / normalization_constant(3, s)
    a = abs(float(zeta))
    if kind == "plain":
        return ratio * a ** (-1 - 2 * s)
    if kind == "quadratic_moment":
        return ratio * a ** (-1 - 2 * s) / (3 + 2 * s)
    if kind == "alpha_moment":
        from scipy.special import beta

        return np.pi * a ** (alpha - 1 - 2 * s) * beta(1 + 0.5 * alpha, 0.5 * (1 + 2 * s - alpha))
    raise ValueError(f"unknown kernel kind {kind!r}")
