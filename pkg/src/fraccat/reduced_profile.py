"""Reduced equation for the axially symmetric interface.

The interface is a surface of revolution: a neck r = G(x3) for |x3| <= z1
glued to the graph x3 = F(r) for r >= r1.  Near the neck F follows the
catenoid arc; far out the two leaves attract each other and F solves

    F'' + F'/r = k eps^{2s-1} F^{-2s},

whose solutions grow like r^{2/(2s+1)}.  This module builds the initial
approximation F0, the linearized operator L0 with its kernels Z1, Z2, the
right inverse T in weighted Holder norms, and the fixed point F = F0 + phi.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .constants_kernels import check_order
from .fermi_geometry import R1_DEFAULT, Z1_DEFAULT
from .layer1d import CutoffPair

log = logging.getLogger(__name__)


class ReducedSolveError(RuntimeError):
    """Raised when an ODE integration, bound check or matching step fails."""


class NonContractionError(ReducedSolveError):
    """Raised when the fixed-point iteration does not contract."""

    def __init__(self, message, lipschitz=None):
        super().__init__(message)
        self.lipschitz = lipschitz


class SingularPointError(ValueError):
    """Derivatives of the catenoid arc requested at r = 1."""


def growth_exponent(s: float) -> float:
    return 2.0 / (2.0 * s + 1.0)


def decay_exponent(s: float) -> float:
    return (2.0 * s - 1.0) / (2.0 * s + 1.0)


def self_similar_coefficient(s: float, coefficient: float = 1.0) -> float:
    """A with A r^beta solving g'' + g'/r = k g^{-2s}; ((2s+1)/2)^{2/(2s+1)} for k = 1."""
    return (coefficient * (2.0 * s + 1.0) ** 2 / 4.0) ** (1.0 / (2.0 * s + 1.0))


def far_field_coefficient(s: float, eps: float, coefficient: float = 1.0) -> float:
    """Limit of f_eps(r) / r^{2/(2s+1)}: A_k eps^{(2s-1)/(2s+1)} (the |log eps| powers cancel)."""
    return self_similar_coefficient(s, coefficient) * eps ** decay_exponent(s)


def r_eps(s: float, eps: float) -> float:
    """Radius (|log eps|/eps)^{(2s-1)/2} where the leaf interaction takes over."""
    return (abs(np.log(eps)) / eps) ** (0.5 * (2.0 * s - 1.0))


def effective_delta0(eps: float, delta0: float = 0.1) -> float:
    # the transition r_eps < delta0 |log eps| r_eps needs delta0 |log eps| > 1;
    # keep at least a factor 2 between the two radii
    return max(delta0, 2.0 / abs(np.log(eps)))


def tilde_r_eps(s: float, eps: float, delta0: float = 0.1) -> float:
    return effective_delta0(eps, delta0) * abs(np.log(eps)) * r_eps(s, eps)


def to_surface_scale(F: Callable, r, eps: float):
    """F_eps(r) = F(eps r)/eps: the dilated interface seen at unit layer width."""
    return F(eps * np.asarray(r, dtype=float)) / eps


def from_surface_scale(F_eps: Callable, r, eps: float):
    return eps * F_eps(np.asarray(r, dtype=float) / eps)


def catenoid_arc(r, derivatives: bool = True):
    """f_C = arccosh r with its first three derivatives.

    Returns F alone when ``derivatives`` is false, otherwise (F, F', F'', F''').
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 1.0):
        raise ValueError("catenoid arc is defined for r >= 1 only")
    F = np.arccosh(r)
    if not derivatives:
        return F
    if np.any(r == 1.0):
        raise SingularPointError("catenoid arc derivatives are singular at r = 1")
    q = r * r - 1.0
    return F, q**-0.5, -r * q**-1.5, (2.0 * r * r + 1.0) * q**-2.5


def graph_mean_curvature(r, F1, F2):
    """(1/r)(r F'/sqrt(1+F'^2))', twice the mean curvature of x3 = F(|x'|)."""
    q = 1.0 + F1 * F1
    return F2 / q**1.5 + F1 / (r * np.sqrt(q))


####################################################################
# profiles


@dataclass
class RadialProfile:
    """Radial function sampled with two derivatives on an increasing grid.

    ``dense`` (optional) returns (F, F', F'') at arbitrary radii inside the
    grid and is used in preference to Hermite interpolation.  Beyond the last
    node the algebraic tail A r^beta + B r^{-d} is used when fitted.
    """

    r: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    s: float
    tail_A: Optional[float] = None
    tail_B: Optional[float] = None
    info: dict = field(default_factory=dict)
    dense: Optional[Callable] = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        if np.any(np.diff(self.r) <= 0):
            raise ValueError("profile grid must be strictly increasing")
        self._h0 = CubicHermiteSpline(self.r, self.values, self.d1)
        self._h1 = CubicHermiteSpline(self.r, self.d1, self.d2)

    @property
    def domain_start(self) -> float:
        return float(self.r[0])

    @property
    def r_out(self) -> float:
        return float(self.r[-1])

    def fit_tail(self, fraction: float = 0.25):
        """Least-squares A, B of the tail model on the outer part of the grid (in log r)."""
        lr = np.log(self.r)
        m = lr >= lr[-1] - fraction * (lr[-1] - lr[0])
        b, d = growth_exponent(self.s), decay_exponent(self.s)
        M = np.stack([self.r[m] ** b, self.r[m] ** (-d)], axis=1)
        (A, B), *_ = np.linalg.lstsq(M, self.values[m], rcond=None)
        self.tail_A, self.tail_B = float(A), float(B)
        return self.tail_A, self.tail_B

    def derivatives(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r[0] - 1e-12 * max(1.0, abs(self.r[0]))):
            raise ValueError(f"radius below the profile domain start {self.r[0]}")
        inside = r <= self.r[-1]
        v = np.empty_like(r)
        d1 = np.empty_like(r)
        d2 = np.empty_like(r)
        ri = np.clip(r[inside], self.r[0], self.r[-1])
        if self.dense is not None:
            v[inside], d1[inside], d2[inside] = self.dense(ri)
        else:
            v[inside] = self._h0(ri)
            d1[inside] = self._h1(ri)
            d2[inside] = self._h1(ri, 1)
        out = ~inside
        if np.any(out):
            if self.tail_A is None:
                raise ValueError("radius beyond the grid and no tail model fitted")
            b, d = growth_exponent(self.s), decay_exponent(self.s)
            x = r[out]
            A, B = self.tail_A, self.tail_B
            v[out] = A * x**b + B * x**-d
            d1[out] = A * b * x ** (b - 1) - B * d * x ** (-d - 1)
            d2[out] = A * b * (b - 1) * x ** (b - 2) + B * d * (d + 1) * x ** (-d - 2)
        return v, d1, d2

    def __call__(self, r):
        return self.derivatives(r)[0]

    def to_rows(self):
        return np.stack([self.r, self.values, self.d1, self.d2], axis=1)


@dataclass
class NeckProfile:
    """Neck r = G(x3) on [0, z1] with the hand-off data to the graph."""

    z: np.ndarray
    G: np.ndarray
    dG: np.ndarray
    d2G: np.ndarray
    z1: float
    r1: float
    dG_z1: float
    residual: float = 0.0

    def __post_init__(self):
        if abs(self.G[0] - 1.0) > 1e-14 or abs(self.dG[0]) > 1e-14:
            raise ValueError("neck must satisfy G(0) = 1 and G'(0) = 0")
        self._h0 = CubicHermiteSpline(self.z, self.G, self.dG)
        self._h1 = CubicHermiteSpline(self.z, self.dG, self.d2G)

    def derivatives(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        return self._h0(z), np.sign(z) * self._h1(z), self._h1(z, 1)

    def __call__(self, z):
        return self.derivatives(z)[0]

    def to_rows(self):
        return np.stack([self.z, self.G, self.dG], axis=1)


def log_graded_grid(r_start: float, r_end: float, nodes: int, scale: float = 1.0, extra=()) -> np.ndarray:
    """Nodes r = r_start + scale (e^xi - 1) with xi uniform, plus the points in ``extra``.

    Spacing is about ``scale``/nodes near r_start and grows linearly with r.
    Inserted points push out regular nodes that come closer than a third of
    the local spacing.
    """
    xi = np.linspace(0.0, np.log1p((r_end - r_start) / scale), int(nodes))
    r = r_start + scale * np.expm1(xi)
    r[-1] = r_end
    keep = np.ones(r.shape, dtype=bool)
    for p in extra:
        if r_start < p < r_end:
            j = np.searchsorted(r, p)
            h = r[min(j, len(r) - 1)] - r[max(j - 1, 0)]
            keep &= np.abs(r - p) > h / 3.0
            keep[0] = keep[-1] = True
    pts = [p for p in extra if r_start < p < r_end]
    return np.unique(np.concatenate([r[keep], pts]))


####################################################################
# Cauchy continuation and the Emden-Fowler variables


def _ef_rhs(s, k):
    # y = (g, rho g') in t = log rho:  g_t = p,  p_t = rho^2 k g^{-2s}
    def rhs(t, y):
        g = y[0]
        if g <= 0:
            return [0.0, 0.0]
        return [y[1], k * np.exp(2.0 * t) * g ** (-2.0 * s)]

    return rhs


def _radial_dense(sol, s, k, scale_r=1.0, scale_v=1.0):
    # map the log-variable solution (g, rho g') to (v, v', v'') in r = scale_r rho, v = scale_v g
    def dense(r):
        rho = np.asarray(r, dtype=float) / scale_r
        g, p = sol(np.log(rho))
        d1 = p / rho
        d2 = k * g ** (-2.0 * s) - d1 / rho
        return scale_v * g, scale_v * d1 / scale_r, scale_v * d2 / scale_r**2

    return dense


def continue_f_eps(s: float, eps: float, r_max: float, tol: float = 1e-10, coefficient: float = 1.0,
                   grid: Optional[np.ndarray] = None, nodes: int = 2000) -> RadialProfile:
    """Continue the catenoid arc from r_eps as a solution of f'' + f'/r = k eps^{2s-1} f^{-2s}.

    The ODE is integrated in t = log r for (f, r f') with an explicit order-8
    Runge-Kutta method at relative tolerance ``tol``.  The returned profile
    carries a dense evaluator and the growth bounds measured on
    [r_eps, |log eps| r_eps].
    """
    s = check_order(s, pipeline=True)
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    L = abs(np.log(eps))
    re = r_eps(s, eps)
    if r_max < 10 * L * re:
        raise ValueError(f"r_max must be at least 10 |log eps| r_eps = {10 * L * re:.4g}")
    k = coefficient * eps ** (2 * s - 1)
    fC, fC1 = catenoid_arc(max(re, 1.0 + 1e-12))[:2]
    y0 = [float(fC), float(re * fC1)]
    sol = solve_ivp(_ef_rhs(s, k), (np.log(re), np.log(r_max)), y0, method="DOP853",
                    rtol=tol, atol=tol * 1e-3, dense_output=True)
    if not sol.success:
        raise ReducedSolveError(f"Cauchy continuation failed: {sol.message}")
    dense = _radial_dense(sol.sol, s, k)
    if grid is None:
        grid = np.geomspace(re, r_max, nodes)
    v, d1, d2 = dense(grid)
    if np.any(d1 < 0):
        j = int(np.argmax(d1 < 0))
        raise ReducedSolveError(f"f_eps' < 0 at r = {grid[j]:.6g}")
    prof = RadialProfile(grid, v, d1, d2, s, dense=dense)
    prof.info.update(_growth_bounds(dense, s, eps, re, L), coefficient=coefficient, r_eps=re)
    lower = 0.5 * (2 * s - 1) * L
    if prof.info["f_min"] < lower:
        raise ReducedSolveError(f"f_eps drops below ((2s-1)/2)|log eps| = {lower:.4g}")
    return prof


def _growth_bounds(dense, s, eps, re, L):
    r = np.geomspace(re, L * re, 400)
    v, d1, d2 = dense(r)
    return {
        "f_min": float(v.min()),
        "f_over_log_min": float(v.min() / L),
        "f_over_log_max": float(v.max() / L),
        "slope_bound": float(np.max(d1 * re)),
        "curvature_bound": float(np.max(np.abs(d2) / (r**-2.0 + 1.0 / (L * re * re)))),
    }


def rescaled_g(f_eps: RadialProfile, eps: float) -> RadialProfile:
    """g(rho) = f_eps(|log eps| r_eps rho)/|log eps|, solving g'' + g'/rho = k g^{-2s}."""
    L = abs(np.log(eps))
    re = f_eps.info["r_eps"]
    scale = L * re
    dense = f_eps.dense

    def gdense(rho):
        v, d1, d2 = dense(np.asarray(rho) * scale)
        return v / L, d1 * scale / L, d2 * scale * scale / L

    rho = f_eps.r / scale
    g = RadialProfile(rho, *gdense(rho), f_eps.s, dense=gdense)
    g.info.update(coefficient=f_eps.info.get("coefficient", 1.0), scale=scale, log_eps=L)
    return g


def self_similar_profile(s: float, grid, coefficient: float = 1.0) -> RadialProfile:
    """The exact power solution A rho^beta of g'' + g'/rho = k g^{-2s}."""
    A, b = self_similar_coefficient(s, coefficient), growth_exponent(s)

    def dense(x):
        x = np.asarray(x, dtype=float)
        return A * x**b, A * b * x ** (b - 1), A * b * (b - 1) * x ** (b - 2)

    grid = np.asarray(grid, dtype=float)
    prof = RadialProfile(grid, *dense(grid), s, tail_A=A, tail_B=0.0, dense=dense)
    prof.info["coefficient"] = coefficient
    return prof


def far_ode_residual(g: RadialProfile, rho, coefficient: Optional[float] = None):
    k = g.info.get("coefficient", 1.0) if coefficient is None else coefficient
    v, d1, d2 = g.derivatives(rho)
    return d2 + d1 / np.asarray(rho) - k * v ** (-2.0 * g.s)


def blend_F0(s: float, eps: float, cutoffs: Optional[CutoffPair] = None, r_max: Optional[float] = None,
             grid: Optional[np.ndarray] = None, coefficient: float = 1.0, tol: float = 1e-11,
             delta0: float = 0.1, f_eps: Optional[RadialProfile] = None) -> RadialProfile:
    """F0 = f_C + chi(r - r_eps)(f_eps - f_C) on [r1, r_max].

    Equal to the catenoid arc up to r_eps and to the Cauchy continuation
    from r_eps + 1 on.  The info dict holds the fitted constants of the
    derivative bounds on the inner, intermediate and outer regions.
    """
    s = check_order(s, pipeline=True)
    cutoffs = cutoffs or CutoffPair()
    re = r_eps(s, eps)
    rt = tilde_r_eps(s, eps, delta0)
    L = abs(np.log(eps))
    if r_max is None:
        r_max = 200.0 * rt
    if grid is None:
        grid = log_graded_grid(R1_DEFAULT, r_max, 3000, extra=(re, re + 1, rt))
    if f_eps is None:
        f_eps = continue_f_eps(s, eps, max(r_max, 10 * L * re), tol=tol, coefficient=coefficient)
    r = np.asarray(grid, dtype=float)
    fc = catenoid_arc(r)
    right = r >= re
    fe = [np.zeros_like(r) for _ in range(3)]
    if np.any(right):
        for a, b in zip(fe, f_eps.dense(r[right])):
            a[right] = b
    D = [fe[i] - fc[i] for i in range(3)]
    t = r - re
    c0, c1, c2 = (cutoffs.chi(t, n) for n in range(3))
    v = fc[0] + c0 * D[0]
    d1 = fc[1] + c1 * D[0] + c0 * D[1]
    d2 = fc[2] + c2 * D[0] + 2 * c1 * D[1] + c0 * D[2]
    F0 = RadialProfile(r, v, d1, d2, s)
    F0.fit_tail()
    inner, mid, outer = r <= re, (r >= re) & (r <= rt), r >= rt
    bound = r**-2.0 + 1.0 / (L * re * re)
    F0.info.update(
        r_eps=re, tilde_r_eps=rt, coefficient=coefficient, f_eps=f_eps,
        bound_inner=float(np.max(np.abs(d2[inner]) * r[inner] ** 2)) if inner.any() else 0.0,
        bound_intermediate=float(np.max(np.abs(d2[mid]) / bound[mid])) if mid.any() else 0.0,
        bound_outer=float(np.max(np.abs(d2[outer]) * r[outer] ** 2 / np.maximum(v[outer], 1e-300))),
        slope_intermediate=float(np.max(d1[mid] * re)) if mid.any() else 0.0,
    )
    return F0


@dataclass
class EmdenFowlerState:
    """Point (h, h') of h'' + 2h' + h = h^{-2s} at log-radial time t."""

    t: float
    h: float
    h_prime: float
    s: float
    hamiltonian: Optional[float] = None

    def __post_init__(self):
        if self.hamiltonian is None:
            self.hamiltonian = float(ef_hamiltonian(self.s, self.h, self.h_prime))


def ef_hamiltonian(s: float, h, hp):
    """1/2 h'^2 + 1/2 (h^2 - 1) + (h^{-(2s-1)} - 1)/(2s-1); decreases at rate 2 h'^2."""
    h = np.asarray(h, dtype=float)
    return 0.5 * hp * hp + 0.5 * (h * h - 1.0) + (h ** (1.0 - 2 * s) - 1.0) / (2 * s - 1.0)


@dataclass
class EmdenFowlerTrajectory:
    s: float
    t: np.ndarray
    h: np.ndarray
    hp: np.ndarray

    @property
    def hamiltonian(self):
        return ef_hamiltonian(self.s, self.h, self.hp)

    def states(self):
        return [EmdenFowlerState(float(a), float(b), float(c), self.s) for a, b, c in zip(self.t, self.h, self.hp)]

    def envelope_rate(self, t_min: float = 0.0) -> float:
        """Decay rate of |h - 1| + |h'| fitted through local maxima of the envelope."""
        m = self.t >= t_min
        e = np.abs(self.h[m] - 1.0) + np.abs(self.hp[m])
        tt = self.t[m]
        k = np.flatnonzero((e[1:-1] >= e[:-2]) & (e[1:-1] >= e[2:])) + 1
        k = k[e[k] > 1e-9]
        if len(k) < 2:
            raise ReducedSolveError("not enough envelope maxima to fit a decay rate")
        return float(-np.polyfit(tt[k], np.log(e[k]), 1)[0])

    def crossing_spacing(self, floor: float = 1e-10) -> float:
        """Mean spacing of the zeros of h - 1 while |h - 1| + |h'| stays above ``floor``."""
        e = np.abs(self.h - 1.0) + np.abs(self.hp)
        stop = np.flatnonzero(e < floor)
        n = stop[0] if stop.size else e.size
        u = self.h[:n] - 1.0
        t = self.t[:n]
        j = np.flatnonzero(np.sign(u[1:]) * np.sign(u[:-1]) < 0)
        if len(j) < 2:
            raise ReducedSolveError("fewer than two zero crossings of h - 1")
        tc = t[j] - u[j] * (t[j + 1] - t[j]) / (u[j + 1] - u[j])
        return float(np.mean(np.diff(tc)))


class EmdenFowlerError(ReducedSolveError):
    """The trajectory left the basin of h = 1 (h reached 0)."""


def emden_fowler_flow(s: float, initial: EmdenFowlerState, t_max: float, rtol: float = 1e-12,
                      samples: int = 4001) -> EmdenFowlerTrajectory:
    """Integrate h'' + 2h' + h = h^{-2s} from ``initial`` to t_max."""
    s = check_order(s, pipeline=True)
    if initial.h <= 0:
        raise ValueError("initial h must be positive")

    def rhs(t, y):
        return [y[1], -2.0 * y[1] - y[0] + max(y[0], 1e-8) ** (-2 * s)]

    def blow(t, y):
        return y[0] - 1e-8

    blow.terminal = True
    t_eval = np.linspace(initial.t, t_max, samples)
    sol = solve_ivp(rhs, (initial.t, t_max), [initial.h, initial.h_prime], method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2, t_eval=t_eval, events=blow)
    if sol.status == 1:
        raise EmdenFowlerError(f"h reached 0 at t = {sol.t_events[0][0]:.6g}")
    if not sol.success:
        raise ReducedSolveError(sol.message)
    return EmdenFowlerTrajectory(s, sol.t, sol.y[0], sol.y[1])


def emden_fowler_variables(g: RadialProfile, rho):
    """(t, h, h') with g = A rho^beta h(beta log rho)."""
    k = g.info.get("coefficient", 1.0)
    A, b = self_similar_coefficient(g.s, k), growth_exponent(g.s)
    v, d1, _ = g.derivatives(rho)
    rho = np.asarray(rho, dtype=float)
    h = v / (A * rho**b)
    # rho d/drho = beta d/dt
    hp = (rho * d1 / v - b) * h / b
    return b * np.log(rho), h, hp


####################################################################
# kernels of the linearized far operator


def kernel_Z1(g: RadialProfile, r):
    """Scaling kernel r g'(r) - beta g(r) of Z'' + Z'/r + 2s k g^{-2s-1} Z = 0."""
    v, d1, _ = g.derivatives(r)
    return np.asarray(r) * d1 - growth_exponent(g.s) * v


def kernel_Z1_derivatives(g: RadialProfile, r):
    r = np.asarray(r, dtype=float)
    v, d1, d2 = g.derivatives(r)
    b = growth_exponent(g.s)
    return r * d1 - b * v, r * d2 + (1 - b) * d1


def kernel_Z2(g: RadialProfile, delta0: float, rho_max: Optional[float] = None, tol: float = 1e-12,
              grid: Optional[np.ndarray] = None) -> RadialProfile:
    """Second kernel, normalized so that r W(r) = 1 with W = Z1 Z2' - Z1' Z2.

    g is re-integrated from delta0 together with Z2 so that Z1, Z2 solve the
    same linear equation to the integrator tolerance.  The Z1 data and the
    product r W on the grid are stored in ``info``.
    """
    s = g.s
    k = g.info.get("coefficient", 1.0)
    b = growth_exponent(s)
    rho_max = g.r_out if rho_max is None else rho_max
    g0, g1, _ = (float(x[0]) for x in g.derivatives(np.array([delta0])))
    z1, z1p = (float(x[0]) for x in kernel_Z1_derivatives(g, np.array([delta0])))
    nrm = z1 * z1 + z1p * z1p
    if nrm < 1e-300:
        raise ReducedSolveError("degenerate Z2 normalization: Z1 and Z1' vanish at delta0")
    Z20 = -z1p / (delta0 * nrm)
    Z2p0 = z1 / (delta0 * nrm)

    def rhs(t, y):
        rho2 = np.exp(2 * t)
        gm = max(y[0], 1e-300)
        return [y[1], rho2 * k * gm ** (-2 * s), y[3], -rho2 * 2 * s * k * gm ** (-2 * s - 1) * y[2]]

    y0 = [g0, delta0 * g1, Z20, delta0 * Z2p0]
    sol = solve_ivp(rhs, (np.log(delta0), np.log(rho_max)), y0, method="DOP853", rtol=tol,
                    atol=tol * 1e-3, dense_output=True)
    if not sol.success:
        raise ReducedSolveError(f"Z2 integration failed: {sol.message}")

    def all_fields(rho):
        rho = np.asarray(rho, dtype=float)
        G, P, Z, Q = sol.sol(np.log(rho))
        gpp = k * G ** (-2 * s) - P / rho**2
        Z1 = P - b * G
        Z1p = rho * gpp + (1 - b) * P / rho
        Zp = Q / rho
        Zpp = -2 * s * k * G ** (-2 * s - 1) * Z - Zp / rho
        return Z1, Z1p, Z, Zp, Zpp

    def dense(rho):
        return all_fields(rho)[2:]

    if grid is None:
        grid = np.geomspace(delta0, rho_max, 800)
    Z1, Z1p, Z, Zp, Zpp = all_fields(grid)
    prof = RadialProfile(grid, Z, Zp, Zpp, s, dense=dense)
    prof.info.update(Z1=Z1, Z1p=Z1p, rW=grid * (Z1 * Zp - Z1p * Z), delta0=delta0, coefficient=k,
                     fields=all_fields)
    return prof


def wronskian_product(Z2: RadialProfile, rho):
    Z1, Z1p, Z, Zp, _ = Z2.info["fields"](rho)
    return np.asarray(rho) * (Z1 * Zp - Z1p * Z)


####################################################################
# linearized operator, norms and right inverse


@dataclass(frozen=True)
class ChiEps:
    """chi_eps(r) = chi((r - r_eps)/(tilde_r_eps - r_eps))."""

    r_eps: float
    tilde_r: float
    cutoffs: CutoffPair = CutoffPair()

    def __call__(self, r):
        return self.cutoffs.chi((np.asarray(r, dtype=float) - self.r_eps) / (self.tilde_r - self.r_eps))


@dataclass(frozen=True)
class WeightedNormSpec:
    """Weights of the norms ||phi||_* (two derivatives) and ||h||_** (none)."""

    s: float
    gamma: float = 2.0
    alpha: float = 0.5
    domain_start: float = R1_DEFAULT

    def __post_init__(self):
        gmax = 2.0 + decay_exponent(self.s)
        if self.gamma > gmax + 1e-15:
            raise ValueError(f"gamma must be <= 2 + (2s-1)/(2s+1) = {gmax:.6g}, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"norm Holder exponent must lie in (0, 1), got {self.alpha}")


def _holder(r, f, weight_exp, alpha, reach=1.0):
    best = 0.0
    n = len(r)
    for k in range(1, n):
        dr = r[k:] - r[:-k]
        m = dr <= reach
        if not m.any():
            break
        q = r[:-k][m] ** weight_exp * np.abs(f[k:][m] - f[:-k][m]) / dr[m] ** alpha
        best = max(best, float(q.max()))
    return best


def _as_arrays(p, r=None):
    if isinstance(p, RadialProfile):
        if r is None:
            return p.r, p.values, p.d1, p.d2
        return (np.asarray(r),) + tuple(p.derivatives(r))
    return p


def weighted_norms(p, spec: WeightedNormSpec, kind: str = "*", components: bool = False):
    """||phi||_* or ||h||_** on the grid, starting at spec.domain_start.

    ``p`` is a RadialProfile or a tuple of arrays (r, f[, f', f'']).
    """
    arrs = _as_arrays(p)
    r = np.asarray(arrs[0])
    m = r >= spec.domain_start - 1e-12
    g, a = spec.gamma, spec.alpha
    if kind == "*":
        _, f, f1, f2 = (np.asarray(x)[m] for x in arrs)
        r = r[m]
        parts = [np.max(r ** (g - 2) * np.abs(f)), np.max(r ** (g - 1) * np.abs(f1)),
                 np.max(r**g * np.abs(f2)), _holder(r, f2, g + a, a)]
    elif kind == "**":
        f = np.asarray(arrs[1])[m]
        r = r[m]
        parts = [np.max(r**g * np.abs(f)), _holder(r, f, g + a, a)]
    else:
        raise ValueError("kind must be '*' or '**'")
    parts = [float(x) for x in parts]
    return parts if components else float(sum(parts))


def _l0_coefficients(r, F0, chi, s, eps, coefficient):
    _, f1, f2 = F0
    q = 1.0 + f1 * f1
    m = q**-1.5
    mp = -3.0 * f1 * f2 * q**-2.5
    a = (1 - chi) * m + chi
    b = (1 - chi) * (m / r + mp) + chi / r
    c = chi * 2 * s * coefficient * eps ** (2 * s - 1) * F0[0] ** (-2 * s - 1)
    return a, b, c


def L0_apply(phi, F0: RadialProfile, chi_eps: Callable, s: float, eps: float, coefficient: float = 1.0):
    """(1-chi)(1/r)(r phi'/(1+F0'^2)^{3/2})' + chi(phi'' + phi'/r + 2s k eps^{2s-1} F0^{-2s-1} phi).

    ``phi`` is a RadialProfile (evaluated on the grid of F0) or a tuple of
    arrays (phi, phi', phi'') on that grid.
    """
    r = F0.r
    if isinstance(phi, RadialProfile):
        v, d1, d2 = phi.derivatives(r)
    else:
        v, d1, d2 = phi
    a, b, c = _l0_coefficients(r, (F0.values, F0.d1, F0.d2), chi_eps(r), s, eps, coefficient)
    return a * d2 + b * d1 + c * v


def _cumint(x, y):
    if len(x) < 2:
        return np.zeros_like(x)
    if len(x) < 4:
        return np.concatenate([[0.0], np.cumsum(0.5 * np.diff(x) * (y[1:] + y[:-1]))])
    return CubicSpline(x, y).antiderivative()(x)


@dataclass
class ReducedContext:
    """Everything T needs: grid, F0, chi_eps and the outer kernels in original variables."""

    s: float
    eps: float
    coefficient: float
    delta0: float
    r1: float
    r_eps: float
    tilde_r: float
    F0: RadialProfile
    chi: ChiEps
    Z: tuple  # (Z1, Z1', Z2, Z2') on the outer nodes
    Z2_profile: RadialProfile
    norms: WeightedNormSpec

    @property
    def grid(self):
        return self.F0.r

    def regions(self):
        r = self.grid
        return (r <= self.r_eps), (r >= self.r_eps) & (r <= self.tilde_r), (r >= self.tilde_r)


def reduced_context(s: float, eps: float, coefficient: float = 1.0, delta0: float = 0.1,
                    cutoffs: Optional[CutoffPair] = None, nodes: int = 3000, r_out: Optional[float] = None,
                    gamma: float = 2.0, alpha_norm: float = 0.5, tol: float = 1e-11,
                    r1: float = R1_DEFAULT, extra_nodes=()) -> ReducedContext:
    """Build F0, chi_eps and the kernels Z1, Z2 on a log-graded grid from r1."""
    s = check_order(s, pipeline=True)
    L = abs(np.log(eps))
    d0 = effective_delta0(eps, delta0)
    if d0 != delta0:
        log.info("delta0 raised from %g to %g so that delta0 |log eps| > 1", delta0, d0)
    re = r_eps(s, eps)
    rt = d0 * L * re
    r_in = max(re, r1)
    r_out = 200.0 * rt if r_out is None else r_out
    grid = log_graded_grid(r1, r_out, nodes, extra=(r_in, re + 1, rt) + tuple(extra_nodes))
    f_eps = continue_f_eps(s, eps, max(r_out, 10 * L * re), tol=tol, coefficient=coefficient)
    F0 = blend_F0(s, eps, cutoffs, grid=grid, coefficient=coefficient, delta0=delta0, f_eps=f_eps)
    g = rescaled_g(f_eps, eps)
    scale = L * re
    Z2 = kernel_Z2(g, d0, rho_max=r_out / scale, tol=tol)
    outer = grid >= rt
    Z1, Z1p, Zb, Zbp, _ = Z2.info["fields"](np.maximum(grid[outer] / scale, d0))
    Z = (Z1, Z1p / scale, Zb, Zbp / scale)
    return ReducedContext(s, eps, coefficient, d0, r1, r_in, rt, F0, ChiEps(r_in, rt, cutoffs or CutoffPair()),
                          Z, Z2, WeightedNormSpec(s, gamma, alpha_norm, r1))


def right_inverse_T(h, norms: Optional[WeightedNormSpec], ctx: ReducedContext, picard_tol: float = 1e-14,
                    max_picard: int = 400) -> RadialProfile:
    """phi = T(h) with L0 phi = h and phi(r1) = phi'(r1) = 0.

    Inner region [r1, r_eps]: the linearized mean-curvature operator is in
    divergence form and is inverted by two quadratures.  Intermediate
    [r_eps, tilde_r]: phi = phi(r_eps) + r_eps phi'(r_eps) log(r/r_eps) plus the
    double integral of the non-Laplacian remainder, iterated to a fixed point
    (a Volterra equation).  Outer [tilde_r, R_out]: variation of parameters
    with Z1, Z2 and constants c1, c2 matching value and slope at tilde_r.
    """
    norms = norms or ctx.norms
    r = ctx.grid
    if callable(h) and not isinstance(h, np.ndarray):
        h = h(r)
    h = np.asarray(h, dtype=float)
    F0 = (ctx.F0.values, ctx.F0.d1, ctx.F0.d2)
    a, b, c = _l0_coefficients(r, F0, ctx.chi(r), ctx.s, ctx.eps, ctx.coefficient)
    phi = np.zeros_like(r)
    d1 = np.zeros_like(r)
    d2 = np.zeros_like(r)
    inner, mid, outer = ctx.regions()

    # inner: (r phi'/a)' = r h with a = (1+F0'^2)^{3/2}
    ri = r[inner]
    if len(ri) > 1:
        ain = 1.0 / a[inner]
        I = _cumint(ri, ri * h[inner])
        d1[inner] = ain * I / ri
        phi[inner] = _cumint(ri, d1[inner])
    d2[inner] = (h[inner] - b[inner] * d1[inner] - c[inner] * phi[inner]) / a[inner]

    # intermediate: Picard iteration on the double-integral form
    j0 = int(np.flatnonzero(mid)[0])
    rm = r[mid]
    p0, q0 = phi[j0], d1[j0]
    am, bm, cm, hm = a[mid], b[mid], c[mid], h[mid]
    v = p0 + rm[0] * q0 * np.log(rm / rm[0])
    v1 = rm[0] * q0 / rm
    for it in range(max_picard):
        R = (hm - bm * v1 - cm * v) / am + v1 / rm
        v1n = (rm[0] * q0 + _cumint(rm, rm * R)) / rm
        vn = p0 + _cumint(rm, v1n)
        change = np.max(np.abs(vn - v)) + np.max(np.abs(v1n - v1))
        v, v1 = vn, v1n
        if change <= picard_tol * max(1.0, np.max(np.abs(v))):
            break
    else:
        raise ReducedSolveError("intermediate-region Volterra iteration did not converge")
    phi[mid], d1[mid] = v, v1
    d2[mid] = (hm - bm * v1 - cm * v) / am

    # outer: variation of parameters with r W = 1
    Z1, Z1p, Z2, Z2p = ctx.Z
    ro = r[outer]
    ho = h[outer]
    J1 = _cumint(ro, ro * Z1 * ho)
    J2 = _cumint(ro, ro * Z2 * ho)
    det = Z1[0] * Z2p[0] - Z1p[0] * Z2[0]
    if abs(det * ro[0] - 1.0) > 1e-4:
        raise ReducedSolveError(f"matching system singular or mis-normalized: r W = {det * ro[0]}")
    jt = int(np.flatnonzero(outer)[0])
    pv, pd = phi[jt], d1[jt]
    c1 = (pv * Z2p[0] - pd * Z2[0]) / det
    c2 = (Z1[0] * pd - Z1p[0] * pv) / det
    phi[outer] = -Z1 * J2 + Z2 * J1 + c1 * Z1 + c2 * Z2
    d1[outer] = -Z1p * J2 + Z2p * J1 + c1 * Z1p + c2 * Z2p
    d2[outer] = (ho - b[outer] * d1[outer] - c[outer] * phi[outer]) / a[outer]

    out = RadialProfile(r, phi, d1, d2, ctx.s)
    hn = weighted_norms((r, h), norms, "**")
    pn = weighted_norms(out, norms, "*")
    out.info.update(norm_star=pn, norm_h=hn, bound_constant=pn / hn if hn > 0 else 0.0,
                    matching=(float(c1), float(c2)), picard_iterations=it + 1)
    return out


####################################################################
# neck and fixed point


def solve_neck(z1: float = Z1_DEFAULT, forcing: Optional[Callable] = None, tol: float = 1e-12,
               nodes: int = 201) -> NeckProfile:
    """(G'/sqrt(1+G'^2))' - 1/(G sqrt(1+G'^2)) = N0(z) on [0, z1], G(0) = 1, G'(0) = 0."""
    N0 = forcing or (lambda z: 0.0)

    def rhs(z, y):
        q = 1.0 + y[1] * y[1]
        return [y[1], q / y[0] + q**1.5 * N0(z)]

    sol = solve_ivp(rhs, (0.0, z1), [1.0, 0.0], method="DOP853", rtol=tol, atol=tol * 1e-2, dense_output=True)
    if not sol.success:
        raise ReducedSolveError(f"neck integration failed: {sol.message}")
    z = np.linspace(0.0, z1, nodes)
    G, dG = sol.sol(z)
    G[0], dG[0] = 1.0, 0.0
    d2G = np.array([rhs(zz, (gg, pp))[1] for zz, gg, pp in zip(z, G, dG)])
    # residual with G'' from a centred difference of the dense G'
    # (the dense polynomial extends smoothly a step past either end)
    hh = 1e-3
    D = [(sol.sol(z + e)[1] - sol.sol(z - e)[1]) / (2 * e) for e in (hh, hh / 2)]
    g2 = (4 * D[1] - D[0]) / 3.0
    q = 1.0 + dG * dG
    res = g2 / q**1.5 - 1.0 / (G * np.sqrt(q)) - np.array([N0(zz) for zz in z])
    return NeckProfile(z, G, dG, d2G, z1, float(G[-1]), float(dG[-1]), float(np.max(np.abs(res))))


def interaction_forcing(s, eps, coefficient):
    """Leaf attraction k eps^{2s-1} F^{-2s}."""
    k = coefficient * eps ** (2 * s - 1)
    return lambda r, F: k * np.asarray(F) ** (-2 * s)


def reduced_operator(ctx: ReducedContext, F, R_bar: float = 10.0, mid_forcing=None, far_forcing=None,
                     cutoffs: Optional[CutoffPair] = None):
    """Residual E[F] of the mid (mean curvature) and far (Laplacian) equations, blended at 4 R_bar."""
    cutoffs = cutoffs or CutoffPair()
    r = ctx.grid
    v, d1, d2 = F
    lead = interaction_forcing(ctx.s, ctx.eps, ctx.coefficient)
    N1 = lead(r, v) if mid_forcing is None else mid_forcing(r, v)
    N2 = 0.0 if far_forcing is None else far_forcing(r, v)
    w = cutoffs.chi(r - 4.0 * R_bar)
    mid = graph_mean_curvature(r, d1, d2) - N1
    far = d2 + d1 / r - lead(r, v) - N2
    return (1 - w) * mid + w * far


@dataclass
class ReducedSolution:
    neck: NeckProfile
    F: RadialProfile
    phi: RadialProfile
    report: dict


def solve_reduced(s: float, eps: float, constants: dict, cutoffs: Optional[CutoffPair] = None,
                  tol: float = 1e-9, R_bar: float = 10.0, delta0: float = 0.1, nodes: int = 3000,
                  gamma: float = 2.0, alpha_norm: float = 0.5, mid_forcing=None, far_forcing=None,
                  neck_forcing=None, max_iter: int = 60) -> ReducedSolution:
    """Solve the neck equation and the graph equation F = F0 + phi, phi = T(A[phi]).

    ``constants`` holds C_bar and C_bar_pm; the far forcing coefficient is
    C_bar_pm / C_bar.  The mid forcing defaults to the same leaf attraction
    k eps^{2s-1} F^{-2s}, which is of order eps^{2s-1} on [r1, 4 R_bar].
    """
    s = check_order(s, pipeline=True)
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    Cb, Cpm = float(constants["C_bar"]), float(constants["C_bar_pm"])
    if Cb <= 0 or Cpm <= 0:
        raise ValueError("projection constants must be positive")
    k = Cpm / Cb
    cutoffs = cutoffs or CutoffPair()
    neck = solve_neck(forcing=neck_forcing)
    r1, z1 = neck.r1, neck.z1
    if abs(catenoid_arc(r1, derivatives=False) - z1) > 1e-8 and neck_forcing is None:
        raise ReducedSolveError("matching failure: neck end does not lie on the catenoid arc")
    ctx = reduced_context(s, eps, k, delta0, cutoffs, nodes, gamma=gamma, alpha_norm=alpha_norm, r1=r1,
                          extra_nodes=(4 * R_bar, 4 * R_bar + 1))
    r = ctx.grid
    F0 = (ctx.F0.values, ctx.F0.d1, ctx.F0.d2)
    # hand-off: F(r1) = z1, F'(r1) G'(z1) = 1; F0 is the arc there, phi(r1) = phi'(r1) = 0
    shift = (z1 - F0[0][0], 1.0 / neck.dG_z1 - F0[1][0])
    if max(abs(shift[0]), abs(shift[1])) > 1e-8:
        raise ReducedSolveError(f"matching failure at (r1, z1): offsets {shift}")
    a, b, c = _l0_coefficients(r, F0, ctx.chi(r), s, eps, k)

    def A(p):
        Fv = tuple(F0[i] + p[i] for i in range(3))
        E = reduced_operator(ctx, Fv, R_bar, mid_forcing, far_forcing, cutoffs)
        return -(E - (a * p[2] + b * p[1] + c * p[0]))

    phi = (np.zeros_like(r),) * 3
    deltas, rates = [], []
    damping = 1.0
    converged = False
    for it in range(1, max_iter + 1):
        with np.errstate(invalid="ignore", over="ignore"):
            rhs = A(phi)
        if not np.all(np.isfinite(rhs)):
            rate = max(rates) if rates else float("inf")
            raise NonContractionError("fixed-point iterate left the admissible set (F <= 0)", lipschitz=rate)
        new = right_inverse_T(rhs, ctx.norms, ctx)
        cand = (new.values, new.d1, new.d2)
        step = tuple(damping * (cand[i] - phi[i]) for i in range(3))
        d = weighted_norms((r,) + step, ctx.norms, "*")
        phi = tuple(phi[i] + step[i] for i in range(3))
        if deltas and deltas[-1] > 1e3 * tol:
            rates.append(d / deltas[-1])
        deltas.append(d)
        if len(rates) >= 2 and damping == 1.0 and rates[-1] > 0.9:
            damping = 0.5
            log.info("fixed point: raw contraction %.3g > 0.9, under-relaxing", rates[-1])
        if d <= tol * max(1.0, weighted_norms((r,) + phi, ctx.norms, "*")):
            converged = True
            break
        if len(deltas) > 4 and d > 10 * deltas[0]:
            break
    rate = max(rates) if rates else 0.0
    if not converged or rate >= 1.0:
        raise NonContractionError(f"fixed point did not contract (measured rate {rate:.3g})", lipschitz=rate)

    phi_prof = RadialProfile(r, *phi, s)
    Fv = tuple(F0[i] + phi[i] for i in range(3))
    F = RadialProfile(r, *Fv, s)
    F.fit_tail()
    report = _reduced_report(ctx, neck, F, phi_prof, Cb, Cpm, R_bar, rate, len(deltas), deltas, tol,
                             mid_forcing, far_forcing, cutoffs)
    F.info.update(report=report)
    return ReducedSolution(neck, F, phi_prof, report)


def tail_slope(F: RadialProfile, r_lo: float, r_hi: float, samples: int = 200) -> float:
    rr = np.geomspace(r_lo, r_hi, samples)
    return float(np.polyfit(np.log(rr), np.log(F(rr)), 1)[0])


def _reduced_report(ctx, neck, F, phi, Cb, Cpm, R_bar, rate, iters, deltas, tol, mid_forcing, far_forcing,
                    cutoffs):
    s, eps, k = ctx.s, ctx.eps, ctx.coefficient
    r = ctx.grid
    # residuals with F'' from differentiating a spline of F', independent of the solver's pointwise F''
    d2_fd = CubicSpline(r, F.d1)(r, 1)
    Hm = graph_mean_curvature(r, F.d1, d2_fd)
    lead = interaction_forcing(s, eps, k)
    N1 = lead(r, F.values) if mid_forcing is None else mid_forcing(r, F.values)
    midm = r <= 4 * R_bar
    farm = r >= 4 * R_bar + 1
    N2 = 0.0 if far_forcing is None else far_forcing(r, F.values)
    far_res = d2_fd + F.d1 / r - lead(r, F.values) - N2
    far_scale = eps ** (2 * s - 1) * ctx.F0.values ** (-2 * s)
    rt = ctx.tilde_r
    slope = tail_slope(F, 10 * rt, 100 * rt)
    beta = growth_exponent(s)
    phin = weighted_norms(phi, ctx.norms, "*")
    inner = r <= ctx.r_eps
    envelope = phin * r[inner] ** (2 - ctx.norms.gamma)
    gap = np.abs(F.values[inner] - catenoid_arc(r[inner], derivatives=False))
    return {
        "s": s,
        "eps": eps,
        "r1": neck.r1,
        "z1": neck.z1,
        "r_eps": ctx.r_eps,
        "tilde_r_eps": rt,
        "delta0": ctx.delta0,
        "R_bar": R_bar,
        "R_out": float(r[-1]),
        "C_bar": Cb,
        "C_bar_pm": Cpm,
        "C_bar_0": k,
        "contraction_rate": rate,
        "iterations": iters,
        "step_norms": [float(x) for x in deltas],
        "phi_norm": phin,
        "residual_norms": {
            "neck": neck.residual,
            "mid_curvature_sup": float(np.max(np.abs(Hm[midm]))),
            "mid_equation": float(np.max(np.abs(Hm[midm] - N1[midm]))),
            "far_relative": float(np.max(np.abs(far_res[farm]) / far_scale[farm])),
            "matching_value": float(abs(F.values[0] - neck.z1)),
            "matching_slope": float(abs(F.d1[0] * neck.dG_z1 - 1.0)),
        },
        "inner_envelope_ok": bool(np.all(gap <= envelope + 1e-12)),
        "inner_gap_max": float(gap.max()) if gap.size else 0.0,
        "tail_fit": {
            "A": F.tail_A,
            "B": F.tail_B,
            "slope": slope,
            "expected_slope": beta,
            "relative_error": abs(slope / beta - 1.0),
            "A_self_similar": far_field_coefficient(s, eps, k),
        },
    }
