"""One-dimensional heteroclinic layer of the fractional Allen-Cahn equation.

Solves (-d^2/dz^2)^s w + w^3 - w = 0 for the odd increasing profile w with
w(+-inf) = +-1.  The profile is stored as a clamped cubic spline on a
sinh-graded symmetric grid and continued beyond the grid by the algebraic
tail 1 - c |z|^{-2s}, matched in value and slope.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .constants_kernels import (AlgebraicTail, QuadratureScheme, check_order, frac_laplacian_1d_many,
                                normalization_constant, panel_rule, weighted_radial_integral)

log = logging.getLogger(__name__)


class LayerSolveError(RuntimeError):
    """Raised when the layer iteration or its tail fit fails."""


####################################################################
# cut-off functions


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def _smoothstep_d1(t):
    t = np.clip(t, 0.0, 1.0)
    return 30.0 * t * t * (1.0 - t) ** 2


def _smoothstep_d2(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)


@dataclass(frozen=True)
class CutoffPair:
    """C^2 cut-offs: chi = 0 on (-inf,0], 1 on [1,inf); eta = 1 on (-inf,1], 0 on [2,inf)."""

    def chi(self, t, nu: int = 0):
        t = np.asarray(t, dtype=float)
        return (_smoothstep, _smoothstep_d1, _smoothstep_d2)[nu](t)

    def eta(self, t, nu: int = 0):
        t = np.asarray(t, dtype=float)
        if nu == 0:
            return 1.0 - _smoothstep(t - 1.0)
        return -(_smoothstep_d1, _smoothstep_d2)[nu - 1](t - 1.0)

    def zeta(self, z, R_zeta: float):
        """Even compactly supported weight eta(|z|/R_zeta), supported in [-2R_zeta, 2R_zeta]."""
        return self.eta(np.abs(np.asarray(z, dtype=float)) / R_zeta)


####################################################################
# profile container


def symmetric_grid(Z_max: float, node_count: int, stretch: float = 5.0) -> np.ndarray:
    """Odd-sized symmetric grid z = Z_max sinh(k xi)/sinh(k), xi uniform in [-1, 1]."""
    n = int(node_count) | 1
    xi = np.linspace(-1.0, 1.0, n)
    z = Z_max * np.sinh(stretch * xi) / np.sinh(stretch)
    z[n // 2] = 0.0
    return 0.5 * (z - z[::-1])


@dataclass
class LayerProfile:
    s: float
    grid: np.ndarray
    values: np.ndarray
    derivative_values: np.ndarray = field(default=None)
    c_w: float = float("nan")
    residual_sup: float = float("nan")
    tail_exponent: float = float("nan")
    iterations: int = 0

    def __post_init__(self):
        self._build()

    def _build(self):
        z, w = self.grid, self.values
        self.Z_max = float(z[-1])
        self.node_count = int(z.size)
        # tail 1 - c_N z^{-2s} matched to the end value, slope from the same model
        self.c_end = float((1.0 - w[-1]) * self.Z_max ** (2 * self.s))
        slope = 2 * self.s * self.c_end * self.Z_max ** (-2 * self.s - 1)
        self._spline = CubicSpline(z, w, bc_type=((1, slope), (1, slope)))
        self._dspline = self._spline.derivative()
        self.derivative_values = self._dspline(z)

    def tail_model(self) -> AlgebraicTail:
        return AlgebraicTail(p=2 * self.s, c=self.c_end, lim_plus=1.0, lim_minus=-1.0)

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) <= self.Z_max
        out = np.empty_like(z)
        out[inside] = self._spline(z[inside])
        zo = z[~inside]
        out[~inside] = np.sign(zo) * (1.0 - self.c_end * np.abs(zo) ** (-2 * self.s))
        return out

    __call__ = evaluate

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) <= self.Z_max
        out = np.empty_like(z)
        out[inside] = self._dspline(z[inside])
        zo = np.abs(z[~inside])
        out[~inside] = 2 * self.s * self.c_end * zo ** (-2 * self.s - 1)
        return out

    def scheme(self, base: Optional[QuadratureScheme] = None) -> QuadratureScheme:
        return (base or QuadratureScheme()).with_tail(self.tail_model())

    def residual(self, z=None, scheme: Optional[QuadratureScheme] = None) -> np.ndarray:
        """(-d^2)^s w + w^3 - w at the points z (default: the grid)."""
        z = self.grid if z is None else np.atleast_1d(np.asarray(z, dtype=float))
        lap = frac_laplacian_1d_many(self.evaluate, z, self.s, self.scheme(scheme))
        w = self.evaluate(z)
        return lap + w**3 - w

    def metadata(self) -> dict:
        return {"s": self.s, "c_w": self.c_w, "residual_sup": self.residual_sup,
                "Z_max": self.Z_max, "node_count": self.node_count}


####################################################################
# discrete operators


def _p1_matrix(z: np.ndarray, s: float, ghosts: int = 60):
    """Affine piecewise-linear approximation L w ~ A w + b of the operator at the nodes.

    The two elements adjacent to a node use the local quadratic so that the
    principal value is finite.  The grid is padded with ghost nodes carrying
    the algebraic tail, whose values are affine in the end values.
    """
    n = z.size
    C = normalization_constant(1, s)
    p = 2 * s
    Z = z[-1]
    ratio = np.geomspace(1.0, 1e3, ghosts + 1)[1:]
    zg = Z * ratio
    ze = np.concatenate([-zg[::-1], z, zg])
    off = ghosts
    h = np.diff(ze)
    zl, zr = ze[:-1], ze[1:]
    Ae = np.zeros((n, ze.size))
    b = np.zeros(n)
    for r in range(n):
        i = r + off
        d_l = zl - ze[i]
        d_r = zr - ze[i]
        far = np.ones(ze.size - 1, dtype=bool)
        far[i - 1] = False
        far[i] = False
        right = d_l >= 0
        a = np.where(right, d_l, -d_r)[far]
        c = np.where(right, d_r, -d_l)[far]
        M0 = (a ** (-p) - c ** (-p)) / p
        Mt = (c ** (1 - p) - a ** (1 - p)) / (1 - p)
        # int (z - z_k) |z_i - z|^{-1-2s} over the element starting at z_k
        M1 = np.where(right[far], Mt - a * M0, c * M0 - Mt)
        k = np.nonzero(far)[0]
        hk = h[far]
        Ae[r, i] += C * M0.sum()
        np.add.at(Ae[r], k, -C * (M0 - M1 / hk))
        np.add.at(Ae[r], k + 1, -C * (M1 / hk))
        hl, hr = ze[i] - ze[i - 1], ze[i + 1] - ze[i]
        cq = np.array([1 / (hl * (hl + hr)), -1 / (hl * hr), 1 / (hr * (hl + hr))])
        bq = np.array([-hr / (hl * (hl + hr)), (hr - hl) / (hl * hr), hl / (hr * (hl + hr))])
        I_odd = (hr ** (1 - p) - hl ** (1 - p)) / (1 - p)
        I_even = (hl ** (2 - p) + hr ** (2 - p)) / (2 - p)
        Ae[r, i - 1:i + 2] -= C * (bq * I_odd + cq * I_even)
        # beyond the padded grid the profile is taken as +-1
        T0r = (ze[-1] - ze[i]) ** (-p) / p
        T0l = (ze[i] - ze[0]) ** (-p) / p
        Ae[r, i] += C * (T0r + T0l)
        b[r] += C * (T0l - T0r)
    A = Ae[:, off:off + n].copy()
    rk = ratio ** (-p)
    gr = Ae[:, off + n:]
    gl = Ae[:, :off][:, ::-1]
    # right ghost = (1 - r_k) + r_k w_end ; left ghost = -(1 - r_k) + r_k w_start
    A[:, -1] += gr @ rk
    A[:, 0] += gl @ rk
    b += gr @ (1 - rk) - gl @ (1 - rk)
    return A, b


def _fold_odd(A: np.ndarray) -> np.ndarray:
    """Restrict a full-grid matrix to odd vectors parameterized by positive nodes."""
    n = A.shape[0]
    m = n // 2
    pos = np.arange(m + 1, n)
    neg = np.arange(m - 1, -1, -1)
    return A[np.ix_(pos, pos)] - A[np.ix_(pos, neg)]


####################################################################
# solver


def _odd_extend(grid, wpos):
    m = grid.size // 2
    w = np.empty(grid.size)
    w[m] = 0.0
    w[m + 1:] = wpos
    w[:m] = -wpos[::-1]
    return w


def _fit_tail(profile: LayerProfile):
    z, w = profile.grid, profile.values
    sel = z >= 0.75 * profile.Z_max
    lz, lv = np.log(z[sel]), np.log(1.0 - w[sel])
    slope, _ = np.polyfit(lz, lv, 1)
    p = 2 * profile.s
    log_c = np.mean(lv + p * lz)
    c_w = float(np.exp(log_c))
    rel = np.max(np.abs((1.0 - w[sel]) / (c_w * z[sel] ** (-p)) - 1.0))
    return c_w, float(-slope), float(rel)


def _solve_direct(s, grid, w0, tol, max_iter, scheme):
    m = grid.size // 2
    A, b = _p1_matrix(grid, s)
    Ah = _fold_odd(A)
    wpos = w0[m + 1:].copy()
    best = np.inf
    for it in range(1, max_iter + 1):
        prof = LayerProfile(s, grid, _odd_extend(grid, wpos))
        R = prof.residual(grid[m + 1:], scheme)
        err = float(np.max(np.abs(R)))
        log.debug("layer s=%.3f iter %d residual %.3e", s, it, err)
        if err <= tol:
            return prof, err, it
        J = Ah + np.diag(3 * wpos**2 - 1.0)
        step = np.linalg.solve(J, R)
        lam = 1.0
        if err > 2 * best:
            lam = 0.5
        best = min(best, err)
        wpos = np.clip(wpos - lam * step, -0.999999, 0.999999)
        wpos = np.maximum.accumulate(np.maximum(wpos, 1e-14))
    prof = LayerProfile(s, grid, _odd_extend(grid, wpos))
    err = float(np.max(np.abs(prof.residual(grid[m + 1:], scheme))))
    return prof, err, max_iter


def solve_layer(s: float, Z_max: float = 100.0, node_count: int = 601, tol: float = 1e-8,
                continuation: bool = False, max_iter: int = 40, scheme: Optional[QuadratureScheme] = None,
                initial: Optional[LayerProfile] = None, s_start: float = 0.95, s_step: float = 0.05) -> LayerProfile:
    """Compute the odd increasing layer profile for order s.

    Parameters
    ----------
    s : float
        Fractional order in (1/2, 1).
    Z_max, node_count : float, int
        Half-width and size of the symmetric graded grid.
    tol : float
        Target sup-norm residual; the accepted residual is max(tol, 1e-4).
    continuation : bool
        Walk down in s from ``s_start`` reusing each solution as initial guess.

    Returns
    -------
    LayerProfile
    """
    s = check_order(s)
    if Z_max < 50:
        raise ValueError("Z_max must be at least 50")
    if node_count < 400:
        raise ValueError("node_count must be at least 400")
    if tol < 1e-10:
        raise ValueError("tol must be at least 1e-10")
    grid = symmetric_grid(Z_max, node_count)
    accept = max(tol, 1e-4)
    if continuation and s < s_start:
        path = list(np.arange(s_start, s, -s_step)) + [s]
        prof = initial
        for sk in path:
            prof = solve_layer(sk, Z_max, node_count, tol, False, max_iter, scheme, prof)
        return prof
    if initial is not None:
        w0 = initial.evaluate(grid)
    else:
        w0 = np.tanh(grid / np.sqrt(2.0))
    prof, err, its = _solve_direct(s, grid, w0, tol, max_iter, scheme)
    if not err <= accept:
        raise LayerSolveError(f"layer iteration did not converge for s={s}: residual {err:.3e}")
    prof.residual_sup = err
    prof.iterations = its
    if np.any(np.diff(prof.values) <= 0) or np.any(np.abs(prof.values) >= 1):
        raise LayerSolveError("layer profile lost monotonicity or left (-1, 1)")
    c_w, expo, rel = _fit_tail(prof)
    prof.c_w, prof.tail_exponent = c_w, expo
    prof.tail_fit_error = rel
    if rel > 0.05:
        raise LayerSolveError(f"tail fit relative error {rel:.3f} exceeds 5%")
    return prof


####################################################################
# curvature weight and projections


def c_H(z0, profile: LayerProfile, scheme: Optional[QuadratureScheme] = None, strict: bool = True):
    """Curvature weight C_{1,s} int (w(z0)-w(z)) (z0-z) |z0-z|^{-1-2s} dz.

    Written as C_{1,s} int_0^inf (w(z0+t) - w(z0-t)) t^{-2s} dt.  Accepts a
    scalar or an array of z0.
    """
    z0a = np.atleast_1d(np.asarray(z0, dtype=float))
    if strict and np.any(np.abs(z0a) > 0.5 * profile.Z_max):
        raise ValueError("c_H requires |z0| <= Z_max/2")
    s = profile.s
    sch = profile.scheme(scheme)
    tm = sch.tail_model
    zc = z0a[:, None]

    def g(t):
        return (profile.evaluate(zc + t) - profile.evaluate(zc - t)) * t

    def tail_g(t):
        return tm(zc + t) - tm(zc - t)

    # core/excision in the form int g t^{-1-2s}; tail in the form int E t^{-1-(2s-1)}
    delta = sch.excision_radius
    t, w = sch.radial_nodes()
    core = g(t) @ (w * t ** (-1.0 - 2 * s))
    excised = g(np.array([delta]))[:, 0] * delta ** (-2 * s) / (2.0 - 2 * s)
    q = 2 * s - 1
    from .constants_kernels import _tail_nodes
    tt, tw = _tail_nodes(sch.truncation_radius, q)
    tail = tail_g(tt) @ tw
    val = normalization_constant(1, s) * (core + excised + tail)
    return float(val[0]) if np.ndim(z0) == 0 else val


def c_H_alternative(z0, profile: LayerProfile, scheme: Optional[QuadratureScheme] = None):
    """Same weight as (C_{1,s}/(2s-1)) int w'(z) |z0-z|^{1-2s} dz."""
    z0a = np.atleast_1d(np.asarray(z0, dtype=float))
    s = profile.s
    sch = profile.scheme(scheme)
    zc = z0a[:, None]

    def g(t):
        return (profile.derivative(zc + t) + profile.derivative(zc - t)) * t * t

    val = normalization_constant(1, s) / (2 * s - 1) * weighted_radial_integral(g, 2 * s, sch)
    return float(val[0]) if np.ndim(z0) == 0 else val


def _even_rule(Z: float, order: int = 8):
    edges = np.concatenate([np.geomspace(1e-3, 1.0, 8)[:-1], np.arange(1.0, Z + 0.25, 0.5)])
    edges = np.concatenate([[0.0], edges[edges < Z], [Z]])
    return panel_rule(edges, order)


def projection_constants(profile: LayerProfile, cutoffs: Optional[CutoffPair] = None, R_zeta: float = 20.0,
                         scheme: Optional[QuadratureScheme] = None) -> tuple[float, float]:
    """(C_bar, C_bar_pm) = (int c_H zeta w', int 3 c_w (1-w^2) zeta w')."""
    if 2 * R_zeta > profile.Z_max:
        raise ValueError("projection weight support 2 R_zeta must not exceed Z_max")
    cutoffs = cutoffs or CutoffPair()
    x, wq = _even_rule(2 * R_zeta)
    zeta = cutoffs.zeta(x, R_zeta)
    wp = profile.derivative(x)
    ch = c_H(x, profile, scheme, strict=False)
    w = profile.evaluate(x)
    C_bar = 2.0 * np.sum(wq * ch * zeta * wp)
    C_bar_pm = 2.0 * np.sum(wq * 3.0 * profile.c_w * (1.0 - w * w) * zeta * wp)
    return float(C_bar), float(C_bar_pm)


def far_interaction(profile: LayerProfile, z_plus, z_minus):
    """Two-leaf interaction 3 (w+ + w-)(1 + w+)(1 + w-)."""
    wp = profile.evaluate(np.asarray(z_plus, dtype=float))
    wm = profile.evaluate(np.asarray(z_minus, dtype=float))
    return 3.0 * (wp + wm) * (1.0 + wp) * (1.0 + wm)


def allen_cahn_nonlinearity(u):
    u = np.asarray(u, dtype=float)
    return u**3 - u
