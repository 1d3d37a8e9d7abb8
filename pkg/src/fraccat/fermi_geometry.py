"""Geometry of rotationally symmetric interfaces and the approximate solution.

A surface of revolution about the x3 axis is described by its meridian, a
planar curve sigma -> (r(sigma), h(sigma)).  Meridians built here cover both
leaves: sigma >= 0 is the upper leaf and sigma < 0 its mirror image, joined
smoothly through the neck.  A chart rescales the meridian by 1/eps and
provides normals, curvatures, nearest-point projection, tangent-graph
coordinates and the Fermi-map Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .layer1d import CutoffPair, LayerProfile


class TubeError(RuntimeError):
    """Raised when a point or a chart leaves the region where Fermi coordinates are valid."""


@dataclass(frozen=True)
class CurvatureData:
    kappa1: float
    kappa2: float
    H: float
    divergence_form: float
    holder_bound: float = float("nan")


def _radial_derivs(F, r):
    out = F(r) if callable(F) else F.derivatives(r)
    return tuple(np.asarray(v, dtype=float) for v in out[:3])


def curvatures(F, r: float, fd_step: float = 1e-3) -> CurvatureData:
    """Principal and mean curvature of the revolution graph x3 = F(|x'|) at radius r.

    ``F`` is a callable (or object with ``derivatives``) returning
    (F, F', F'') at an array of radii.  The divergence form
    (1/r)(r F'/sqrt(1+F'^2))' is evaluated independently by a Richardson
    extrapolated central difference and returned alongside.
    """
    r = float(r)
    _, d1, d2 = (float(np.ravel(v)[0]) for v in _radial_derivs(F, np.array([r])))
    q = 1.0 + d1 * d1
    k1 = d2 / q**1.5
    k2 = d1 / (r * np.sqrt(q))

    def flux(x):
        d = _radial_derivs(F, np.asarray(x, dtype=float))[1]
        return x * d / np.sqrt(1.0 + d * d)

    h = fd_step * max(1.0, abs(r)) * 0.5 if r - fd_step <= 0 else fd_step
    h = min(h, 0.25 * (r - getattr(F, "r_start", -np.inf))) if np.isfinite(getattr(F, "r_start", -np.inf)) else h
    d_h = (flux(np.array([r + h])) - flux(np.array([r - h])))[0] / (2 * h)
    d_h2 = (flux(np.array([r + h / 2])) - flux(np.array([r - h / 2])))[0] / h
    div = (4 * d_h2 - d_h) / 3.0 / r
    return CurvatureData(k1, k2, 0.5 * (k1 + k2), float(div), float("nan"))


def neck_mean_curvature(G, z: float) -> float:
    """(G'/sqrt(1+G'^2))' - 1/(G sqrt(1+G'^2)) for the neck written as r = G(x3)."""
    g, g1, g2 = (float(np.ravel(v)[0]) for v in _radial_derivs(G, np.array([float(z)])))
    if g <= 0:
        raise ValueError("neck radius G must be positive")
    q = 1.0 + g1 * g1
    return g2 / q**1.5 - 1.0 / (g * np.sqrt(q))


####################################################################
# meridians


class Meridian:
    """Planar generating curve (r, h)(sigma) with first and second derivatives."""

    sigma_min = -np.inf
    sigma_max = np.inf

    def derivs(self, sigma):  # pragma: no cover - interface
        raise NotImplementedError

    def guesses(self, rho, x3):
        """Initial parameters for the nearest-point search (unscaled coordinates)."""
        raise NotImplementedError


class NeckGraphMeridian(Meridian):
    """Neck r = G(h) on |h| <= z1 joined to the graph h = +-F(r), r >= r1.

    Parameterization: sigma = h on the neck and sigma = +-(z1 + r - r1) on the
    leaves; with G'(z1) = F'(r1) = 1 the parameter speed is continuous.
    """

    def __init__(self, G: Callable, z1: float, F: Callable, r1: float, r_max: float = np.inf):
        self.G, self.z1, self.F, self.r1 = G, float(z1), F, float(r1)
        self.sigma_max = self.z1 + (r_max - self.r1)
        self.sigma_min = -self.sigma_max
        self.r_max = r_max

    def derivs(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        sg = np.where(sigma < 0, -1.0, 1.0)
        a = np.abs(sigma)
        neck = a <= self.z1
        r = np.empty_like(a)
        h = np.empty_like(a)
        r1d, h1d, r2d, h2d = (np.empty_like(a) for _ in range(4))
        if np.any(neck):
            g, g1, g2 = _radial_derivs(self.G, a[neck])
            r[neck], h[neck] = g, a[neck]
            r1d[neck], h1d[neck] = g1, 1.0
            r2d[neck], h2d[neck] = g2, 0.0
        gr = ~neck
        if np.any(gr):
            rr = self.r1 + a[gr] - self.z1
            f, f1, f2 = _radial_derivs(self.F, rr)
            r[gr], h[gr] = rr, f
            r1d[gr], h1d[gr] = 1.0, f1
            r2d[gr], h2d[gr] = 0.0, f2
        # mirror: (r, h)(sigma) = (r, -h)(-sigma)
        return (r, sg * h), (sg * r1d, h1d), (r2d, sg * h2d)

    def guesses(self, rho, x3):
        g_leaf = self.z1 + np.maximum(rho - self.r1, 0.0)
        g_neck = np.clip(x3, -self.z1, self.z1)
        sg = np.where(x3 < 0, -1.0, 1.0)
        return [sg * np.minimum(g_leaf, self.sigma_max), g_neck]


class GraphMeridian(Meridian):
    """A single leaf h = F(r), r >= r_start, parameterized by sigma = r."""

    def __init__(self, F: Callable, r_start: float = 1e-9, r_max: float = np.inf):
        self.F = F
        self.sigma_min, self.sigma_max = float(r_start), float(r_max)

    def derivs(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        f, f1, f2 = _radial_derivs(self.F, sigma)
        one, zero = np.ones_like(sigma), np.zeros_like(sigma)
        return (sigma, f), (one, f1), (zero, f2)

    def guesses(self, rho, x3):
        return [np.clip(rho, self.sigma_min, self.sigma_max)]


def catenoid_neck(h):
    h = np.asarray(h, dtype=float)
    return np.cosh(h), np.sinh(h), np.cosh(h)


def catenoid_graph(r):
    r = np.asarray(r, dtype=float)
    q = np.sqrt(np.maximum(r * r - 1.0, 0.0))
    with np.errstate(divide="ignore"):
        return np.arccosh(np.maximum(r, 1.0)), 1.0 / q, -r / q**3


R1_DEFAULT = float(np.sqrt(2.0))
Z1_DEFAULT = float(np.log(1.0 + np.sqrt(2.0)))


def catenoid_meridian(r_max: float = np.inf) -> NeckGraphMeridian:
    return NeckGraphMeridian(catenoid_neck, Z1_DEFAULT, catenoid_graph, R1_DEFAULT, r_max)


def flat_meridian(height: float = 0.0) -> GraphMeridian:
    def F(r):
        r = np.asarray(r, dtype=float)
        return np.full_like(r, height), np.zeros_like(r), np.zeros_like(r)

    return GraphMeridian(F, -np.inf, np.inf)


####################################################################
# charts


@dataclass
class FermiChart:
    """The rescaled surface eps^{-1} M with its Fermi-coordinate machinery."""

    meridian: Meridian
    eps: float = 1.0
    delta_bar: float = 0.1
    tube_halfwidth: float = field(default=None)

    def __post_init__(self):
        if self.tube_halfwidth is None:
            self.tube_halfwidth = 8.0 * self.delta_bar / self.eps

    # curve in scaled coordinates -------------------------------------------
    def curve(self, sigma):
        (r, h), (r1, h1), (r2, h2) = self.meridian.derivs(sigma)
        e = self.eps
        return (r / e, h / e), (r1 / e, h1 / e), (r2 / e, h2 / e)

    def frame(self, sigma):
        """Unit tangent (T_r, T_h) and normal (N_r, N_h) = (-T_h, T_r) of the meridian."""
        _, (r1, h1), _ = self.curve(sigma)
        sp = np.hypot(r1, h1)
        return (r1 / sp, h1 / sp), (-h1 / sp, r1 / sp)

    def principal_curvatures(self, sigma):
        (r, h), (r1, h1), (r2, h2) = self.curve(sigma)
        sp = np.hypot(r1, h1)
        k1 = (r1 * h2 - h1 * r2) / sp**3
        k2 = h1 / (r * sp)
        return k1, k2

    def mean_curvature(self, sigma):
        k1, k2 = self.principal_curvatures(sigma)
        return 0.5 * (k1 + k2)

    # points -----------------------------------------------------------------
    def phi_planar(self, sigma, z):
        (r, h), _, _ = self.curve(sigma)
        _, (nr, nh) = self.frame(sigma)
        return r + z * nr, h + z * nh

    def phi(self, sigma, theta, z):
        """Fermi map x = y(sigma, theta) + z nu(y)."""
        rr, hh = self.phi_planar(sigma, z)
        return np.stack([rr * np.cos(theta), rr * np.sin(theta), hh], axis=-1)

    def project_planar(self, rho, x3, leaf: Optional[str] = None, iters: int = 60, check: bool = False):
        """Nearest meridian point to (rho, x3) in the half-plane; returns (sigma, z).

        ``leaf`` restricts the search to sigma >= 0 ("upper") or sigma <= 0
        ("lower").  Safeguarded Newton on (Gamma(sigma) - p).Gamma'(sigma) = 0
        from several starting guesses, keeping the closest critical point.
        """
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        lo, hi = self.meridian.sigma_min, self.meridian.sigma_max
        if leaf == "upper":
            lo = max(lo, 0.0)
        elif leaf == "lower":
            hi = min(hi, 0.0)
        e = self.eps
        guesses = self.meridian.guesses(e * rho, e * (np.abs(x3) if leaf else x3))
        if leaf == "upper":
            guesses = [np.abs(g) for g in guesses]
        elif leaf == "lower":
            guesses = [-np.abs(g) for g in guesses]
        best_s = None
        best_d = None
        for g0 in guesses:
            s_ = np.clip(np.broadcast_to(g0, rho.shape).astype(float), lo, hi)
            for _ in range(iters):
                (r, h), (r1, h1), (r2, h2) = self.curve(s_)
                dr, dh = r - rho, h - x3
                g = dr * r1 + dh * h1
                gp = r1 * r1 + h1 * h1 + dr * r2 + dh * h2
                gp = np.where(gp > 0, gp, r1 * r1 + h1 * h1)
                step = g / gp
                # limit the step to a fraction of the distance scale
                lim = 0.5 * (np.hypot(dr, dh) + 1.0) / np.hypot(r1, h1)
                step = np.clip(step, -lim, lim)
                s_new = np.clip(s_ - step, lo, hi)
                done = np.all(np.abs(s_new - s_) <= 1e-14 * (1.0 + np.abs(s_)))
                s_ = s_new
                if done:
                    break
            (r, h), _, _ = self.curve(s_)
            d = np.hypot(r - rho, h - x3)
            if best_d is None:
                best_s, best_d = s_.copy(), d
            else:
                better = d < best_d
                best_s = np.where(better, s_, best_s)
                best_d = np.where(better, d, best_d)
        (r, h), _, _ = self.curve(best_s)
        _, (nr, nh) = self.frame(best_s)
        z = (rho - r) * nr + (x3 - h) * nh
        if check and np.any(np.abs(z) > self.tube_halfwidth):
            raise TubeError("point lies outside the Fermi tube")
        return best_s, z

    # tangent-graph chart ---------------------------------------------------
    def tangent_frame(self, sigma0):
        (r0, h0), _, _ = self.curve(np.array([sigma0]))
        (tr, th), (nr, nh) = self.frame(np.array([sigma0]))
        P0 = np.array([r0[0], 0.0, h0[0]])
        e1 = np.array([tr[0], 0.0, th[0]])
        e2 = np.array([0.0, 1.0, 0.0])
        N0 = np.array([nr[0], 0.0, nh[0]])
        return P0, e1, e2, N0

    def tangent_graph_point(self, sigma0, y1, y2, iters: int = 50):
        """Surface point with tangent-plane coordinates (y1, y2) relative to sigma0.

        Returns (sigma, theta, g) with g the height above the tangent plane.
        """
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        P0, e1, _, N0 = self.tangent_frame(sigma0)
        _, (r1, h1), _ = self.curve(np.array([sigma0]))
        s_ = sigma0 + y1 / np.hypot(r1[0], h1[0])
        for _ in range(iters):
            (r, h), (dr, dh), _ = self.curve(s_)
            root = np.sqrt(np.maximum(r * r - y2 * y2, 1e-300))
            f = (root - P0[0]) * e1[0] + (h - P0[2]) * e1[2] - y1
            fp = r * dr / root * e1[0] + dh * e1[2]
            step = f / fp
            s_ = s_ - step
            if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(s_))):
                break
        (r, h), _, _ = self.curve(s_)
        theta = np.arcsin(np.clip(y2 / r, -1.0, 1.0))
        root = np.sqrt(np.maximum(r * r - y2 * y2, 0.0))
        g = (root - P0[0]) * N0[0] + (h - P0[2]) * N0[2]
        return s_, theta, g

    def normal3(self, sigma, theta):
        _, (nr, nh) = self.frame(sigma)
        return np.stack([nr * np.cos(theta), nr * np.sin(theta), nh * np.ones_like(theta)], axis=-1)

    def tangent_graph_map(self, sigma0, y1, y2, z):
        """Phi(y, z) = Y(y) + z nu(Y(y)) in the tangent-graph chart at sigma0."""
        s_, th, _ = self.tangent_graph_point(sigma0, y1, y2)
        return self.phi(s_, th, z)

    def graph_slope(self, sigma0, y1, y2):
        """|Dg|^2 at tangent coordinates (y1, y2)."""
        s_, th, _ = self.tangent_graph_point(sigma0, y1, y2)
        _, e1, e2, N0 = self.tangent_frame(sigma0)
        nu = self.normal3(s_, th)
        c = nu @ N0
        return ((nu @ e1) ** 2 + (nu @ e2) ** 2) / c**2, s_


def fermi_coordinates(chart: FermiChart, x, leaf: Optional[str] = None, check: bool = True):
    """Projection onto the surface and signed distance for points x of shape (..., 3).

    Returns (y_proj, z, sigma) with y_proj + z nu(y_proj) = x.
    """
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 3)
    rho = np.hypot(flat[:, 0], flat[:, 1])
    sig, z = chart.project_planar(rho, flat[:, 2], leaf=leaf, check=check)
    theta = np.arctan2(flat[:, 1], flat[:, 0])
    y = chart.phi(sig, theta, np.zeros_like(sig))
    shp = x.shape[:-1]
    return y.reshape(x.shape), z.reshape(shp), sig.reshape(shp)


def fermi_jacobian(chart: FermiChart, sigma0: float, z, y=(0.0, 0.0)):
    """sqrt(1+|Dg|^2)(1 - k1 z)(1 - k2 z) in the tangent-graph chart centred at sigma0."""
    z = np.asarray(z, dtype=float)
    dg2, s_ = chart.graph_slope(sigma0, np.asarray(y[0], dtype=float), np.asarray(y[1], dtype=float))
    k1, k2 = chart.principal_curvatures(s_)
    f1, f2 = 1.0 - k1 * z, 1.0 - k2 * z
    if np.any(f1 <= 0) or np.any(f2 <= 0):
        raise TubeError("degenerate tube: a factor (1 - kappa_i z) is not positive")
    return np.sqrt(1.0 + dg2) * f1 * f2


def fd_jacobian(chart: FermiChart, sigma0: float, z: float, y=(0.0, 0.0), h: float = 1e-4):
    """Determinant of the central-difference derivative of the tangent-graph Fermi map."""
    base = np.array([y[0], y[1], z], dtype=float)
    cols = []
    for k in range(3):
        dp = base.copy()
        dm = base.copy()
        dp[k] += h
        dm[k] -= h
        xp = chart.tangent_graph_map(sigma0, dp[0], dp[1], dp[2])
        xm = chart.tangent_graph_map(sigma0, dm[0], dm[1], dm[2])
        cols.append((xp - xm) / (2 * h))
    P0, e1, e2, N0 = chart.tangent_frame(sigma0)
    Q = np.stack([e1, e2, N0])
    M = Q @ np.stack(cols, axis=-1)
    return float(np.linalg.det(M))


def curvature_holder(chart: FermiChart, sigma0: float, radius: float, alpha: float, samples: int = 64) -> tuple[float, float]:
    """Sup of |kappa| and a local C^alpha seminorm proxy of the curvatures within ``radius`` of sigma0."""
    _, (r1, h1), _ = chart.curve(np.array([sigma0]))
    ds = radius / np.hypot(r1[0], h1[0])
    sig = sigma0 + np.linspace(-ds, ds, samples)
    sig = np.clip(sig, chart.meridian.sigma_min, chart.meridian.sigma_max)
    k1, k2 = chart.principal_curvatures(sig)
    k10, k20 = chart.principal_curvatures(np.array([sigma0]))
    dist = np.abs(sig - sigma0) * np.hypot(r1[0], h1[0])
    m = dist > 0
    semi = np.max(np.maximum(np.abs(k1 - k10)[m], np.abs(k2 - k20)[m]) / dist[m] ** alpha)
    return float(max(np.max(np.abs(k1)), np.max(np.abs(k2)))), float(semi)


def kernel_expansion_check(chart: FermiChart, sigma0: float, z0: float, z: float, y, s: float,
                           alpha: float = 0.25):
    """Exact kernel |Phi(0,z0) - Phi(y,z)|^{-3-2s} against its curvature expansion.

    Returns (exact, expanded, bound), where bound is the remainder majorant
    (|k|_alpha |y|^{2+alpha}(|z|+|z0|) + |k|_0^2 |y|^2 (|y|^2+z^2+z0^2)) / rho^2
    times rho^{-3-2s}, with rho = |(y, z0 - z)|.
    """
    y1, y2 = float(y[0]), float(y[1])
    x0 = chart.tangent_graph_map(sigma0, 0.0, 0.0, z0)
    x = chart.tangent_graph_map(sigma0, y1, y2, z)
    p = 3.0 + 2.0 * s
    exact = float(np.linalg.norm(x - x0) ** (-p))
    k1, k2 = chart.principal_curvatures(np.array([sigma0]))
    rho2 = y1 * y1 + y2 * y2 + (z0 - z) ** 2
    expanded = float(rho2 ** (-0.5 * p) * (1.0 + 0.5 * p * (z0 + z) * (k1[0] * y1 * y1 + k2[0] * y2 * y2) / rho2))
    ny = np.hypot(y1, y2)
    k0, ka = curvature_holder(chart, sigma0, max(ny, abs(z), abs(z0), 1e-12) * 2, alpha)
    bound = (ka * ny ** (2 + alpha) * (abs(z) + abs(z0)) + k0**2 * ny**2 * (ny**2 + z * z + z0 * z0)) / rho2
    return exact, expanded, float(bound * rho2 ** (-0.5 * p))


def graph_remainder(chart: FermiChart, sigma0: float, y1: float, y2: float) -> float:
    """g(y) - (k1 y1^2 + k2 y2^2)/2 in the tangent-graph chart."""
    _, _, g = chart.tangent_graph_point(sigma0, np.array([y1]), np.array([y2]))
    k1, k2 = chart.principal_curvatures(np.array([sigma0]))
    return float(g[0] - 0.5 * (k1[0] * y1 * y1 + k2[0] * y2 * y2))


####################################################################
# approximate solution


@dataclass
class ApproxSolutionSpec:
    """Data of the approximate solution built from a layer profile and a surface.

    ``F`` is the (unscaled) interface function on r >= 1 returning (F, F', F'');
    ``chart`` the rescaled two-leaf surface.
    """

    chart: FermiChart
    profile: LayerProfile
    F: Callable
    cutoffs: CutoffPair = field(default_factory=CutoffPair)
    R_bar: float = 10.0
    tau: float = 1.05
    alpha: float = 0.25

    def __post_init__(self):
        s = self.profile.s
        if not 0.0 < self.alpha < 2 * s - 1:
            raise ValueError(f"alpha must lie in (0, 2s-1) = (0, {2 * s - 1:g})")
        if not 1.0 < self.tau < 1.0 + self.alpha / (2 * s):
            raise ValueError(f"tau must lie in (1, 1+alpha/(2s)) = (1, {1 + self.alpha / (2 * s):g})")

    @property
    def eps(self) -> float:
        return self.chart.eps

    @property
    def delta_bar(self) -> float:
        return self.chart.delta_bar

    def F_eps(self, r):
        """Rescaled interface height eps^{-1} F(eps r), zero for r <= 1/eps."""
        r = np.asarray(r, dtype=float)
        er = np.maximum(self.eps * r, 1.0)
        return _radial_derivs(self.F, er)[0] / self.eps

    def R0(self, r):
        s = self.profile.s
        chi = self.cutoffs.chi(np.asarray(r) - self.R_bar / self.eps)
        return 1.0 + chi * (self.F_eps(r) ** (2 * s) - 1.0)

    def R1(self, r):
        e = self.cutoffs.eta(np.asarray(r) - 2 * self.R_bar / self.eps + 2.0)
        return e * self.delta_bar / self.eps + (1.0 - e) * self.F_eps(r) ** self.tau

    def outer(self, rho, x3):
        rho = np.asarray(rho, dtype=float)
        x3 = np.abs(np.asarray(x3, dtype=float))
        u = np.sign(x3 - self.F_eps(rho))
        u = np.where(u == 0, 1.0, u)
        return np.where(rho <= 1.0 / self.eps, 1.0, u)

    def evaluate_rz(self, rho, x3, return_parts: bool = False):
        rho = np.asarray(rho, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        shp = np.broadcast(rho, x3).shape
        rho = np.broadcast_to(rho, shp).ravel()
        x3 = np.broadcast_to(x3, shp).ravel()
        ax3 = np.abs(x3)
        # distances to the leaves; by symmetry z_- (x3) = z_+(-x3)
        _, zp = self.chart.project_planar(rho, x3, leaf="upper")
        _, zm = self.chart.project_planar(rho, -x3, leaf="upper")
        # whole-surface signed distance: the nearer leaf, taken on the side of x3
        _, z = self.chart.project_planar(rho, ax3, leaf="upper")
        w = self.profile.evaluate
        cut = self.cutoffs
        inner = w(z) + cut.chi(rho - self.R_bar / self.eps) * (w(zp) + w(zm) + 1.0 - w(z))
        eta = cut.eta(self.eps * np.abs(z) / (self.delta_bar * self.R0(rho)))
        u = eta * inner + (1.0 - eta) * self.outer(rho, x3)
        if return_parts:
            return u.reshape(shp), dict(z=z.reshape(shp), z_plus=zp.reshape(shp), z_minus=zm.reshape(shp),
                                        eta=eta.reshape(shp))
        return u.reshape(shp)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.evaluate_rz(np.hypot(x[..., 0], x[..., 1]), x[..., 2])


def approx_solution(spec: ApproxSolutionSpec, x):
    """u*(x) for points x of shape (..., 3)."""
    return spec(x)
