"""Desk-scale audits of the approximate solution u*.

Error expansion
    S(u*) = (-Delta)^s u* + u*^3 - u* is computed over all of space.  A
    smooth partition psi(|x - x0|/R) splits the integral.  Inside the
    window each leaf contributes its exact one-dimensional value, minus the
    closed-form flat exterior of weight 1 - psi, plus a curved-minus-flat
    correction in the tangent-graph chart at the foot point.  Outside, the
    axially symmetric exterior is integrated along rays in the meridian
    half-plane with the azimuthal kernel done in closed quadrature.  The
    window-only remainder (exterior replaced by its flat closed form) is
    reported too: it is the part of the error that decays like R^{-2s}.
Far decay
    |(-Delta)^s u*| at points a distance c r0^{2/(2s+1)} off the interface.
Energy
    Localized energy E_R by scrambled Sobol sampling of (point, direction)
    pairs with deterministic radial quadrature along each ray.
Stability
    Rayleigh quotients of neck-concentrated test functions, computed
    spectrally (Hankel transform in r, Fourier in h) on a grid.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import j0
from scipy.stats import qmc

from .constants_kernels import _gauss, normalization_constant, panel_rule
from .fermi_geometry import ApproxSolutionSpec, FermiChart
from .layer1d import LayerProfile, c_H
from .reduced_profile import growth_exponent

log = logging.getLogger(__name__)


####################################################################
# one-dimensional pieces


class LayerPrimitive:
    """W(t) = int_0^t w, even, continued with the algebraic tail of w."""

    def __init__(self, profile: LayerProfile):
        self.profile = profile
        self._anti = profile._spline.antiderivative()
        self.Z = profile.Z_max
        self._WZ = float(self._anti(self.Z) - self._anti(0.0))

    def __call__(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        out = np.empty_like(t)
        inside = t <= self.Z
        out[inside] = self._anti(t[inside]) - self._anti(0.0)
        x = t[~inside]
        s2 = 2 * self.profile.s
        c = self.profile.c_end
        out[~inside] = self._WZ + (x - self.Z) - c * (x ** (1 - s2) - self.Z ** (1 - s2)) / (1 - s2)
        return out


def window_weight(t):
    """Smooth partition weight: 1 for t <= 1/2, 0 for t >= 1, C-infinity in between."""
    t = np.asarray(t, dtype=float)
    x = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return 1.0 - a / (a + b)


def flat_exterior(profile: LayerProfile, z0: float, R: float, primitive: Optional[LayerPrimitive] = None,
                  order: int = 16, smooth: bool = True) -> float:
    """C_{3,s} int (1 - psi(|xi|/R)) (w(z0) - w(z0+xi_3)) |xi|^{-3-2s} dxi.

    psi is ``window_weight`` (or the indicator of the unit ball when
    ``smooth`` is False).  Reduced to 2 pi C_{3,s} int rho^{-1-2s} I(rho)
    with the spherical average I(rho) = 2 w(z0) - (W(z0+rho) - W(z0-rho))/rho;
    the part beyond R is integrated in u = (R/rho)^{2s}.
    """
    s = profile.s
    W = primitive or LayerPrimitive(profile)
    w0 = float(profile.evaluate(np.array([z0]))[0])

    def I(rho):
        return 2 * w0 - (W(z0 + rho) - W(z0 - rho)) / rho

    cuts = [1.0]
    for d in (64.0, 16.0, 4.0, 1.0, 0.0):
        for rho in (abs(z0) + d, abs(z0) - d):
            if rho > R:
                cuts.append((R / rho) ** (2 * s))
    cuts += list(np.geomspace(1e-12, 1e-1, 12))
    edges = np.unique(np.clip(np.array(cuts + [0.0]), 0.0, 1.0))
    u, wu = panel_rule(edges, order)
    rho = R * u ** (-1.0 / (2 * s))
    total = R ** (-2 * s) / (2 * s) * np.sum(wu * I(rho))
    if smooth:
        inner = [0.5 * R, R] + [e for e in (abs(z0) - 4, abs(z0), abs(z0) + 4) if 0.5 * R < e < R]
        rr, wr = panel_rule(np.unique(np.concatenate([np.linspace(0.5 * R, R, 9), inner])), order)
        total += np.sum(wr * (1.0 - window_weight(rr / R)) * rr ** (-1 - 2 * s) * I(rr))
    return float(2 * np.pi * normalization_constant(3, s) * total)


def exterior_bound(s: float, R: float, oscillation: float = 2.0) -> float:
    """Bound osc * C_{3,s} 4 pi (R/2)^{-2s} / (2s) on the part of the PV carried by 1 - psi(|xi|/R)."""
    return float(oscillation * normalization_constant(3, s) * 4 * np.pi * (0.5 * R) ** (-2 * s) / (2 * s))


####################################################################
# curved window


@dataclass
class WindowRule:
    """Quadrature parameters of the windowed curvature integral."""

    order: int = 8
    nphi: int = 16
    rho_min: float = 1e-10
    rho_taylor: float = 1e-2
    c_offsets: tuple = (0.0, 0.5, 2.0, 8.0, 32.0)

    def refined(self) -> "WindowRule":
        return WindowRule(self.order + 4, self.nphi + 8, self.rho_min, self.rho_taylor,
                          self.c_offsets + (1.0, 4.0, 16.0))


def _window_nodes(z0: float, R: float, rule: WindowRule, reach: float = 1.25):
    edges = [0.5 * R]
    while edges[-1] > rule.rho_min:
        edges.append(edges[-1] / 2)
    edges += list(np.linspace(0.5, reach, 7) * R)
    extra = [abs(z0) + d for d in (-8.0, -2.0, 0.0, 2.0, 8.0)]
    edges = np.unique(np.concatenate([edges, [e for e in extra if rule.rho_min < e < reach * R]]))
    rr, rw = panel_rule(edges, rule.order)
    xg, wg = _gauss(rule.order)
    rho_l, c_l, w_l = [], [], []
    offs = np.array(rule.c_offsets)
    for r_i, w_i in zip(rr, rw):
        cstar = -z0 / r_i
        br = np.concatenate([[-1.0, 1.0], cstar + offs / r_i, cstar - offs / r_i])
        br = np.unique(br[(br >= -1.0) & (br <= 1.0)])
        a, b = br[:-1], br[1:]
        c = (a[:, None] + (b - a)[:, None] * xg[None, :]).ravel()
        wc = ((b - a)[:, None] * wg[None, :]).ravel()
        rho_l.append(np.full(c.size, r_i))
        c_l.append(c)
        w_l.append(wc * w_i)
    return np.concatenate(rho_l), np.concatenate(c_l), np.concatenate(w_l)


def curvature_window(chart: FermiChart, profile: LayerProfile, sigma0: float, z0: float, R: float,
                     rule: Optional[WindowRule] = None) -> float:
    """Curved minus flat window integral of the layer in Fermi coordinates.

    C_{3,s} PV int (w(z0) - w(z)) [psi(|X|/R) J |X|^{-3-2s} - psi(rho/R) rho^{-3-2s}] dy dz,

    with X = Phi(y, z) - Phi(0, z0), rho = |(y, z - z0)| and psi the smooth
    window weight.  Coordinates are the tangent-graph chart at sigma0.  For
    rho below ``rule.rho_taylor`` the surface is replaced by its second-order
    model, which avoids round-off in the graph height near the singularity.
    """
    rule = rule or WindowRule()
    s = profile.s
    p = 3 + 2 * s
    reach = 1.25
    rho, c, wrc = _window_nodes(z0, R, rule, reach)
    ph = (np.arange(rule.nphi) + 0.5) * np.pi / rule.nphi
    wph = 2 * np.pi / rule.nphi
    RR = np.repeat(rho, rule.nphi)
    CC = np.repeat(c, rule.nphi)
    PP = np.tile(ph, rho.size)
    W = np.repeat(wrc, rule.nphi) * wph
    sn = np.sqrt(np.maximum(1 - CC**2, 0.0))
    y1, y2, dz = RR * sn * np.cos(PP), RR * sn * np.sin(PP), RR * CC
    z = z0 + dz
    _, e1, e2, _ = chart.tangent_frame(sigma0)
    k1, k2 = chart.principal_curvatures(np.array([sigma0]))
    k10, k20 = float(k1[0]), float(k2[0])
    g = 0.5 * (k10 * y1**2 + k20 * y2**2)
    a1, a2 = -k10 * y1, -k20 * y2
    K1, K2 = np.full_like(RR, k10), np.full_like(RR, k20)
    far = RR >= rule.rho_taylor
    if np.any(far):
        sg, th, gg = chart.tangent_graph_point(sigma0, y1[far], y2[far])
        nu = chart.normal3(sg, th)
        g[far] = gg
        a1[far], a2[far] = nu @ e1, nu @ e2
        K1[far], K2[far] = chart.principal_curvatures(sg)
    t2 = a1**2 + a2**2
    cc = np.sqrt(1 - t2)
    cm1 = -t2 / (1 + cc)
    # |X|^2 - rho^2 written without cancellation
    x1d, x2d, x3d = z * a1, z * a2, g + z * cm1
    q = (x1d * (2 * y1 + x1d) + x2d * (2 * y2 + x2d) + x3d * (2 * dz + x3d)) / RR**2
    jac = (1 - K1 * z) * (1 - K2 * z)
    if np.any(jac <= 0) or np.any(q <= -1):
        raise ValueError("window leaves the region where the Fermi map is a diffeomorphism")
    dist = RR * np.sqrt(1 + q)
    edge = RR > (reach - 1e-9) * R
    if np.any(window_weight(dist[edge] / R) > 0):
        raise ValueError("curved window does not fit inside the quadrature ball")
    logJ = -0.5 * np.log1p(-t2) + np.log(jac)
    ker = np.expm1(-0.5 * p * np.log1p(q) + logJ)
    psi_c = window_weight(dist / R)
    psi_f = window_weight(RR / R)
    dw = layer_difference(profile, z0, dz)
    integrand = dw * (psi_c * ker + (psi_c - psi_f) * 1.0)
    return float(normalization_constant(3, s) * np.sum(W * RR ** (2 - p) * integrand))


def layer_difference(profile: LayerProfile, z0: float, dz, small: float = 1e-3):
    """w(z0) - w(z0 + dz), from the local cubic of the spline when |dz| is small."""
    dz = np.asarray(dz, dtype=float)
    out = profile.evaluate(np.array([z0]))[0] - profile.evaluate(z0 + dz)
    if abs(z0) + small < profile.Z_max:
        sp = profile._spline
        x = sp.x
        i = np.clip(np.searchsorted(x, z0) - 1, 0, x.size - 2)
        lo, hi = x[i] - z0, x[i + 1] - z0
        inside = (dz >= lo) & (dz <= hi)
        d1, d2, d3 = (float(sp(z0, k)) for k in (1, 2, 3))
        # on z0's own spline piece the cubic Taylor polynomial is exact
        m = (np.abs(dz) < small) & inside
        t = dz[m]
        out[m] = -t * (d1 + t * (0.5 * d2 + t * d3 / 6.0))
        # a neighbouring piece differs by the jump of the third derivative at the knot
        other = (np.abs(dz) < small) & ~inside
        if np.any(other):
            t = dz[other]
            xb = np.where(t > 0, x[i + 1], x[i])
            d3b = sp(z0 + t, 3)
            tb = z0 + t - xb
            out[other] = -t * (d1 + t * (0.5 * d2 + t * d3 / 6.0)) - (d3b - d3) * tb**3 / 6.0
    return out


####################################################################
# exterior of the window for axially symmetric fields


@dataclass
class ExteriorRule:
    """Quadrature parameters of the exterior integral in the meridian half-plane."""

    rays: int = 384
    order: int = 8
    theta_panels: int = 14
    sample_step: float = 0.5
    sample_growth: float = 0.02
    far_factor: float = 1e4


def _azimuthal_kernel(r, h, r0, h0, R, s, rule: ExteriorRule):
    """M(r,h) = int_0^{2 pi} (1 - psi(d/R)) d^{-3-2s} dtheta, d^2 = l^2 + 4 r r0 sin^2(theta/2)."""
    l2 = (r - r0) ** 2 + (h - h0) ** 2
    L = np.maximum(np.sqrt(l2), 0.25 * R)
    a4 = 4 * r * r0
    # log-stretched theta from theta_min to pi, plus a flat first panel
    with np.errstate(divide="ignore"):
        tmin = np.where(a4 > 0, np.minimum(1e-3 * L / np.sqrt(np.maximum(a4, 1e-300)), 0.5), 0.5)
    a = np.log(np.pi / tmin)
    t, wt = panel_rule(np.linspace(0.0, 1.0, rule.theta_panels + 1), rule.order)
    th = tmin[:, None] * np.exp(a[:, None] * t[None, :])
    jac = a[:, None] * th * wt[None, :]
    t0, w0 = _gauss(rule.order)
    th0 = tmin[:, None] * t0[None, :]
    j0 = tmin[:, None] * w0[None, :]
    th = np.concatenate([th0, th], axis=1)
    wth = np.concatenate([j0, jac], axis=1)
    d2 = l2[:, None] + a4[:, None] * np.sin(0.5 * th) ** 2
    d = np.sqrt(d2)
    f = (1.0 - window_weight(d / R)) * d2 ** (-0.5 * (3 + 2 * s))
    return 2.0 * np.sum(wth * f, axis=1)


def axisymmetric_exterior(field_rz: Callable, level_rz: Optional[Callable], r0: float, h0: float, R: float,
                          s: float, rule: Optional[ExteriorRule] = None) -> float:
    """C_{3,s} int (1 - psi(|x-x0|/R)) (U(x0) - U(x)) |x-x0|^{-3-2s} dx for U = U(|x'|, x3).

    The half-plane (r, h) is swept by rays from (r0, h0); along each ray
    the interfaces (sign changes of ``level_rz``) become panel breakpoints.
    Beyond the last sample the field is taken constant along the ray.
    """
    rule = rule or ExteriorRule()
    U0 = float(np.asarray(field_rz(np.array([r0]), np.array([h0]))).ravel()[0])
    alpha = (np.arange(rule.rays) + 0.5) * 2 * np.pi / rule.rays
    ca, sa = np.cos(alpha), np.sin(alpha)
    scale = max(R, r0, abs(h0), 1.0)
    l_far = rule.far_factor * scale
    # sample positions along rays (common for all rays, then clipped at the axis)
    ls = [0.0]
    while ls[-1] < l_far:
        ls.append(ls[-1] + rule.sample_step + rule.sample_growth * ls[-1])
    ls = np.array(ls)
    lmax = np.where(ca < 0, r0 / np.maximum(-ca, 1e-300), np.inf)
    xg, wg = _gauss(rule.order)
    nodes_r, nodes_h, nodes_w, tails = [], [], [], []
    if level_rz is not None:
        Lr = np.clip(r0 + ls[None, :] * ca[:, None], 0.0, None)
        Lh = h0 + ls[None, :] * sa[:, None]
        lev = np.asarray(level_rz(Lr.ravel(), Lh.ravel())).reshape(Lr.shape)
    for j in range(rule.rays):
        lm = min(lmax[j], l_far)
        br = [0.0, lm]
        if level_rz is not None:
            valid = ls <= lm
            lv = lev[j, valid]
            lj = ls[valid]
            idx = np.nonzero(np.sign(lv[:-1]) * np.sign(lv[1:]) < 0)[0]
            for k in idx:
                # linear interpolation of the crossing is enough for a breakpoint
                x = lj[k] - lv[k] * (lj[k + 1] - lj[k]) / (lv[k + 1] - lv[k])
                br += [x + d for d in (-16.0, -4.0, -1.0, 0.0, 1.0, 4.0, 16.0)]
        geo = list(np.geomspace(max(0.05 * R, 1e-3), lm, 40)) if np.isfinite(lm) else []
        br = np.unique(np.clip(np.array(br + geo + [0.5 * R, R]), 0.0, lm))
        a, b = br[:-1], br[1:]
        ll = (a[:, None] + (b - a)[:, None] * xg[None, :]).ravel()
        wl = ((b - a)[:, None] * wg[None, :]).ravel()
        nodes_r.append(r0 + ll * ca[j])
        nodes_h.append(h0 + ll * sa[j])
        nodes_w.append(wl * ll)
        if lmax[j] > l_far:
            tails.append(j)
    r = np.maximum(np.concatenate(nodes_r), 0.0)
    h = np.concatenate(nodes_h)
    w = np.concatenate(nodes_w) * (2 * np.pi / rule.rays)
    U = np.asarray(field_rz(r, h)).ravel()
    M = np.concatenate([_azimuthal_kernel(r[i:i + 8192], h[i:i + 8192], r0, h0, R, s, rule)
                        for i in range(0, r.size, 8192)])
    total = np.sum(w * (U0 - U) * r * M)
    # beyond l_far: U frozen, r M ~ r 2 pi l^{-3-2s} I0-type; use the exact large-l form with d ~ l
    for j in tails:
        rj = r0 + l_far * ca[j]
        hj = h0 + l_far * sa[j]
        Uj = float(np.asarray(field_rz(np.array([max(rj, 0.0)]), np.array([hj]))).ravel()[0])
        # int_{l_far}^inf l * (r0 + l ca) * 2 pi l^{-3-2s} dl
        tail = 2 * np.pi * (r0 * l_far ** (-1 - 2 * s) / (1 + 2 * s) + ca[j] * l_far ** (-2 * s) / (2 * s))
        total += (U0 - Uj) * tail * (2 * np.pi / rule.rays)
    return float(normalization_constant(3, s) * total)


####################################################################
# error audit


@dataclass
class ErrorSample:
    """One audited point; ``remainder`` is S_value - predicted."""

    location: tuple
    region: str
    S_value: float
    predicted: float
    remainder: float
    predicted_order: float
    window_radius: float = float("nan")
    exterior: float = float("nan")
    exterior_bound: float = float("nan")
    window_remainder: float = float("nan")
    converged: bool = True

    def __post_init__(self):
        self.remainder = float(self.S_value - self.predicted)

    def row(self) -> dict:
        r, z = self.location
        return dict(r=r, z=z, region=self.region, S_value=self.S_value, predicted=self.predicted,
                    remainder=self.remainder, predicted_order=self.predicted_order,
                    window_radius=self.window_radius, exterior=self.exterior,
                    exterior_bound=self.exterior_bound, window_remainder=self.window_remainder,
                    converged=self.converged)


@dataclass
class LeafPiece:
    """Window data of one leaf seen from one point."""

    sigma0: float
    z0: float
    residual: float
    flat_exterior: float
    curvature: float
    mean_curvature: float
    c_H: float
    converged: bool


def leaf_piece(chart: FermiChart, profile: LayerProfile, sigma0: float, z0: float, R: float,
               rule: Optional[WindowRule] = None, check: bool = True,
               primitive: Optional[LayerPrimitive] = None) -> LeafPiece:
    rule = rule or WindowRule()
    res = float(profile.residual(np.array([z0]))[0])
    ext = flat_exterior(profile, z0, R, primitive)
    curv = curvature_window(chart, profile, sigma0, z0, R, rule)
    ok = True
    if check:
        fine = curvature_window(chart, profile, sigma0, z0, R, rule.refined())
        ok = abs(fine - curv) <= 1e-4 * abs(fine) + 1e-12
        curv = fine
    H = float(chart.mean_curvature(np.array([sigma0]))[0])
    return LeafPiece(sigma0, z0, res, ext, curv, H, float(c_H(z0, profile, strict=False)), bool(ok))


def _region(spec: ApproxSolutionSpec, rho: float, R: float) -> str:
    edge = spec.R_bar / spec.eps
    if rho + R <= edge:
        return "near"
    if rho - R >= edge + 1.0:
        return "far"
    return "transition"


def _level(spec: ApproxSolutionSpec):
    def level(r, h):
        _, parts = spec.evaluate_rz(r, np.abs(h), return_parts=True)
        return parts["z"]
    return level


def spec_laplacian(spec: ApproxSolutionSpec, rho: float, x3: float, R: float, rule: Optional[WindowRule] = None,
                   exterior_rule: Optional["ExteriorRule"] = None, check: bool = True) -> dict:
    """(-Delta)^s u*(rho, 0, x3) split as leaf windows plus the computed exterior.

    Inside the window u* must be w(z) (near) or w(z+) + w(z-) + 1 (far);
    the ball of radius R around the point is required to stay in one of
    these regions.
    """
    region = _region(spec, rho, 1.25 * R)
    if region == "transition":
        raise ValueError(f"window around rho={rho} meets the near/far transition band")
    prof = spec.profile
    W = LayerPrimitive(prof)
    if region == "near":
        sig, z0 = spec.chart.project_planar(rho, abs(x3), leaf="upper")
        pieces = [leaf_piece(spec.chart, prof, float(sig[0]), float(z0[0]), R, rule, check, W)]
    else:
        pieces = []
        for xs in (x3, -x3):
            sig, z0 = spec.chart.project_planar(rho, xs, leaf="upper")
            pieces.append(leaf_piece(spec.chart, prof, float(sig[0]), float(z0[0]), R, rule, check, W))
    outer = axisymmetric_exterior(spec.evaluate_rz, _level(spec), rho, x3, R, prof.s, exterior_rule)
    u0 = float(spec.evaluate_rz(np.array([rho]), np.array([x3]))[0])
    lap = sum(_full_1d(prof, p) + p.curvature - p.flat_exterior for p in pieces) + outer
    return dict(region=region, pieces=pieces, exterior=outer, u0=u0, laplacian=lap)


def _full_1d(profile: LayerProfile, p: LeafPiece) -> float:
    w0 = float(profile.evaluate(np.array([p.z0]))[0])
    return p.residual + w0 - w0**3


def audit_error(spec: ApproxSolutionSpec, sample_points: Sequence, window_scale: float = 1.0,
                rule: Optional[WindowRule] = None, exterior_rule: Optional["ExteriorRule"] = None,
                check: bool = True) -> list[ErrorSample]:
    """S(u*) against the regional prediction at points (rho, x3) in scaled coordinates.

    The window radius is ``window_scale`` times R1(rho).  The prediction is
    sum over leaves of [w - w^3 + c_H H + d](z_leaf) plus f(u*) - sum f(w_leaf),
    with d the one-dimensional defect of the computed profile;
    for a single leaf this is c_H H, for two leaves the extra term is the
    interaction 3(w+ + w-)(1 + w+)(1 + w-).  ``window_remainder`` is the
    remainder without the computed exterior, i.e. with the curved exterior
    replaced by the flat one.
    """
    s = spec.profile.s
    out = []
    for rho, x3 in sample_points:
        rho, x3 = float(rho), float(x3)
        R = window_scale * float(spec.R1(rho))
        lap = spec_laplacian(spec, rho, x3, R, rule, exterior_rule, check)
        pieces = lap["pieces"]
        if any(abs(p.z0) > R for p in pieces):
            raise ValueError("sample point lies outside |z| <= R1")
        u0 = lap["u0"]
        S = lap["laplacian"] + u0**3 - u0
        wl = [float(spec.profile.evaluate(np.array([p.z0]))[0]) for p in pieces]
        # the one-dimensional defect of the computed profile is carried by the prediction
        pred = sum(p.c_H * p.mean_curvature + p.residual for p in pieces) + (u0**3 - u0) + \
            sum(w - w**3 for w in wl)
        window_rem = sum(p.curvature - p.flat_exterior - p.c_H * p.mean_curvature for p in pieces)
        if lap["region"] == "near":
            order = spec.eps ** (2 * s)
        else:
            order = float(spec.F_eps(rho)) ** (-2 * s * spec.tau)
        ok = all(p.converged for p in pieces)
        if not ok:
            log.warning("window quadrature not converged at (%g, %g)", rho, x3)
        out.append(ErrorSample((rho, x3), lap["region"], float(S), float(pred), 0.0, float(order), R,
                               float(lap["exterior"]), exterior_bound(s, R), float(window_rem), bool(ok)))
    return out


def fit_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log|y| against log x and the coefficient of determination."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.abs(np.asarray(y, dtype=float)))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum((ly - fit) ** 2) / ss if ss > 0 else 1.0
    return float(coef[0]), float(r2)


####################################################################
# generic fields and off-interface decay


def _sphere_nodes(R: float, rule: WindowRule, c_hint: Optional[float]):
    edges = [0.5 * R]
    while edges[-1] > max(rule.rho_min, 1e-6):
        edges.append(edges[-1] / 2)
    edges = np.unique(np.concatenate([edges, np.linspace(0.5, 1.0, 5) * R]))
    rr, rw = panel_rule(edges, rule.order)
    xg, wg = _gauss(rule.order)
    rho_l, c_l, w_l = [], [], []
    offs = np.array(rule.c_offsets)
    for r_i, w_i in zip(rr, rw):
        br = [0.0, 1.0]
        if c_hint is not None:
            cs = abs(c_hint) / r_i
            br += list(cs + offs / r_i) + list(cs - offs / r_i)
        br = np.unique(np.clip(np.array(br), 0.0, 1.0))
        a, b = br[:-1], br[1:]
        c = (a[:, None] + (b - a)[:, None] * xg[None, :]).ravel()
        wc = ((b - a)[:, None] * wg[None, :]).ravel()
        rho_l.append(np.full(c.size, r_i))
        c_l.append(c)
        w_l.append(wc * w_i)
    return np.concatenate(rho_l), np.concatenate(c_l), np.concatenate(w_l)


def frac_laplacian_3d(field: Callable, x0, s: float, R: float, normal=(0.0, 0.0, 1.0),
                      rule: Optional[WindowRule] = None, offset: Optional[float] = None) -> float:
    """C_{3,s} PV int psi(|xi|/R) (u(x0) - u(x0+xi)) |xi|^{-3-2s} dxi for a field on R^3.

    Spherical coordinates with polar axis ``normal``; the symmetric second
    difference removes the odd part, so only the half sphere c = cos(theta)
    in [0, 1] is integrated.  ``offset`` is the distance along the normal to
    a level set of u, where the polar nodes are clustered.
    """
    rule = rule or WindowRule()
    x0 = np.asarray(x0, dtype=float)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    t1 = np.cross(n, [1.0, 0.0, 0.0] if abs(n[0]) < 0.9 else [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    rho, c, wrc = _sphere_nodes(R, rule, offset)
    nph = 2 * rule.nphi
    ph = (np.arange(nph) + 0.5) * 2 * np.pi / nph
    RR = np.repeat(rho, nph)
    CC = np.repeat(c, nph)
    PP = np.tile(ph, rho.size)
    W = np.repeat(wrc, nph) * (2 * np.pi / nph)
    sn = np.sqrt(np.maximum(1 - CC**2, 0.0))
    d = (RR * sn * np.cos(PP))[:, None] * t1 + (RR * sn * np.sin(PP))[:, None] * t2 + (RR * CC)[:, None] * n
    u0 = float(np.asarray(field(x0[None, :])).ravel()[0])
    up = np.asarray(field(x0 + d)).ravel()
    um = np.asarray(field(x0 - d)).ravel()
    # half sphere doubled, second difference halved
    second = 2 * u0 - up - um
    return float(normalization_constant(3, s) * np.sum(W * window_weight(RR / R) * RR ** (-1 - 2 * s) * second))


def field_laplacian_axisym(field_rz: Callable, level_rz: Optional[Callable], r0: float, h0: float, s: float,
                           R: float, rule: Optional[WindowRule] = None,
                           exterior_rule: Optional["ExteriorRule"] = None, offset: Optional[float] = None) -> float:
    """(-Delta)^s of an axially symmetric field: spherical window plus half-plane exterior."""
    def field(x):
        x = np.asarray(x, dtype=float)
        return field_rz(np.hypot(x[..., 0], x[..., 1]), x[..., 2])
    inner = frac_laplacian_3d(field, (r0, 0.0, h0), s, R, rule=rule, offset=offset)
    return inner + axisymmetric_exterior(field_rz, level_rz, r0, h0, R, s, exterior_rule)


@dataclass
class DecayReport:
    radii: list
    values: list
    fitted_exponent: float
    expected_exponent: float
    r_squared: float
    window_factor: float


def off_interface_points(spec: ApproxSolutionSpec, r_list, c: float):
    """Points y0 + z0 nu(y0) above the upper leaf with z0 = c r0^{2/(2s+1)}; returns (rho, x3, z0)."""
    beta = growth_exponent(spec.profile.s)
    chart = spec.chart
    pts = []
    for r0 in r_list:
        sig, _ = chart.project_planar(np.array([float(r0)]), np.array([float(spec.F_eps(r0))]), leaf="upper")
        z0 = c * r0**beta
        rr, hh = chart.phi_planar(sig, z0)
        pts.append((float(rr[0]), float(hh[0]), float(z0)))
    return pts


def audit_far_decay(spec: ApproxSolutionSpec, r_list, c: float = 1.0, window_factor: float = 0.5,
                    field_rz: Optional[Callable] = None, rule: Optional[WindowRule] = None,
                    exterior_rule: Optional["ExteriorRule"] = None, check: bool = False,
                    exact_layer: bool = True) -> DecayReport:
    """Fit the decay exponent of |(-Delta)^s u*| along off-interface points.

    r_list are scaled radii r0 of the base points on the upper leaf and
    z0 = c r0^{2/(2s+1)}; the window radius is window_factor * z0.  With
    ``field_rz`` given, that axially symmetric field replaces u*.

    With ``exact_layer`` the numerical 1D residual of each leaf is dropped:
    the true layer solves its equation exactly, while the discrete profile
    carries a ~1e-7 defect deep in its algebraic tail, comparable to the
    signal at these distances.
    """
    s = spec.profile.s
    vals, radii = [], []
    for (rho, x3, z0), r0 in zip(off_interface_points(spec, r_list, c), r_list):
        R = window_factor * z0
        if field_rz is None:
            out = spec_laplacian(spec, rho, x3, R, rule, exterior_rule, check)
            v = out["laplacian"]
            if exact_layer:
                v -= sum(p.residual for p in out["pieces"])
        else:
            v = field_laplacian_axisym(field_rz, None, rho, x3, s, R, rule, exterior_rule)
        vals.append(float(v))
        radii.append(float(r0))
    if np.all(np.asarray(vals) == 0):
        expo, r2 = float("nan"), 1.0
    else:
        expo, r2 = fit_slope(radii, vals)
        expo = -expo
    return DecayReport(radii, vals, expo, 4 * s / (2 * s + 1), r2, window_factor)


####################################################################
# localized energy


class EnergyVarianceError(RuntimeError):
    """Replicate spread of the energy estimate exceeds the tolerance."""


@dataclass
class EnergyReport:
    radii: list
    energies: list
    fitted_slope: float
    r_squared: float
    std_errors: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.energies) >= 0))


def double_well(u):
    """W(u) = ((1 - u^2)/2)^2."""
    return (0.5 * (1.0 - u * u)) ** 2


def _tail_cdf(t, a, alpha):
    t = np.asarray(t, dtype=float)
    g = 0.5 * (1.0 + np.abs(t) / a) ** (-alpha)
    return np.where(t <= 0, g, 1.0 - g)


def _tail_ppf(v, a, alpha):
    v = np.asarray(v, dtype=float)
    lo = v <= 0.5
    g = np.where(lo, v, 1.0 - v)
    t = a * ((2.0 * np.maximum(g, 1e-300)) ** (-1.0 / alpha) - 1.0)
    return np.where(lo, -t, t)


def _tail_pdf(t, a, alpha):
    return 0.5 * alpha / a * (1.0 + np.abs(t) / a) ** (-1.0 - alpha)


@dataclass
class EnergyRule:
    """Sampling and radial quadrature for the localized energy.

    ``scale`` and ``alpha`` shape the heavy-tailed height density around the
    leaves; alpha = 2s - 1 matches the |z|^{-2s} decay of the energy density.
    """

    samples: int = 2**12
    replicates: int = 4
    rho_min: float = 0.25
    ratio: float = 2.0
    order: int = 6
    tail_order: int = 10
    scale: float = 2.0
    alpha: Optional[float] = None
    max_rel_se: float = 0.05


def _ray_nodes(R: float, s: float, rule: EnergyRule):
    """Nodes and weights in rho for int_0^inf g(rho) rho^{-1-2s} d rho, weight included."""
    p = 2 * s
    # [0, rho_min]: rho = rho_min t^{1/(2-p)} absorbs the rho^{1-p} behaviour of D^2 rho^{-1-p}
    t, wt = _gauss(rule.order)
    k = 1.0 / (2.0 - p)
    r0 = rule.rho_min * t**k
    w0 = wt * rule.rho_min * k * t ** (k - 1) * r0 ** (-1 - p)
    n = max(int(np.ceil(np.log(4 * R / rule.rho_min) / np.log(rule.ratio))), 1)
    edges = rule.rho_min * rule.ratio ** np.arange(n + 1)
    r1, w1 = panel_rule(edges, rule.order)
    w1 = w1 * r1 ** (-1 - p)
    # beyond T: rho = T v^{-1/p}, int_T^inf g rho^{-1-p} = T^{-p}/p int_0^1 g dv
    T = edges[-1]
    v, wv = _gauss(rule.tail_order)
    r2 = T * v ** (-1.0 / p)
    w2 = wv * T ** (-p) / p
    return np.concatenate([r0, r1, r2]), np.concatenate([w0, w1, w2])


def localized_energy(field_rz: Callable, s: float, R: float, leaf_height: Optional[Callable] = None,
                     rule: Optional[EnergyRule] = None, seed: int = 0) -> tuple[float, float]:
    """E_R(u) = C(s) int int_{pairs meeting B_R} |u(x)-u(y)|^2 |x-y|^{-3-2s} + int_{B_R} W(u).

    C(s) = C_{3,s}/4, so that the Euler-Lagrange equation is (-Delta)^s u = u - u^3.
    The pair domain is folded onto x in B_R: pairs with y outside the ball
    are counted twice.  ``field_rz(r, h)`` is an axially symmetric field and
    ``leaf_height(r)`` the heights +-F(r) of its interface, around which the
    outer points are concentrated.  Returns (estimate, standard error) over
    independently scrambled Sobol replicates.
    """
    rule = rule or EnergyRule()
    p = 2 * s
    alpha = rule.alpha if rule.alpha is not None else p - 1.0
    a = rule.scale
    C = 0.25 * normalization_constant(3, s)
    rho_n, rho_w = _ray_nodes(R, s, rule)
    v, wv = _gauss(rule.tail_order)
    estimates = []
    for child in np.random.SeedSequence(seed).spawn(rule.replicates):
        pts = qmc.Sobol(d=4, scramble=True, seed=np.random.default_rng(child)).random(rule.samples)
        r = R * np.sqrt(pts[:, 0])
        H = np.sqrt(np.maximum(R * R - r * r, 0.0))
        c = np.zeros_like(r) if leaf_height is None else np.minimum(np.abs(leaf_height(r)), H)
        # two-component mixture around +-c, truncated to |h| <= H
        lo_p, hi_p = _tail_cdf(-H - c, a, alpha), _tail_cdf(H - c, a, alpha)
        lo_m, hi_m = _tail_cdf(-H + c, a, alpha), _tail_cdf(H + c, a, alpha)
        upper = pts[:, 1] < 0.5
        vv = np.where(upper, 2 * pts[:, 1], 2 * pts[:, 1] - 1.0)
        h = np.where(upper, c + _tail_ppf(lo_p + vv * (hi_p - lo_p), a, alpha),
                     -c + _tail_ppf(lo_m + vv * (hi_m - lo_m), a, alpha))
        h = np.clip(h, -H, H)
        q = 0.5 * (_tail_pdf(h - c, a, alpha) / (hi_p - lo_p) + _tail_pdf(h + c, a, alpha) / (hi_m - lo_m))
        weight = np.pi * R * R / q
        ct = 2 * pts[:, 2] - 1.0
        st = np.sqrt(np.maximum(1 - ct * ct, 0.0))
        ph = 2 * np.pi * pts[:, 3]
        om = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)
        x = np.stack([r, np.zeros_like(r), h], axis=1)
        u0 = np.asarray(field_rz(r, h), dtype=float)

        def D2(rho):
            y = x[:, None, :] + rho[..., None] * om[:, None, :]
            uy = np.asarray(field_rz(np.hypot(y[..., 0], y[..., 1]), y[..., 2]), dtype=float)
            return (uy - u0[:, None]) ** 2

        whole = D2(np.broadcast_to(rho_n, (r.size, rho_n.size))) @ rho_w
        # part of each ray outside the ball: rho = rho_exit v^{-1/p}
        xo = h * ct + r * om[:, 0]
        rex = -xo + np.sqrt(np.maximum(xo * xo + R * R - r * r - h * h, 0.0))
        rex = np.maximum(rex, 1e-12)
        outside = (D2(rex[:, None] * v[None, :] ** (-1.0 / p)) @ wv) * rex ** (-p) / p
        dens = C * 4 * np.pi * (whole + outside) + double_well(u0)
        estimates.append(float(np.mean(dens * weight)))
    est = np.asarray(estimates)
    se = float(est.std(ddof=1) / np.sqrt(est.size)) if est.size > 1 else float("nan")
    return float(est.mean()), se


def energy_growth(field_rz: Callable, s: float, R_list, leaf_height: Optional[Callable] = None,
                  rule: Optional[EnergyRule] = None, seed: int = 0) -> EnergyReport:
    """Localized energies over increasing radii and the log-log growth slope."""
    R_list = [float(R) for R in R_list]
    if len(R_list) < 4 or np.any(np.diff(R_list) <= 0) or R_list[-1] < 8 * R_list[0]:
        raise ValueError("need at least 4 increasing radii spanning a factor >= 8")
    rule = rule or EnergyRule()
    E, SE = [], []
    for R in R_list:
        e, se = localized_energy(field_rz, s, R, leaf_height, rule, seed)
        if e > 0 and se > rule.max_rel_se * e:
            raise EnergyVarianceError(f"relative standard error {se / e:.3g} at R={R:g}")
        E.append(e)
        SE.append(se)
    if np.all(np.asarray(E) == 0):
        slope, r2 = 0.0, 1.0
    else:
        slope, r2 = fit_slope(R_list, E)
    return EnergyReport(R_list, E, slope, r2, SE)


####################################################################
# stability probe
#
# Q(phi) = (C_{3,s}/2) int int |phi(x)-phi(y)|^2 |x-y|^{-3-2s} + int (3u^2 - 1) phi^2.
# The Gagliardo part equals (2 pi)^{-3} int |xi|^{2s} |phi^(xi)|^2; for axially
# symmetric phi the transform is a Hankel transform in r times a Fourier
# transform in h.  The two parts cancel to O(eps^2) on neck directions, so
# grid quadrature (spectrally accurate for smooth phi) is used instead of sampling.


@dataclass
class AxisymGrid:
    """Midpoint grid in r on (0, r_max) and uniform grid in h on [-h_max, h_max)."""

    r_max: float
    h_max: float
    step: float = 0.5
    k_order: int = 4
    k_refine: int = 2

    @property
    def r(self):
        return (np.arange(int(round(self.r_max / self.step))) + 0.5) * self.step

    @property
    def h(self):
        n = int(round(self.h_max / self.step))
        return np.arange(-n, n) * self.step

    def mesh(self):
        return np.meshgrid(self.r, self.h, indexing="ij")


def axisym_quadratic_form(phi: np.ndarray, potential: np.ndarray, grid: AxisymGrid, s: float):
    """(Gagliardo part, potential part, squared L2 norm) of phi sampled on ``grid``.

    The midpoint rule in r carries an endpoint error proportional to
    step^2 phi(0, h), which the |xi|^{2s} weight amplifies at high radial
    frequency; phi should be negligible on the axis (neck bumps are).
    """
    r, h, dx = grid.r, grid.h, grid.step
    peak = float(np.max(np.abs(phi)))
    if peak > 0 and float(np.max(np.abs(phi[0]))) > 1e-3 * peak:
        log.warning("test function is not small on the axis; the radial transform loses accuracy")
    wr = 2 * np.pi * r * dx * dx
    norm2 = float(np.sum(phi**2 * wr[:, None]))
    pot = float(np.sum(potential * phi**2 * wr[:, None]))
    Fh = np.fft.rfft(phi, axis=1) * dx
    kh = 2 * np.pi * np.fft.rfftfreq(h.size, dx)
    wkh = np.full(kh.size, 2.0)
    wkh[0] = 1.0
    if h.size % 2 == 0:
        wkh[-1] = 1.0
    wkh *= kh[1]
    # Gauss panels in k_r, panel width pi / (k_refine r_max)
    n_pan = int(np.ceil(grid.k_refine * grid.r_max / dx))
    kr, wk = panel_rule(np.linspace(0.0, np.pi / dx, n_pan + 1), grid.k_order)
    gag = 0.0
    for i in range(0, kr.size, 1024):
        ks = kr[i:i + 1024]
        Hm = 2 * np.pi * j0(np.outer(ks, r)) * (r * dx)
        P = np.abs(Hm @ Fh) ** 2
        sym = (ks[:, None] ** 2 + kh[None, :] ** 2) ** s
        gag += float(np.sum(P * sym * (2 * np.pi * ks * wk[i:i + 1024])[:, None] * wkh[None, :]))
    return gag / (2 * np.pi) ** 3, pot, norm2


def rayleigh_quotient(phi: np.ndarray, u: np.ndarray, grid: AxisymGrid, s: float) -> float:
    """Q(phi) / ||phi||^2 for the linearization at u; both sampled on ``grid``."""
    gag, pot, n2 = axisym_quadratic_form(phi, 3 * u**2 - 1, grid, s)
    if n2 <= 0:
        raise ValueError("test function vanishes on the grid")
    return (gag + pot) / n2


def rayleigh_quotient_1d(phi: Callable, u: Callable, s: float, half_width: float = 400.0,
                         step: float = 0.125) -> float:
    """One-dimensional analogue: ((C_{1,s}/2) [phi]^2 + int (3u^2-1) phi^2) / ||phi||^2 by FFT."""
    n = int(round(half_width / step))
    z = np.arange(-n, n) * step
    f = phi(z)
    k = 2 * np.pi * np.fft.fftfreq(z.size, step)
    gag = float(np.sum(np.abs(k) ** (2 * s) * np.abs(np.fft.fft(f)) ** 2)) * step / z.size
    pot = float(np.sum((3 * u(z) ** 2 - 1) * f**2)) * step
    return (gag + pot) / (float(np.sum(f**2)) * step)


@dataclass
class ProbeResult:
    min_quotient: float
    minimizer: dict
    quotients: list

    @property
    def unstable(self) -> bool:
        return self.min_quotient < 0


def neck_bumps(spec: ApproxSolutionSpec, grid: AxisymGrid, widths, centers=(0.0,), z_cut: float = 40.0,
               h_cut: Optional[float] = None):
    """Test functions w'(z) chi(|z|/z_cut) sech^2((h_b - c)/L) chi(|h_b|/h_cut) on the grid.

    z is the Fermi distance to the surface and h_b the height of the foot
    point; the bumps are dilations (L) and translations (c) of the layer's
    translation mode, concentrated on the neck.  Returns (u on grid, candidates).
    """
    chart = spec.chart
    h_cut = h_cut if h_cut is not None else 2.5 / spec.eps
    Rg, Hg = grid.mesh()
    u, parts = spec.evaluate_rz(Rg, Hg, return_parts=True)
    sig, _ = chart.project_planar(Rg.ravel(), Hg.ravel())
    (_, hb), _, _ = chart.curve(sig)
    hb = hb.reshape(Rg.shape)
    z = parts["z"]
    layer = spec.profile.derivative(z) * window_weight(np.abs(z) / z_cut) * window_weight(np.abs(hb) / h_cut)
    cands = []
    for L in widths:
        for c in centers:
            J = 1.0 / np.cosh((hb - c) / L) ** 2
            cands.append((dict(width=float(L), center=float(c)), layer * J))
    return u, cands


def rayleigh_probe(u: np.ndarray, s: float, candidates, grid: AxisymGrid) -> ProbeResult:
    """Minimum normalized quotient over the candidate family (a negative value certifies instability)."""
    out = []
    for params, phi in candidates:
        phi = phi(*grid.mesh()) if callable(phi) else phi
        out.append(dict(params, quotient=rayleigh_quotient(phi, u, grid, s)))
    best = min(out, key=lambda d: d["quotient"])
    return ProbeResult(best["quotient"], {k: v for k, v in best.items() if k != "quotient"}, out)


####################################################################
# output


AUDIT_COLUMNS = ("r", "z", "S_value", "predicted", "remainder", "region", "predicted_order",
                 "window_radius", "exterior", "exterior_bound", "window_remainder", "converged")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def audit_csv(samples: Sequence[ErrorSample]) -> str:
    """Audit table with a header row; the first five columns are r, z, S_value, predicted, remainder."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(AUDIT_COLUMNS)
    for smp in samples:
        row = smp.row()
        wr.writerow([_fmt(row[c]) for c in AUDIT_COLUMNS])
    return buf.getvalue()


def energy_csv(report: EnergyReport) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("R", "E_R", "std_error"))
    se = report.std_errors or [float("nan")] * len(report.radii)
    for R, E, e in zip(report.radii, report.energies, se):
        wr.writerow((_fmt(float(R)), _fmt(float(E)), _fmt(float(e))))
    return buf.getvalue()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def summary_json(summary: dict) -> str:
    """Deterministic JSON: sorted keys, non-finite numbers written as null."""
    return json.dumps(_plain(summary), sort_keys=True, indent=2, allow_nan=False) + "\n"
