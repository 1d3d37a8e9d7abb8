"""Verification suites: each check returns a machine-readable verdict.

Suites group the acceptance checks by module.  In quick mode every
threshold is ten times looser and the expensive audits use fewer points,
so that the whole battery runs in a few minutes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constants_kernels import gamma_ratio_identity, kernel_reduction_closed_form, reduce_kernel_integral
from .fermi_geometry import (ApproxSolutionSpec, FermiChart, NeckGraphMeridian, catenoid_graph,
                             catenoid_meridian, curvatures, fd_jacobian, fermi_coordinates, fermi_jacobian,
                             graph_remainder, neck_mean_curvature)
from .layer1d import LayerProfile, c_H, c_H_alternative, projection_constants, solve_layer
from .reduced_profile import (EmdenFowlerState, L0_apply, continue_f_eps, emden_fowler_flow, kernel_Z1,
                              reduced_context, rescaled_g, right_inverse_T, self_similar_profile, solve_reduced,
                              weighted_norms)
from .verification import (AxisymGrid, EnergyRule, ExteriorRule, audit_error, audit_far_decay, energy_growth,
                           fit_slope, neck_bumps, rayleigh_probe)

SUITES = ("kernels", "layer", "geometry", "reduced", "error", "energy")


@dataclass
class Verdict:
    criterion: int
    name: str
    value: float
    threshold: str
    passed: bool
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"criterion": self.criterion, "name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": bool(self.passed), "detail": self.detail}


class Context:
    """Caches the layer profile, projection constants and reduced solutions across checks."""

    def __init__(self, s: float = 0.75, quick: bool = False, seed: int = 0, continuation: bool = False):
        self.s = s
        self.quick = quick
        self.seed = seed
        self.continuation = continuation
        self._profiles: dict = {}
        self._reduced: dict = {}
        self._constants: dict = {}

    @property
    def loosen(self) -> float:
        return 10.0 if self.quick else 1.0

    def profile(self, s: Optional[float] = None) -> LayerProfile:
        s = self.s if s is None else s
        if s not in self._profiles:
            self._profiles[s] = solve_layer(s, continuation=self.continuation)
        return self._profiles[s]

    def constants(self, s: Optional[float] = None) -> dict:
        s = self.s if s is None else s
        if s not in self._constants:
            Cb, Cpm = projection_constants(self.profile(s))
            self._constants[s] = {"C_bar": Cb, "C_bar_pm": Cpm}
        return self._constants[s]

    def reduced(self, eps: float, s: Optional[float] = None):
        s = self.s if s is None else s
        key = (s, eps)
        if key not in self._reduced:
            self._reduced[key] = solve_reduced(s, eps, self.constants(s))
        return self._reduced[key]


def catenoid_spec(profile: LayerProfile, eps: float, delta_bar: float = 0.5) -> ApproxSolutionSpec:
    """u* built on the exact catenoid, scaled by 1/eps."""
    chart = FermiChart(catenoid_meridian(), eps=eps, delta_bar=delta_bar)
    return ApproxSolutionSpec(chart, profile, catenoid_graph)


def reduced_spec(profile: LayerProfile, solution, eps: float, delta_bar: float = 0.1) -> ApproxSolutionSpec:
    """u* built on the interface given by a reduced solution (neck plus graph)."""
    F, nk = solution.F, solution.neck

    def Fd(r):
        return F.derivatives(np.maximum(np.asarray(r, dtype=float), nk.r1))

    mer = NeckGraphMeridian(nk.derivatives, nk.z1, Fd, nk.r1, r_max=F.r_out)
    return ApproxSolutionSpec(FermiChart(mer, eps=eps, delta_bar=delta_bar), profile, Fd)


def _timed(fn: Callable[[], Verdict]) -> Verdict:
    t = time.perf_counter()
    v = fn()
    v.seconds = time.perf_counter() - t
    return v


####################################################################
# kernels


def check_gamma_identity(ctx: Context) -> Verdict:
    tol = 1e-12 * ctx.loosen
    errs = []
    for s in np.arange(0.55, 0.951, 0.05):
        lhs, rhs = gamma_ratio_identity(float(s))
        errs.append(abs(lhs / rhs - 1.0))
    worst = float(max(errs))
    return Verdict(1, "gamma_identity", worst, f"<= {tol:g} relative", worst <= tol)


def check_kernel_reduction(ctx: Context) -> Verdict:
    tol = 1e-6 * ctx.loosen
    worst = 0.0
    for s in (0.6, 0.75, 0.9):
        for zeta in (0.5, 1.0, 2.0, 4.0):
            for kind in ("plain", "quadratic_moment"):
                num = reduce_kernel_integral(kind, zeta, s)
                ref = kernel_reduction_closed_form(kind, zeta, s)
                worst = max(worst, abs(num / ref - 1.0))
    return Verdict(2, "kernel_reduction", worst, f"<= {tol:g} relative", worst <= tol)


####################################################################
# layer


def check_layer(ctx: Context) -> Verdict:
    orders = (ctx.s,) if ctx.quick else (0.6, 0.75, 0.9)
    res, tail, ok = [], [], True
    for s in orders:
        p = ctx.profile(s)
        res.append(p.residual_sup)
        tail.append(abs(p.tail_exponent / (2 * s) - 1.0))
        v = p.values
        ok &= bool(np.all(np.diff(v) > 0) and np.all(np.abs(v) < 1) and np.allclose(v, -v[::-1], atol=1e-12))
    tol_r, tol_t = 1e-4 * ctx.loosen, 0.05 * ctx.loosen
    passed = max(res) <= tol_r and max(tail) <= tol_t and ok
    return Verdict(3, "layer_profile", float(max(res)), f"residual <= {tol_r:g}, tail exponent 2s +- {tol_t:g}",
                   passed, detail={"orders": list(orders), "residual": res, "tail_error": tail, "invariants": ok})


def check_c_H(ctx: Context) -> Verdict:
    p = ctx.profile()
    s = p.s
    z = np.array([0.0, 0.5, 1.0, 3.0, 10.0])
    even = float(np.max(np.abs(c_H(z, p) - c_H(-z, p))))
    forms = float(np.max(np.abs(c_H(z, p) / c_H_alternative(z, p) - 1.0)))
    zz = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
    slope, _ = fit_slope(zz, c_H(zz, p))
    target = -(2 * s - 1)
    rel = abs(slope / target - 1.0)
    L = ctx.loosen
    passed = even <= 1e-10 * L and forms <= 1e-5 * L and rel <= 0.1 * L
    return Verdict(4, "curvature_weight", rel, "even 1e-10, forms 1e-5, decay -(2s-1) +- 10%", passed,
                   detail={"evenness": even, "forms": forms, "decay_slope": slope, "expected": target})


####################################################################
# geometry


def check_catenoid(ctx: Context) -> Verdict:
    H = [float(abs(curvatures(catenoid_graph, r).H)) for r in (1.1, 2.0, 10.0, 100.0)]
    G = lambda z: (np.cosh(z), np.sinh(z), np.cosh(z))  # noqa: E731
    neck = [float(abs(neck_mean_curvature(G, z))) for z in (0.0, 0.5, 1.0, 2.0)]
    worst = float(max(H + neck))
    tol = 1e-10 * ctx.loosen
    return Verdict(5, "catenoid_minimal", worst, f"<= {tol:g}", worst <= tol, detail={"graph": H, "neck": neck})


def check_fermi(ctx: Context) -> Verdict:
    rng = np.random.default_rng(ctx.seed)
    eps = 0.02
    chart = FermiChart(catenoid_meridian(), eps=eps, delta_bar=0.1)
    n = 20 if ctx.quick else 100
    sig = rng.uniform(-3.0, 3.0, n)
    th = rng.uniform(0.0, 2 * np.pi, n)
    z = rng.uniform(-0.5, 0.5, n) * chart.delta_bar / eps
    _, zz, ss = fermi_coordinates(chart, chart.phi(sig, th, z))
    trip = float(max(np.max(np.abs(zz - z)), np.max(np.abs(ss - sig))))
    jac = max(abs(fermi_jacobian(chart, a, b) - fd_jacobian(chart, a, b, h=1e-3)) for a, b in zip(sig, z))
    ys = np.array([1.0, 0.5, 0.25, 0.125])
    gr = [abs(graph_remainder(chart, 0.7, y, 0.5 * y)) for y in ys]
    order, _ = fit_slope(ys, gr)
    tol = 1e-6 * ctx.loosen
    alpha = 0.25
    passed = trip <= tol and jac <= tol and order >= 2 + alpha
    return Verdict(6, "fermi_consistency", float(max(trip, jac)), f"<= {tol:g}; remainder order >= {2 + alpha}",
                   passed, detail={"round_trip": trip, "jacobian": float(jac), "remainder_order": order})


####################################################################
# reduced


def check_emden_fowler(ctx: Context) -> Verdict:
    s = ctx.s
    L = ctx.loosen
    rising, rates, spacing = [], [], []
    for h0, hp0 in ((1.05, 0.0), (0.95, 0.02), (1.5, 0.0)):
        tr = emden_fowler_flow(s, EmdenFowlerState(0.0, h0, hp0, s), 40.0)
        rising.append(float(np.max(np.diff(tr.hamiltonian))))
        rates.append(tr.envelope_rate(5.0))
        if abs(h0 - 1.0) < 0.1:
            spacing.append(tr.crossing_spacing())
    target = np.pi / np.sqrt(2 * s)
    e_rate = max(abs(r - 1.0) for r in rates)
    e_sp = max(abs(x / target - 1.0) for x in spacing)
    passed = max(rising) <= 1e-12 and e_rate <= 0.1 * L and e_sp <= 0.05 * L
    return Verdict(7, "emden_fowler", float(max(e_rate, e_sp)), "H non-increasing; rate 1 +- 10%; spacing +- 5%",
                   passed, detail={"max_increase": max(rising), "rates": rates, "spacings": spacing,
                                   "expected_spacing": target})


def check_kernels(ctx: Context) -> Verdict:
    s, eps = ctx.s, 1e-3
    k = ctx.constants()["C_bar_pm"] / ctx.constants()["C_bar"]
    rc = reduced_context(s, eps, k)
    rw = float(np.max(np.abs(rc.Z2_profile.info["rW"] - 1.0)))
    g = rescaled_g(continue_f_eps(s, eps, 1e6, coefficient=k), eps)
    rr = np.geomspace(0.2, 50.0, 200)
    hstep = 1e-4 * rr

    def z1(x):
        return kernel_Z1(g, x)

    d2 = (z1(rr + hstep) - 2 * z1(rr) + z1(rr - hstep)) / hstep**2
    d1 = (z1(rr + hstep) - z1(rr - hstep)) / (2 * hstep)
    res = float(np.max(np.abs(d2 + d1 / rr + 2 * s * k * g(rr) ** (-2 * s - 1) * z1(rr))))
    exact = float(np.max(np.abs(kernel_Z1(self_similar_profile(s, rr, k), rr))))
    L = ctx.loosen
    passed = rw <= 1e-6 * L and res <= 1e-4 * L and exact <= 1e-10 * L
    return Verdict(8, "kernels_wronskian", rw, "rW 1 +- 1e-6; Z1 residual 1e-4; Z1 on power solution 1e-10", passed,
                   detail={"rW": rw, "Z1_residual": res, "Z1_self_similar": exact})


def manufactured_recovery(rc) -> tuple[float, float]:
    """Recovery error of T on psi = x^2 exp(-x/3), x = log(r/r1), and the bound constant on a smooth h."""
    s, eps, k = rc.s, rc.eps, rc.coefficient
    r = rc.grid
    x = np.log(r / r[0])
    e = np.exp(-x / 3)
    v = x * x * e
    f = (2 * x - x * x / 3) * e
    d1 = f / r
    d2 = ((2 - 2 * x / 3) * e - f / 3 - f) / r**2
    h = L0_apply((v, d1, d2), rc.F0, rc.chi, s, eps, k)
    out = right_inverse_T(h, None, rc)
    err = weighted_norms((r, out.values - v, out.d1 - d1, out.d2 - d2), rc.norms, "*")
    bound = right_inverse_T(np.exp(-r / 50) * r**-2.5, None, rc).info["bound_constant"]
    return float(err), float(bound)


def check_right_inverse(ctx: Context) -> Verdict:
    s, eps = ctx.s, 1e-3
    k = ctx.constants()["C_bar_pm"] / ctx.constants()["C_bar"]
    errs, bounds = [], []
    for nodes in (1500, 3000, 6000):
        e, b = manufactured_recovery(reduced_context(s, eps, k, nodes=nodes))
        errs.append(e)
        bounds.append(b)
    spread = float(max(bounds) / min(bounds) - 1.0)
    L = ctx.loosen
    passed = max(errs) <= 1e-4 * L and spread <= 0.1 * L
    return Verdict(9, "right_inverse", float(max(errs)), "recovery 1e-4 in the * norm; bound stable +- 10%", passed,
                   detail={"recovery": errs, "bound_constants": bounds})


def check_reduced(ctx: Context) -> Verdict:
    s = ctx.s
    L = ctx.loosen
    sol = ctx.reduced(1e-3)
    rep = sol.report
    a, b = ctx.reduced(1e-2).report, ctx.reduced(5e-3).report
    mid = float(np.log(a["residual_norms"]["mid_curvature_sup"] / b["residual_norms"]["mid_curvature_sup"]) / np.log(2))
    target = 2 * s - 1
    e_mid = abs(mid / target - 1.0)
    e_tail = rep["tail_fit"]["relative_error"]
    passed = (rep["contraction_rate"] < 0.5 and e_tail <= 0.05 * L and rep["inner_envelope_ok"]
              and e_mid <= 0.15 * L)
    return Verdict(10, "reduced_solve", e_tail, "rate < 1/2; tail slope +- 5%; inner envelope; mid scaling +- 15%",
                   passed, detail={"contraction_rate": rep["contraction_rate"], "tail_slope": rep["tail_fit"]["slope"],
                                   "inner_envelope_ok": rep["inner_envelope_ok"], "mid_scaling": mid})


####################################################################
# error audit


def near_audit(profile: LayerProfile, eps_list=(0.02, 0.01, 0.005), radii=(2.0, 4.0), offsets=(0.0, 1.0, 3.0)):
    """Max |remainder| over points near each catenoid leaf, per eps."""
    worst = []
    for eps in eps_list:
        sp = catenoid_spec(profile, eps)
        pts = [(rp / eps, np.arccosh(rp) / eps + zs) for rp in radii for zs in offsets]
        worst.append(max(abs(x.remainder) for x in audit_error(sp, pts, check=False)))
    return fit_slope(eps_list, worst)[0], worst


def far_audit(spec: ApproxSolutionSpec, radii, exterior_rule: Optional[ExteriorRule] = None):
    """Slope of the window remainder against F_eps at midplane points; returns (slope, F, values)."""
    eps = spec.eps
    pts = [(r / eps, 0.0) for r in radii]
    samples = audit_error(spec, pts, check=False, exterior_rule=exterior_rule)
    Fv = [float(spec.F_eps(p[0])) for p in pts]
    vals = [x.window_remainder for x in samples]
    return fit_slope(Fv, vals)[0], Fv, vals


def check_error_audit(ctx: Context, tau: float = 1.05) -> Verdict:
    s = ctx.s
    L = ctx.loosen
    prof = ctx.profile()
    if ctx.quick:
        near, nvals = near_audit(prof, radii=(2.0,), offsets=(0.0,))
    else:
        near, nvals = near_audit(prof)
    e_near = abs(near / (2 * s) - 1.0)
    sol = ctx.reduced(1e-3)
    sp = reduced_spec(prof, sol, 1e-3)
    rule = ExteriorRule(rays=128 if ctx.quick else 256)
    radii = (25.0, 100.0, 400.0) if ctx.quick else (25.0, 50.0, 100.0, 200.0, 400.0)
    far, Fv, fvals = far_audit(sp, radii, rule)
    e_far = abs(-far / (2 * s * tau) - 1.0)
    r_list = (4e4, 1.6e5) if ctx.quick else (4e4, 8e4, 1.6e5, 3.2e5)
    dec = audit_far_decay(sp, r_list, c=1.0, exterior_rule=rule)
    e_dec = abs(dec.fitted_exponent / dec.expected_exponent - 1.0)
    passed = e_near <= 0.15 * L and e_far <= 0.2 * L and e_dec <= 0.15 * L
    return Verdict(11, "error_audit", float(max(e_near, e_far, e_dec)),
                   "near eps^{2s} +- 15%; far F^{-2s tau} +- 20%; decay 4s/(2s+1) +- 15%", passed,
                   detail={"near_slope": near, "near_values": nvals, "far_slope": far, "far_expected": -2 * s * tau,
                           "decay_exponent": dec.fitted_exponent, "decay_expected": dec.expected_exponent})


####################################################################
# energy and stability


def flat_energy(profile: LayerProfile, radii, rule: Optional[EnergyRule] = None, seed: int = 0):
    """Energy growth of the flat layer u = w(x3), the control case."""
    return energy_growth(lambda r, h: profile.evaluate(h), profile.s, radii, rule=rule, seed=seed)


def check_energy(ctx: Context) -> Verdict:
    prof = ctx.profile()
    L = ctx.loosen
    flat = flat_energy(prof, [250.0, 500.0, 1000.0, 2000.0], seed=ctx.seed)
    sp = catenoid_spec(prof, 0.02)
    rule = EnergyRule(samples=2**8 if ctx.quick else 2**10)
    rep = energy_growth(sp.evaluate_rz, prof.s, [250.0, 500.0, 1000.0, 2000.0], leaf_height=sp.F_eps, rule=rule,
                        seed=ctx.seed)
    lo, hi = 2.0 - 0.2 * L, 2.0 + 0.2 * L
    passed = lo <= rep.fitted_slope <= hi and abs(flat.fitted_slope / 2.0 - 1.0) <= 0.05 * L
    return Verdict(12, "energy_growth", rep.fitted_slope, "slope in [1.8, 2.2]; flat control 2 +- 5%", passed,
                   detail={"flat_slope": flat.fitted_slope, "energies": rep.energies, "radii": rep.radii,
                           "std_errors": rep.std_errors})


def check_instability(ctx: Context) -> Verdict:
    prof = ctx.profile()
    sp = catenoid_spec(prof, 0.02)
    grid = AxisymGrid(300.0 if ctx.quick else 400.0, 256.0, 0.5)
    widths = (100.0,) if ctx.quick else (50.0, 100.0, 150.0)
    u, cands = neck_bumps(sp, grid, widths)
    res = rayleigh_probe(u, prof.s, cands, grid)
    return Verdict(13, "instability_probe", res.min_quotient, "< 0 (soft)", res.unstable,
                   detail={"minimizer": res.minimizer})


CHECKS = {
    "kernels": (check_gamma_identity, check_kernel_reduction),
    "layer": (check_layer, check_c_H),
    "geometry": (check_catenoid, check_fermi),
    "reduced": (check_emden_fowler, check_kernels, check_right_inverse, check_reduced),
    "error": (check_error_audit,),
    "energy": (check_energy, check_instability),
}


def run_suite(name: str, ctx: Context) -> list[Verdict]:
    names = SUITES if name == "all" else (name,)
    out = []
    for n in names:
        if n not in CHECKS:
            raise ValueError(f"unknown suite {n!r}; expected one of {SUITES + ('all',)}")
        out.extend(_timed(lambda f=f: f(ctx)) for f in CHECKS[n])
    return out
