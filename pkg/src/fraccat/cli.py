"""Command-line entry point: configuration, pipelines and verification suites.

Exit codes: 0 success, 2 identity failure, 3 solver failure, 4 fixed point
did not contract, 5 verification failure, 64 usage or configuration error.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .constants_kernels import gamma_ratio_identity, normalization_constant
from .layer1d import CutoffPair, LayerSolveError, c_H, projection_constants, solve_layer
from .reduced_profile import NonContractionError, ReducedSolveError, decay_exponent, solve_reduced
from .verification import (EnergyRule, ExteriorRule, audit_csv, audit_error, energy_csv, energy_growth, fit_slope,
                           summary_json)

log = logging.getLogger("fraccat")

EXIT_IDENTITY = 2
EXIT_SOLVER = 3
EXIT_CONTRACTION = 4
EXIT_VERIFY = 5
EXIT_USAGE = 64


class ConfigError(click.UsageError):
    """A configuration value lies outside its admissible range."""


@dataclass
class RunConfig:
    s: float = 0.75
    eps: float = 1e-3
    Z_max: float = 100.0
    node_count: int = 601
    reduced_nodes: int = 3000
    delta_bar: float = 0.1
    R_bar: float = 10.0
    delta0: float = 0.1
    R_zeta: float = 20.0
    tau: Optional[float] = None
    alpha_curv: Optional[float] = None
    alpha_norm: float = 0.5
    gamma: float = 2.0
    layer_tol: float = 1e-8
    reduced_tol: float = 1e-9
    out: str = "fraccat_out"
    seed: int = 0
    quick: bool = False
    continuation: bool = False
    emit_plot_data: bool = False

    def __post_init__(self):
        # curvature exponent and tau default to the middle of their ranges
        if self.alpha_curv is None:
            self.alpha_curv = 0.5 * (2 * self.s - 1)
        if self.tau is None:
            self.tau = 1.0 + 0.25 * self.alpha_curv / self.s

    def validate(self) -> "RunConfig":
        s = self.s
        if not 0.5 < s < 1.0:
            raise ConfigError(f"s must satisfy 1/2 < s < 1, got {s}")
        if not 0.0 < self.eps <= 1e-2:
            raise ConfigError(f"eps must satisfy 0 < eps <= 1e-2, got {self.eps}")
        if not 0.0 < self.alpha_curv < 2 * s - 1:
            raise ConfigError(f"alpha_curv must lie in (0, 2s-1) = (0, {2 * s - 1:.6g}), got {self.alpha_curv}")
        hi = 1.0 + self.alpha_curv / (2 * s)
        if not 1.0 < self.tau < hi:
            raise ConfigError(f"tau must lie in (1, 1 + alpha_curv/(2s)) = (1, {hi:.6g}), got {self.tau}")
        gmax = 2.0 + decay_exponent(s)
        if self.gamma > gmax:
            raise ConfigError(f"gamma must satisfy gamma <= 2 + (2s-1)/(2s+1) = {gmax:.6g}, got {self.gamma}")
        if not 0.0 < self.alpha_norm < 1.0:
            raise ConfigError(f"alpha_norm must lie in (0, 1), got {self.alpha_norm}")
        if not 0.0 < self.delta_bar <= 1.0 or self.delta0 <= 0 or self.R_bar <= 0:
            raise ConfigError("delta_bar must lie in (0, 1]; delta0 and R_bar must be positive")
        if 2 * self.R_zeta > self.Z_max:
            raise ConfigError(f"R_zeta must satisfy 2 R_zeta <= Z_max = {self.Z_max}, got {self.R_zeta}")
        if self.Z_max < 50 or self.node_count < 400:
            raise ConfigError("Z_max must be >= 50 and node_count >= 400")
        return self


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**data).validate()


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def downsample(rows: np.ndarray, count: int = 200) -> np.ndarray:
    """Rows at (about) log-uniform positions of the first column."""
    if len(rows) <= count:
        return rows
    idx = np.unique(np.round(np.geomspace(1, len(rows), count)).astype(int) - 1)
    return rows[idx]


def _common(f):
    opts = [
        click.option("--s", "s", type=float, default=None, help="Fractional order, 1/2 < s < 1."),
        click.option("--eps", type=float, default=None, help="Scale parameter, 0 < eps <= 1e-2."),
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON file with RunConfig fields; flags override it."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--seed", type=int, default=None, help="Seed for the sampled quantities."),
        click.option("--quick", is_flag=True, default=None, help="Reduced accuracy and cheaper audits."),
        click.option("--emit-plot-data", "emit_plot_data", is_flag=True, default=None,
                     help="Also write downsampled series for plotting."),
        click.option("--continuation", is_flag=True, default=None, help="Solve the layer by continuation in s."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _config(kw) -> RunConfig:
    path = kw.pop("config_path", None)
    for flag in ("quick", "emit_plot_data", "continuation"):
        if not kw.get(flag):
            kw[flag] = None
    return load_config(path, kw)


def _layer(cfg: RunConfig):
    try:
        return solve_layer(cfg.s, Z_max=cfg.Z_max, node_count=cfg.node_count, tol=cfg.layer_tol,
                           continuation=cfg.continuation)
    except LayerSolveError as exc:
        raise SolverFailure(str(exc)) from exc


class SolverFailure(click.ClickException):
    exit_code = EXIT_SOLVER


class IdentityFailure(click.ClickException):
    exit_code = EXIT_IDENTITY


class ContractionFailure(click.ClickException):
    exit_code = EXIT_CONTRACTION


class VerifyFailure(click.ClickException):
    exit_code = EXIT_VERIFY


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Fractional Allen-Cahn catenoid-type solutions: pipelines and checks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@_common
def constants(**kw):
    """C_{n,s} table with the Gamma-ratio identity check."""
    cfg = _config(kw)
    grid = [cfg.s] if kw.get("s") is not None else [round(x, 2) for x in np.arange(0.55, 0.951, 0.05)]
    rows, bad = [], []
    for s in grid:
        c1, c3, c5 = (normalization_constant(n, s) for n in (1, 3, 5))
        lhs, rhs = gamma_ratio_identity(s)
        res = abs(lhs - rhs) / rhs
        rows.append((s, c1, c3, c5, lhs, rhs, res))
        if not res < 1e-12:
            bad.append(s)
    text = table_csv(("s", "C_1", "C_3", "C_5", "one_minus_ratio", "two_over_3_plus_2s", "residual"), rows)
    click.echo(text, nl=False)
    if kw.get("out") is not None:
        write_text(Path(cfg.out) / "constants.csv", text)
    if bad:
        raise IdentityFailure(f"identity residual >= 1e-12 at s = {bad}")


@cli.command()
@_common
def profile1d(**kw):
    """Layer profile, curvature weight and projection constants."""
    cfg = _config(kw)
    prof = _layer(cfg)
    Cb, Cpm = projection_constants(prof, CutoffPair(), cfg.R_zeta)
    out = Path(cfg.out)
    z = prof.grid
    rows = np.stack([z, prof.values, prof.derivative_values], axis=1)
    write_text(out / "profile.csv", table_csv(("z", "w", "w_prime"), rows))
    zc = np.linspace(0.0, 0.5 * prof.Z_max, 11)
    report = {"config": asdict(cfg), "profile": prof.metadata(), "c_w": prof.c_w, "tail_exponent": prof.tail_exponent,
              "C_bar": Cb, "C_bar_pm": Cpm, "C_bar_0": Cpm / Cb,
              "c_H": {"z0": zc.tolist(), "values": np.atleast_1d(c_H(zc, prof)).tolist()}}
    write_text(out / "profile.json", summary_json(report))
    click.echo(f"c_w={prof.c_w:.8g} C_bar={Cb:.8g} C_bar_pm={Cpm:.8g} -> {out}")


@cli.command()
@_common
def reduced(**kw):
    """Reduced interface equation: neck (z, G) and graph (r, F)."""
    cfg = _config(kw)
    prof = _layer(cfg)
    Cb, Cpm = projection_constants(prof, CutoffPair(), cfg.R_zeta)
    try:
        sol = solve_reduced(cfg.s, cfg.eps, {"C_bar": Cb, "C_bar_pm": Cpm}, tol=cfg.reduced_tol, R_bar=cfg.R_bar,
                            delta0=cfg.delta0, nodes=cfg.reduced_nodes, gamma=cfg.gamma,
                            alpha_norm=cfg.alpha_norm)
    except NonContractionError as exc:
        raise ContractionFailure(str(exc)) from exc
    except ReducedSolveError as exc:
        raise SolverFailure(str(exc)) from exc
    out = Path(cfg.out)
    nk = sol.neck
    write_text(out / "neck.csv", table_csv(("z", "G", "G_prime", "G_second"),
                                           np.stack([nk.z, nk.G, nk.dG, nk.d2G], axis=1)))
    rows = sol.F.to_rows()
    write_text(out / "graph.csv", table_csv(("r", "F", "F_prime", "F_second"), rows))
    if cfg.emit_plot_data:
        write_text(out / "graph_plot.csv", table_csv(("r", "F"), downsample(rows[:, :2])))
    report = dict(sol.report)
    report.pop("step_norms", None)
    report["tail_slope"] = report["tail_fit"]["slope"]
    report["config"] = asdict(cfg)
    write_text(out / "reduced.json", summary_json(report))
    click.echo(f"contraction_rate={report['contraction_rate']:.4g} tail_slope={report['tail_slope']:.6g} "
               f"(expected {report['tail_fit']['expected_slope']:.6g}) -> {out}")


@cli.command("fermi-audit")
@_common
def fermi_audit(**kw):
    """Error audit of the approximate solution at near and far points."""
    from .suites import catenoid_spec, reduced_spec

    cfg = _config(kw)
    prof = _layer(cfg)
    Cb, Cpm = projection_constants(prof, CutoffPair(), cfg.R_zeta)
    eps = cfg.eps
    # near points on the exact catenoid; the wider tube keeps the cutoff away from them
    near = catenoid_spec(prof, eps, delta_bar=max(cfg.delta_bar, 0.5))
    offsets = (0.0,) if cfg.quick else (0.0, 1.0, 3.0)
    pts = [(rp / eps, np.arccosh(rp) / eps + zs) for rp in (2.0, 4.0) for zs in offsets]
    samples = audit_error(near, pts, check=False)
    try:
        sol = solve_reduced(cfg.s, eps, {"C_bar": Cb, "C_bar_pm": Cpm}, tol=cfg.reduced_tol, R_bar=cfg.R_bar,
                            delta0=cfg.delta0, nodes=cfg.reduced_nodes)
    except NonContractionError as exc:
        raise ContractionFailure(str(exc)) from exc
    except ReducedSolveError as exc:
        raise SolverFailure(str(exc)) from exc
    far = reduced_spec(prof, sol, eps, cfg.delta_bar)
    radii = [r for r in (25.0, 50.0, 100.0, 200.0, 400.0) if r / eps < 0.5 * sol.F.r_out]
    if cfg.quick:
        radii = radii[::2]
    far_pts = [(r / eps, 0.0) for r in radii]
    far_samples = audit_error(far, far_pts, check=False, exterior_rule=ExteriorRule(rays=128 if cfg.quick else 256))
    out = Path(cfg.out)
    write_text(out / "audit.csv", audit_csv(samples + far_samples))
    Fv = [float(far.F_eps(p[0])) for p in far_pts]
    slope, r2 = fit_slope(Fv, [x.window_remainder for x in far_samples]) if len(Fv) >= 2 else (float("nan"), 0.0)
    summary = {"config": asdict(cfg), "near_max_remainder": max(abs(x.remainder) for x in samples),
               "far_window_slope": slope, "far_window_r_squared": r2, "far_expected_slope": -2 * cfg.s * cfg.tau,
               "far_pass": bool(abs(slope / (-2 * cfg.s * cfg.tau) - 1.0) <= 0.2)}
    write_text(out / "audit.json", summary_json(summary))
    click.echo(f"{len(samples) + len(far_samples)} audit rows -> {out}")


@cli.command()
@_common
@click.option("--radii", type=str, default=None,
              help="Comma-separated ball radii in scaled units [default: 5,10,20,40 times 1/eps].")
def energy(radii, **kw):
    """Localized energy growth of u* (catenoid interface) and the flat control."""
    from .suites import catenoid_spec, flat_energy

    cfg = _config(kw)
    try:
        R = [float(x) for x in radii.split(",")] if radii else [k / cfg.eps for k in (5.0, 10.0, 20.0, 40.0)]
    except ValueError as exc:
        raise ConfigError(f"--radii must be comma-separated numbers: {exc}") from exc
    prof = _layer(cfg)
    sp = catenoid_spec(prof, cfg.eps)
    rule = EnergyRule(samples=2**8 if cfg.quick else 2**10)
    try:
        rep = energy_growth(sp.evaluate_rz, cfg.s, R, leaf_height=sp.F_eps, rule=rule, seed=cfg.seed)
        flat = flat_energy(prof, R, seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg.out)
    write_text(out / "energy.csv", energy_csv(rep))
    write_text(out / "energy_flat.csv", energy_csv(flat))
    summary = {"config": asdict(cfg), "fitted_slope": rep.fitted_slope, "r_squared": rep.r_squared,
               "flat_slope": flat.fitted_slope, "monotone": rep.monotone,
               "slope_pass": bool(1.8 <= rep.fitted_slope <= 2.2),
               "flat_pass": bool(abs(flat.fitted_slope / 2.0 - 1.0) <= 0.05)}
    write_text(out / "energy.json", summary_json(summary))
    click.echo(f"slope={rep.fitted_slope:.4f} flat={flat.fitted_slope:.4f} -> {out}")


@cli.command()
@click.argument("suite", type=click.Choice(["kernels", "layer", "geometry", "reduced", "error", "energy", "all"]))
@_common
def verify(suite, **kw):
    """Run an acceptance suite and print a JSON verdict per criterion."""
    from .suites import Context, run_suite

    cfg = _config(kw)
    ctx = Context(s=cfg.s, quick=cfg.quick, seed=cfg.seed, continuation=cfg.continuation)
    try:
        verdicts = run_suite(suite, ctx)
    except NonContractionError as exc:
        raise ContractionFailure(str(exc)) from exc
    except (LayerSolveError, ReducedSolveError) as exc:
        raise SolverFailure(str(exc)) from exc
    for v in verdicts:
        log.info("criterion %d %s: %s (%.1fs)", v.criterion, v.name, "PASS" if v.passed else "FAIL", v.seconds)
    report = {"suite": suite, "quick": cfg.quick, "all_passed": all(v.passed for v in verdicts),
              "criteria": [v.as_dict() for v in verdicts]}
    text = summary_json(report)
    click.echo(text)
    if kw.get("out") is not None:
        write_text(Path(cfg.out) / f"verify_{suite}.json", text)
    failed = [v.criterion for v in verdicts if not v.passed]
    if failed:
        raise VerifyFailure(f"failing criteria: {failed}")


def main(argv=None) -> int:
    """Run the CLI and map click's usage errors onto exit code 64."""
    try:
        cli.main(args=argv, prog_name="fraccat", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
