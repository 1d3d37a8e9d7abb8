import csv
import json

import numpy as np
import pytest

from fraccat.cli import EXIT_USAGE, EXIT_VERIFY, RunConfig, main


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_constants_single_row(capsys, tmp_path):
    code, out, _ = run(capsys, "constants", "--s", "0.75", "--out", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert len(rows) == 1
    assert float(rows[0]["two_over_3_plus_2s"]) == pytest.approx(4 / 9, rel=1e-14)
    assert (tmp_path / "constants.csv").read_text() == out


def test_constants_grid(capsys):
    code, out, _ = run(capsys, "constants")
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert len(rows) == 9
    assert max(float(r["residual"]) for r in rows) < 1e-12


@pytest.mark.parametrize("args", [
    ("constants", "--s", "1.2"),
    ("constants", "--s", "0.5"),
    ("reduced", "--eps", "0.02"),
    ("verify", "nonsense"),
    ("energy", "--radii", "a,b"),
])
def test_usage_errors(capsys, args, tmp_path):
    code, _, err = run(capsys, *args, *(("--out", str(tmp_path)) if args[0] != "verify" else ()))
    assert code == EXIT_USAGE
    assert err


def test_config_file_and_validation(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"s": 0.6}))
    code, out, _ = run(capsys, "constants", "--config", str(cfg))
    assert code == 0
    cfg.write_text(json.dumps({"tau": 0.9}))
    code, _, err = run(capsys, "constants", "--config", str(cfg))
    assert code == EXIT_USAGE and "tau" in err
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "constants", "--config", str(cfg))
    assert code == EXIT_USAGE and "bogus" in err


def test_config_defaults():
    cfg = RunConfig(s=0.75)
    assert cfg.alpha_curv == pytest.approx(0.25)
    assert cfg.tau == pytest.approx(1 + 0.25 / 3)


def test_profile1d_outputs_are_deterministic(capsys, tmp_path):
    a = tmp_path / "a"
    snaps = []
    for _ in range(2):
        assert run(capsys, "profile1d", "--out", str(a))[0] == 0
        snaps.append([(a / name).read_bytes() for name in ("profile.csv", "profile.json")])
    assert snaps[0] == snaps[1]
    rep = json.loads((a / "profile.json").read_text())
    assert rep["C_bar"] == pytest.approx(3.02098, rel=1e-4)
    ch = np.array(rep["c_H"]["values"])
    assert np.all(ch > 0) and np.all(np.diff(ch) < 0)
    z, w = np.loadtxt(a / "profile.csv", delimiter=",", skiprows=1, usecols=(0, 1)).T
    assert np.all(np.diff(w) > 0) and w[0] == pytest.approx(-w[-1])


def test_reduced_with_plot_data(capsys, tmp_path):
    code, out, _ = run(capsys, "reduced", "--out", str(tmp_path), "--emit-plot-data")
    assert code == 0
    rep = json.loads((tmp_path / "reduced.json").read_text())
    assert rep["contraction_rate"] < 1
    assert rep["tail_slope"] == pytest.approx(0.8, rel=0.05)
    for name in ("neck.csv", "graph.csv", "graph_plot.csv"):
        assert (tmp_path / name).stat().st_size > 0


def test_verify_suites(capsys, tmp_path):
    for suite in ("kernels", "geometry"):
        code, out, _ = run(capsys, "verify", suite, "--out", str(tmp_path))
        assert code == 0
        rep = json.loads(out)
        assert rep["all_passed"] and rep["suite"] == suite
        assert (tmp_path / f"verify_{suite}.json").read_text().strip() == out.strip()


def test_verify_failure_exit_code(capsys, monkeypatch):
    from fraccat import suites

    def failing(ctx):
        return suites.Verdict(1, "forced", 1.0, 0.0, False, 0.0, {})

    monkeypatch.setitem(suites.CHECKS, "kernels", [failing])
    code, out, err = run(capsys, "verify", "kernels")
    assert code == EXIT_VERIFY
    assert "failing criteria: [1]" in err
