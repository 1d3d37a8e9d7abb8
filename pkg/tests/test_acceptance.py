"""The thirteen acceptance criteria at their stated tolerances (full mode).

Each test prints one ``criterion N name: PASS/FAIL`` line.  Runtime limits
are checked where a criterion states one.
"""
import numpy as np
import pytest

from fraccat import suites

# (check, runtime limit in seconds or None)
CRITERIA = [
    (suites.check_gamma_identity, 1.0),
    (suites.check_kernel_reduction, 10.0),
    (suites.check_layer, 60.0 * 3),  # three orders s, 60 s each
    (suites.check_c_H, None),
    (suites.check_catenoid, None),
    (suites.check_fermi, None),
    (suites.check_emden_fowler, None),
    (suites.check_kernels, None),
    (suites.check_right_inverse, None),
    (suites.check_reduced, 300.0 * 3),  # three eps values, 5 min each
    (suites.check_error_audit, 900.0),
    (suites.check_energy, None),
    (suites.check_instability, None),
]


VERDICTS: dict = {}


@pytest.fixture(scope="module")
def ctx():
    return suites.Context(s=0.75, quick=False, seed=0)


def report(capsys, v, ok):
    with capsys.disabled():
        print(f"\ncriterion {v.criterion} {v.name}: {'PASS' if ok else 'FAIL'} "
              f"(value {v.value:.4g}; {v.threshold}; {v.seconds:.1f}s) {v.detail}")


@pytest.mark.slow
@pytest.mark.parametrize("check,limit", CRITERIA, ids=[f"criterion_{i + 1:02d}" for i in range(len(CRITERIA))])
def test_criterion(ctx, capsys, check, limit):
    v = suites._timed(lambda: check(ctx))
    VERDICTS[v.criterion] = v
    in_time = limit is None or v.seconds < limit
    report(capsys, v, v.passed and in_time)
    assert v.passed, v.detail
    assert in_time, f"{v.seconds:.1f}s exceeds {limit}s"


@pytest.mark.slow
def test_criterion_12_radii_span(ctx):
    # the energy fit must cover radii spanning at least a factor 8
    v = VERDICTS.get(12) or suites.check_energy(ctx)
    assert max(v.detail["radii"]) / min(v.detail["radii"]) >= 8
    assert np.all(np.diff(v.detail["energies"]) > 0)
