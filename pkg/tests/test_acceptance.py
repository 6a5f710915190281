"""One test per acceptance criterion; each prints a PASS/FAIL line."""
from fractions import Fraction

from magkit import checks
from magkit.branching import default_exponents


def _run(acceptance, number, fn, **kw):
    try:
        result = fn(**kw)
    except Exception as exc:  # recorded as a failure, then re-raised
        acceptance[number] = f"FAIL {fn.__name__}: raised {type(exc).__name__}: {exc}"
        print(acceptance[number])
        raise
    acceptance[number] = result.line()
    print(f"criterion {number}: {result.line()}")
    return result


def test_criterion_01_force_identity(acceptance):
    res = _run(acceptance, 1, checks.check_force_identity, n=100, tol=1e-4)
    assert res.passed and res.measured <= 1e-4


def test_criterion_02_a_star_exactness(acceptance):
    res = _run(acceptance, 2, checks.check_a_star_exactness, n=100, tol=1e-12)
    assert res.detail["pair_worst"] <= 1e-12
    assert res.detail["triple_error"] <= 1e-12
    assert res.passed


def test_criterion_03_gap_and_force_bounds(acceptance):
    res = _run(acceptance, 3, checks.check_gap_bounds, n=1000)
    assert res.measured == 0
    assert res.passed


def test_criterion_04_small_epsilon_limits(acceptance):
    res = _run(acceptance, 4, checks.check_small_eps_limits, tol_velocity=1e-6, tol_action=1e-3)
    errs = res.detail["velocity_errors"]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-6
    assert res.detail["gap_c"] >= 1.0
    assert res.detail["action_gaps"][-1] <= 1e-3
    assert res.passed


def test_criterion_05_velocity_jacobian(acceptance):
    res = _run(acceptance, 5, checks.check_jacobian, n=100, tol=1e-5)
    assert res.passed and res.measured <= 1e-5


def test_criterion_06_time_change(acceptance):
    res = _run(acceptance, 6, checks.check_time_change, n=20, tol=1e-6)
    assert res.passed and res.measured <= 1e-6


def test_criterion_07_branching(acceptance):
    res = _run(acceptance, 7, checks.check_branching, N=1000, slope_sizes=(200, 400, 800, 1600))
    assert res.detail["bound_ok"] and res.detail["mass_ok"] and res.detail["counts_ok"]
    assert res.measured < 0
    assert res.passed


def test_criterion_08_exponents(acceptance):
    res = _run(acceptance, 8, checks.check_exponents, dims=range(1, 7))
    for d in range(1, 7):
        a, b, c = default_exponents(d)
        assert all(isinstance(v, Fraction) for v in (a, b, c))
        assert 1 - a + b - c < 0 and 1 - 2 * a + b + c * d < 0
    assert res.passed


def test_criterion_09_entropic(acceptance):
    res = _run(acceptance, 9, checks.check_entropic)
    assert res.detail["fisher_rel_error"] <= 1e-5
    assert res.detail["decomposition_order"] >= 1.8
    assert res.detail["potential_order"] >= 1.8
    assert res.detail["rate_self"] <= 1e-10
    assert res.detail["rate_drift_rel_error"] <= 1e-4
    assert res.passed


def test_criterion_10_min_norm_geometry(acceptance):
    res = _run(acceptance, 10, checks.check_min_norm_geometry, n_ties=100, tol_qp=1e-8, tol_hull=1e-10)
    assert res.detail["qp_worst"] <= 1e-8
    assert res.detail["hull_worst"] <= 1e-10
    assert res.passed


def test_criterion_11_shock_dissipation(acceptance):
    res = _run(acceptance, 11, checks.check_shock_dissipation, tol=1e-8)
    assert res.detail["events"] >= 1
    assert res.measured <= 1e-8
    assert res.detail["dist_jump"] <= 1.01 * res.detail["step_displacement_bound"]
    assert res.passed


def test_criterion_12_determinism(acceptance):
    res = _run(acceptance, 12, checks.check_determinism)
    assert res.detail["mismatches"] == []
    assert res.passed

