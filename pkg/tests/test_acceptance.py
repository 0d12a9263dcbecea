"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line with the measured values (run with ``pytest -v -s`` to see them live).

The heavy default-scenario Monte Carlo experiment (2000 replicates at
m = 2000) is shared by criteria 8 and 9 through a session fixture.
"""

import time

import numpy as np
import pytest

from ewtls import (
    ErrorStructure,
    ObjectiveContext,
    ProblemData,
    TrueModel,
    clt_diagnostics,
    default_scenario,
    estimate_sigma2,
    ewtls_solve,
    run_monte_carlo,
    tls_estimate,
)
from ewtls.simulation import build_true_model
from ewtls.validation import (
    gradient_suite,
    jacobian_suite,
    unbiased_suite,
)

U1 = np.array([1.0])


def _report(num: int, ok: bool, detail: str, elapsed: float,
            budget: float) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"criterion {num:2d} [{status}] {detail} "
          f"({elapsed:.1f}s, budget {budget:.0f}s)")


@pytest.fixture(scope="session")
def default_mc():
    """Default Gaussian scenario, 2000 replicates at m = 2000."""
    start = time.perf_counter()
    summary = run_monte_carlo(default_scenario(m=2000), 2000, U1, level=0.95)
    return summary, time.perf_counter() - start


def test_criterion_1_gradient_correctness():
    budget = 10.0
    start = time.perf_counter()
    report = gradient_suite(instances=50, seed=1001)
    elapsed = time.perf_counter() - start
    ok = report["passed"] and elapsed < budget
    _report(1, ok, f"gradient vs central differences: max rel err "
            f"{report['max_rel_error']:.2e} <= 1e-6", elapsed, budget)
    assert report["passed"]
    assert elapsed < budget


def test_criterion_2_homoscedastic_oracle():
    budget = 30.0
    start = time.perf_counter()
    rng = np.random.default_rng(1002)
    m, n, d, noise = 200, 3, 2, 0.05
    worst = 0.0
    for _ in range(20):
        tm = TrueModel(X0=rng.standard_normal((n, d)),
                       A0=rng.standard_normal((m, n)) * 2.0 + 1.0)
        C = tm.C0 + noise * rng.standard_normal((m, n + d))
        data = ProblemData(C=C, n=n, d=d)
        errors = ErrorStructure.common(tuple(range(n + d)), np.eye(n + d), m)
        res = ewtls_solve(ObjectiveContext(data=data, errors=errors))
        assert res.converged
        worst = max(worst, float(np.linalg.norm(res.X_hat
                                                - tls_estimate(data))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < budget
    _report(2, ok, f"identity-weight solve vs SVD TLS: max gap "
            f"{worst:.2e} <= 1e-8 over 20 instances", elapsed, budget)
    assert worst <= 1e-8
    assert elapsed < budget


def test_criterion_3_exact_recovery():
    budget = 1.0
    start = time.perf_counter()
    rng = np.random.default_rng(1003)
    tm = TrueModel(X0=np.array([[1.0], [-0.5]]),
                   A0=rng.standard_normal((100, 2)) + 1.0)
    data = ProblemData(C=tm.C0, n=2, d=1)
    errors = ErrorStructure.common((0, 1, 2), np.eye(3), 100)
    ctx = ObjectiveContext(data=data, errors=errors)
    res = ewtls_solve(ctx)
    err = float(np.linalg.norm(res.X_hat - tm.X0))
    s2 = estimate_sigma2(ctx, res.X_hat)
    elapsed = time.perf_counter() - start
    ok = err <= 1e-8 and abs(s2) <= 1e-12 and elapsed < budget
    _report(3, ok, f"zero-noise recovery: |X_hat - X0| = {err:.2e} <= 1e-8, "
            f"sigma2_hat = {s2:.2e} <= 1e-12", elapsed, budget)
    assert err <= 1e-8
    assert abs(s2) <= 1e-12
    assert elapsed < budget


def test_criterion_4_unbiased_estimating_function():
    budget = 60.0
    start = time.perf_counter()
    report = unbiased_suite(draws=100_000, seed=1004)
    elapsed = time.perf_counter() - start
    ok = report["passed"] and elapsed < budget
    _report(4, ok, f"Monte Carlo mean of s at truth: max |z| "
            f"{report['max_abs_z']:.2f} <= 4 over 1e5 draws", elapsed, budget)
    assert report["passed"]
    assert elapsed < budget


def test_criterion_5_expected_jacobian_identity():
    budget = 120.0
    start = time.perf_counter()
    report = jacobian_suite(draws=100_000, seed=1005)
    elapsed = time.perf_counter() - start
    ok = report["passed"] and elapsed < budget
    _report(5, ok, f"expected Jacobian action vs closed form: max |z| "
            f"{report['max_abs_z']:.2f} <= 4 over 1e5 draws", elapsed, budget)
    assert report["passed"]
    assert elapsed < budget


def test_criterion_6_consistency_rate():
    budget = 300.0
    start = time.perf_counter()
    medians = {}
    for m in (100, 400, 1600):
        s = run_monte_carlo(default_scenario(m=m), 200, U1, level=0.95)
        assert not s.invalid
        medians[m] = s.median_err_fro
    r1 = medians[100] / medians[400]
    r2 = medians[400] / medians[1600]
    elapsed = time.perf_counter() - start
    ok = 1.6 <= r1 <= 2.6 and 1.6 <= r2 <= 2.6 and elapsed < budget
    _report(6, ok, f"median error shrink per 4x rows: {r1:.2f}, {r2:.2f} "
            "in [1.6, 2.6]", elapsed, budget)
    assert 1.6 <= r1 <= 2.6
    assert 1.6 <= r2 <= 2.6
    assert elapsed < budget


def test_criterion_7_nuisance_consistency():
    budget = 180.0
    start = time.perf_counter()
    spec = default_scenario(m=5000)
    s = run_monte_carlo(spec, 100, U1, level=0.95)
    assert not s.invalid
    sigma2_rel = abs(s.mean_sigma2_hat - spec.sigma2) / spec.sigma2
    tm = build_true_model(spec)
    va_ref = (tm.A0.T @ tm.A0) / spec.m
    va_rel = float(np.linalg.norm(s.mean_VA_hat - va_ref)
                   / np.linalg.norm(va_ref))
    elapsed = time.perf_counter() - start
    ok = sigma2_rel <= 0.05 and va_rel <= 0.05 and elapsed < budget
    _report(7, ok, f"nuisance means at m=5000: sigma2 rel {sigma2_rel:.3%}, "
            f"V_A rel {va_rel:.3%} <= 5%", elapsed, budget)
    assert sigma2_rel <= 0.05
    assert va_rel <= 0.05
    assert elapsed < budget


def test_criterion_8_sandwich_consistency_and_coverage(default_mc):
    budget = 900.0
    summary, elapsed = default_mc
    assert not summary.invalid

    cov_rel = float(np.linalg.norm(summary.emp_cov - summary.mean_Su_hat)
                    / np.linalg.norm(summary.mean_Su_hat))
    coverage = summary.coverage
    quantile_rels = {
        q: abs(summary.stat_quantiles[q] - summary.chi2_quantiles[q])
        / summary.chi2_quantiles[q]
        for q in (0.5, 0.9, 0.95)
    }
    worst_q = max(quantile_rels.values())
    ok = (cov_rel <= 0.10 and 0.93 <= coverage <= 0.97 and worst_q <= 0.10
          and elapsed < budget)
    _report(8, ok, f"sandwich: emp cov vs mean estimate {cov_rel:.3%} <= 10%,"
            f" coverage {coverage:.3f} in [0.93, 0.97], worst quantile dev "
            f"{worst_q:.3%} <= 10%", elapsed, budget)
    assert cov_rel <= 0.10
    assert 0.93 <= coverage <= 0.97
    assert worst_q <= 0.10
    assert elapsed < budget


def test_criterion_9_nonsingular_limit_covariance(default_mc):
    summary, _ = default_mc
    start = time.perf_counter()
    lam = np.linalg.eigvalsh(summary.emp_cov)
    ratio = float(lam[0] / lam[-1])
    elapsed = time.perf_counter() - start
    ok = ratio > 0.1
    _report(9, ok, f"empirical covariance eigenvalue ratio {ratio:.3f} > 0.1",
            elapsed, 900.0)
    assert ratio > 0.1


def test_criterion_10_clt_diagnostics():
    budget = 180.0
    start = time.perf_counter()
    rep = clt_diagnostics(default_scenario(m=2000), 2000)
    z = rep.max_abs_z()
    elapsed = time.perf_counter() - start
    ok = (z["cross_cov"] <= 4.0 and z["skew"] <= 4.0 and not rep.degenerate
          and elapsed < budget)
    _report(10, ok, f"component cross-covariance max |z| "
            f"{z['cross_cov']:.2f} <= 4, skewness max |z| {z['skew']:.2f} "
            "<= 4", elapsed, budget)
    assert not rep.degenerate
    assert z["cross_cov"] <= 4.0
    assert z["skew"] <= 4.0
    assert elapsed < budget
