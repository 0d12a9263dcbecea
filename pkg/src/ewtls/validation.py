"""Self-contained validation suites behind ``ewtls validate``.

Each suite returns a report dict with measured values and a ``passed`` flag:

* ``gradient``  - analytic gradient vs central finite differences;
* ``oracle``    - identity-weight solve vs the SVD-based TLS solution, plus
  exact recovery on noise-free data;
* ``unbiased``  - Monte Carlo mean of the estimating function at the truth;
* ``jacobian``  - Monte Carlo finite-difference derivative of the estimating
  function vs its closed-form expectation at the truth.

``quick=True`` caps the Monte Carlo suites at 1e4 draws and doubles the
statistical tolerances.
"""

import numpy as np

from ewtls import _kernels
from ewtls.model import ErrorStructure, ProblemData, TrueModel, make_Z
from ewtls.objective import ObjectiveContext, Q_value, objective_with_gradient
from ewtls.solver import SolverOptions, ewtls_solve, tls_estimate

__all__ = [
    "SUITE_NAMES",
    "make_random_instance",
    "gradient_suite",
    "oracle_suite",
    "unbiased_suite",
    "jacobian_suite",
    "run_suites",
]

SUITE_NAMES = ("gradient", "oracle", "unbiased", "jacobian")

FD_STEP = 1e-6  # central differences, per-entry step FD_STEP * (1 + |x|)


def make_random_instance(rng: np.random.Generator, m: int, n: int, d: int,
                         shared: bool | None = None,
                         full_J: bool = False) -> tuple[ObjectiveContext, np.ndarray]:
    """Random well-conditioned problem instance plus a random test point."""
    p = n + d
    if full_J:
        J = tuple(range(p))
    else:
        k = int(rng.integers(d, p + 1))
        J = tuple(sorted(rng.choice(p, size=k, replace=False).tolist()))
    k = len(J)
    if shared is None:
        shared = bool(rng.integers(0, 2))
    W = rng.standard_normal((k, k))
    base = W @ W.T + (0.5 + k) * np.eye(k)
    if shared:
        errors = ErrorStructure.common(J, base, m)
    else:
        scales = 1.0 + rng.uniform(0.0, 1.0, size=m)
        errors = ErrorStructure.per_row(J, scales[:, None, None] * base)
    C = rng.standard_normal((m, p))
    data = ProblemData(C=C, n=n, d=d)
    X = rng.standard_normal((n, d))
    return ObjectiveContext(data=data, errors=errors), X


def fd_gradient(ctx: ObjectiveContext, X: np.ndarray,
                step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of Q, step scaled per entry by 1 + |x|."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            h = step * (1.0 + abs(X[i, j]))
            Xp = X.copy()
            Xm = X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            out[i, j] = (Q_value(ctx, Xp) - Q_value(ctx, Xm)) / (2.0 * h)
    return out


def gradient_suite(instances: int = 50, seed: int = 101,
                   quick: bool = False) -> dict:
    """Analytic vs finite-difference gradient on random small instances."""
    if quick:
        instances = min(instances, 15)
    tol = 1e-6 * (2.0 if quick else 1.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        m = int(rng.integers(5, 51))
        ctx, X = make_random_instance(rng, m, n, d)
        _, grad = objective_with_gradient(ctx, X)
        ref = fd_gradient(ctx, X)
        denom = max(np.linalg.norm(ref), np.linalg.norm(grad), 1e-12)
        worst = max(worst, float(np.linalg.norm(grad - ref)) / denom)
    return {
        "suite": "gradient",
        "instances": instances,
        "max_rel_error": worst,
        "tolerance": tol,
        "passed": bool(worst <= tol),
    }


def oracle_suite(instances: int = 10, seed: int = 202,
                 quick: bool = False) -> dict:
    """Identity-weight solve against the SVD TLS oracle + exact recovery."""
    if quick:
        instances = min(instances, 4)
    tol = 1e-8
    rng = np.random.default_rng(seed)
    m, n, d, noise = 200, 3, 2, 0.05
    worst = 0.0
    for _ in range(instances):
        A0 = rng.standard_normal((m, n)) * 2.0 + 1.0
        X0 = rng.standard_normal((n, d))
        tm = TrueModel(X0=X0, A0=A0)
        C = tm.C0 + noise * rng.standard_normal((m, n + d))
        data = ProblemData(C=C, n=n, d=d)
        errors = ErrorStructure.common(tuple(range(n + d)), np.eye(n + d), m)
        ctx = ObjectiveContext(data=data, errors=errors)
        res = ewtls_solve(ctx, SolverOptions())
        ref = tls_estimate(data)
        gap = float(np.linalg.norm(res.X_hat - ref)) if res.converged else np.inf
        worst = max(worst, gap)

    # exact recovery on noise-free data
    A0 = rng.standard_normal((50, 2)) + 1.0
    X0 = np.array([[1.0], [-0.5]])
    tm = TrueModel(X0=X0, A0=A0)
    data = ProblemData(C=tm.C0, n=2, d=1)
    errors = ErrorStructure.common((0, 1, 2), np.eye(3), 50)
    res0 = ewtls_solve(ObjectiveContext(data=data, errors=errors))
    recovery = float(np.linalg.norm(res0.X_hat - X0))
    return {
        "suite": "oracle",
        "instances": instances,
        "max_tls_gap_fro": worst,
        "zero_noise_error_fro": recovery,
        "tolerance": tol,
        "passed": bool(worst <= tol and recovery <= tol),
    }


def _error_setup(rng: np.random.Generator):
    """Fixed single-row configuration shared by the Monte Carlo suites."""
    n, d = 2, 1
    p = n + d
    a0 = np.array([1.0, 2.0])
    X0 = np.array([[0.8], [-0.4]])
    c0 = np.concatenate([a0, X0.T @ a0])
    W = rng.standard_normal((p, p))
    sigma = W @ W.T + p * np.eye(p)
    sigma2 = 0.04
    L = np.linalg.cholesky(sigma2 * sigma)
    return n, d, a0, X0, c0, sigma, L


def _batched_s(C: np.ndarray, X: np.ndarray, sigma: np.ndarray,
               n: int) -> np.ndarray:
    """s terms for a stack of rows sharing one full-J weight matrix."""
    d = X.shape[1]
    Z = np.vstack([X, -np.eye(d)])
    J = np.arange(n + d, dtype=np.intp)
    _, ra, _, y = _kernels.row_terms(
        np.ascontiguousarray(C), Z, J, sigma, True, n
    )
    return ra[:, :, None] * y[:, None, :]


def unbiased_suite(draws: int = 100_000, seed: int = 303,
                   quick: bool = False) -> dict:
    """Monte Carlo mean of s at the truth is statistically zero per entry."""
    if quick:
        draws = min(draws, 10_000)
    z_limit = 4.0 * (2.0 if quick else 1.0)
    rng = np.random.default_rng(seed)
    n, d, _, X0, c0, sigma, L = _error_setup(rng)
    noise = rng.standard_normal((draws, n + d)) @ L.T
    C = c0 + noise
    s = _batched_s(C, X0, sigma, n)
    mean = s.mean(axis=0)
    se = s.std(axis=0, ddof=1) / np.sqrt(draws)
    z = np.abs(mean) / np.where(se > 0, se, 1.0)
    return {
        "suite": "unbiased",
        "draws": draws,
        "max_abs_z": float(z.max()),
        "z_limit": z_limit,
        "passed": bool(z.max() <= z_limit),
    }


def jacobian_suite(draws: int = 100_000, seed: int = 404,
                   quick: bool = False) -> dict:
    """Expected directional derivative of s at the truth matches
    a0 a0^T H (Z0^T S Z0)^{-1}, estimated by finite differences."""
    if quick:
        draws = min(draws, 10_000)
    z_limit = 4.0 * (2.0 if quick else 1.0)
    rng = np.random.default_rng(seed)
    n, d, a0, X0, c0, sigma, L = _error_setup(rng)
    H = rng.standard_normal((n, d))
    noise = rng.standard_normal((draws, n + d)) @ L.T
    C = c0 + noise

    t = FD_STEP
    sp = _batched_s(C, X0 + t * H, sigma, n)
    sm = _batched_s(C, X0 - t * H, sigma, n)
    fd = (sp - sm) / (2.0 * t)

    Z0 = make_Z(X0)
    G0 = Z0.Z.T @ np.ascontiguousarray(sigma) @ Z0.Z
    target = np.linalg.solve(G0.T, (np.outer(a0, a0) @ H).T).T

    mean = fd.mean(axis=0)
    se = fd.std(axis=0, ddof=1) / np.sqrt(draws)
    z = np.abs(mean - target) / np.where(se > 0, se, 1.0)
    return {
        "suite": "jacobian",
        "draws": draws,
        "max_abs_z": float(z.max()),
        "z_limit": z_limit,
        "passed": bool(z.max() <= z_limit),
    }


_SUITES = {
    "gradient": gradient_suite,
    "oracle": oracle_suite,
    "unbiased": unbiased_suite,
    "jacobian": jacobian_suite,
}


def run_suites(names=None, quick: bool = False, seed: int | None = None) -> dict:
    """Run the requested suites (all by default); aggregate pass/fail."""
    if names is None or not names:
        names = SUITE_NAMES
    reports = []
    for name in names:
        if name not in _SUITES:
            raise ValueError(f"unknown suite {name!r}; have {SUITE_NAMES}")
        kwargs = {"quick": quick}
        if seed is not None:
            kwargs["seed"] = seed
        reports.append(_SUITES[name](**kwargs))
    return {
        "quick": quick,
        "suites": reports,
        "passed": all(r["passed"] for r in reports),
    }
