"""Estimate X by unconstrained minimization of the weighted objective.

The estimator is the minimizer of Q(X) (when the objective admits one); the
first-order condition sum_i s_i(X) = 0 serves as the convergence
certificate.  Minimization is quasi-Newton (BFGS in the trace inner product
on vec(X)) with the analytic gradient, Armijo backtracking, and a
rank-constraint safeguard on every trial point.  OLS and classical SVD-based
TLS provide initializations and oracles.
"""

from dataclasses import dataclass

import numpy as np

from ewtls.exceptions import (
    ConstraintViolationError,
    InitializationError,
    ModelInputError,
    TlsSolutionError,
)
from ewtls.model import ProblemData, check_rank_constraint, make_Z
from ewtls.objective import ObjectiveContext, Q_value, objective_with_gradient

__all__ = [
    "SolverOptions",
    "EstimationResult",
    "ols_estimate",
    "tls_estimate",
    "ewtls_solve",
]

_ARMIJO_C1 = 1e-4
_SHRINK = 0.5


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and strategy knobs for :func:`ewtls_solve`.

    ``grad_tol`` is applied as ``grad_tol * m`` on the gradient Frobenius
    norm.  ``init`` is "ols", "tls", or an explicit (n, d) start matrix.
    ``multistart`` adds that many perturbed restarts (Gaussian, scale
    0.1*(1+|X_init|) entrywise, seeded by ``seed``).
    """

    grad_tol: float = 1e-9
    step_tol: float = 1e-12
    max_iter: int = 500
    init: object = "ols"
    multistart: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ModelInputError("tolerances must be positive")
        if self.max_iter < 1:
            raise ModelInputError("max_iter must be >= 1")
        if self.multistart < 0:
            raise ModelInputError("multistart must be >= 0")


@dataclass(frozen=True)
class EstimationResult:
    """Solver output: the estimate plus its convergence certificate.

    ``converged=False`` encodes the no-finite-solution branch of the
    estimator definition; callers decide whether that is fatal.
    ``q_history`` records Q at the accepted iterates (monotone up to float
    resolution of Q; the endgame accepts on gradient decrease once objective
    differences fall below resolution).
    """

    X_hat: np.ndarray
    Q_min: float
    grad_norm: float
    eq_residual_norm: float
    iterations: int
    converged: bool
    init_used: str
    q_history: tuple[float, ...] = ()


def ols_estimate(data: ProblemData) -> np.ndarray:
    """Ordinary least squares (A^T A)^{-1} A^T B via factorization."""
    A, B = data.A, data.B
    X, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if rank < data.n:
        raise InitializationError(
            f"A is rank deficient (rank {rank} < n={data.n}); try the TLS "
            "initialization or supply a start matrix"
        )
    return X


def tls_estimate(data: ProblemData, tol: float = 1e-10) -> np.ndarray:
    """Classical homoscedastic TLS solution from the SVD of C = [A, B].

    X = -V12 V22^{-1}, where the last d right singular vectors are split
    into V12 (top n rows) and V22 (bottom d rows).
    """
    n, d = data.n, data.d
    _, _, Vt = np.linalg.svd(data.C, full_matrices=True)
    V = Vt.T
    V12 = V[:n, n:]
    V22 = V[n:, n:]
    sv = np.linalg.svd(V22, compute_uv=False)
    if sv.size == 0 or sv[-1] <= tol:
        raise TlsSolutionError(
            "no TLS solution: the trailing block of the right singular "
            "vectors is singular"
        )
    return -np.linalg.solve(V22.T, V12.T).T


def _rank_ok(X: np.ndarray, J) -> bool:
    return check_rank_constraint(make_Z(X), J)


def _bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    rho = 1.0 / (y @ s)
    I = np.eye(H.shape[0])
    V = I - rho * np.outer(s, y)
    return V @ H @ V.T + rho * np.outer(s, s)


def _minimize(ctx: ObjectiveContext, X_init: np.ndarray,
              opts: SolverOptions, init_used: str) -> EstimationResult:
    n, d, m = ctx.n, ctx.d, ctx.m
    J = ctx.errors.J
    threshold = opts.grad_tol * m

    if not _rank_ok(X_init, J):
        raise ConstraintViolationError(
            "initialization violates the rank constraint on Z_J"
        )

    x = np.asarray(X_init, dtype=np.float64).reshape(n * d).copy()
    f, G = objective_with_gradient(ctx, x.reshape(n, d))
    g = G.reshape(n * d)
    gnorm = float(np.linalg.norm(g))
    history = [f]

    H = np.eye(n * d)
    first_update = True
    iterations = 0
    converged = gnorm <= threshold

    while not converged and iterations < opts.max_iter:
        p = -H @ g
        gtp = float(g @ p)
        if gtp >= -1e-14 * gnorm * float(np.linalg.norm(p)):
            H = np.eye(n * d)
            first_update = True
            p = -g
            gtp = -gnorm * gnorm

        # once the predicted decrease drops below the float resolution of Q
        # the Armijo test is blind; switch to gradient-certified acceptance
        f_resolution = 16.0 * np.finfo(float).eps * (1.0 + abs(f))
        pnorm = float(np.linalg.norm(p))
        t = 1.0 if iterations > 0 else min(1.0, 1.0 / max(1.0, pnorm))
        accepted = False
        g_new = None
        only_rank_rejections = True
        while t * pnorm > opts.step_tol * max(1.0, float(np.linalg.norm(x))):
            x_trial = x + t * p
            X_trial = x_trial.reshape(n, d)
            if _rank_ok(X_trial, J):
                only_rank_rejections = False
                try:
                    f_trial = Q_value(ctx, X_trial)
                except ConstraintViolationError:
                    f_trial = np.inf
                if f_trial <= f + _ARMIJO_C1 * t * gtp:
                    accepted = True
                    break
                if f_trial <= f + f_resolution:
                    _, G_trial = objective_with_gradient(ctx, X_trial)
                    g_try = G_trial.reshape(n * d)
                    if float(np.linalg.norm(g_try)) <= \
                            max(threshold, 0.9 * gnorm):
                        g_new = g_try
                        accepted = True
                        break
            t *= _SHRINK
        if not accepted:
            if only_rank_rejections:
                raise ConstraintViolationError(
                    "every line-search trial violated the rank constraint "
                    "on Z_J"
                )
            break

        if g_new is None:
            f_new, G_new = objective_with_gradient(ctx, x_trial.reshape(n, d))
            g_new = G_new.reshape(n * d)
        else:
            f_new = f_trial
        s = x_trial - x
        yv = g_new - g
        sty = float(s @ yv)
        if sty > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            if first_update:
                H = (sty / float(yv @ yv)) * np.eye(n * d)
                first_update = False
            H = _bfgs_update(H, s, yv)

        step_small = float(np.linalg.norm(s)) <= \
            opts.step_tol * max(1.0, float(np.linalg.norm(x)))
        x, f, g = x_trial, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(f)
        iterations += 1
        converged = gnorm <= threshold
        if step_small and not converged:
            break

    X_hat = x.reshape(n, d)
    if converged and not _rank_ok(X_hat, J):
        converged = False
    return EstimationResult(
        X_hat=X_hat,
        Q_min=f,
        grad_norm=gnorm,
        eq_residual_norm=0.5 * gnorm,
        iterations=iterations,
        converged=converged,
        init_used=init_used,
        q_history=tuple(history),
    )


def _initial_point(ctx: ObjectiveContext, opts: SolverOptions) -> tuple[np.ndarray, str]:
    init = opts.init
    if isinstance(init, (np.ndarray, list, tuple)):
        X0 = np.atleast_2d(np.asarray(init, dtype=np.float64))
        if X0.shape != (ctx.n, ctx.d):
            raise ModelInputError(
                f"given init has shape {X0.shape}, expected ({ctx.n}, {ctx.d})"
            )
        return X0, "given"
    if init == "ols":
        try:
            return ols_estimate(ctx.data), "ols"
        except InitializationError:
            return tls_estimate(ctx.data), "tls"
    if init == "tls":
        return tls_estimate(ctx.data), "tls"
    raise ModelInputError(f"unknown init strategy {init!r}")


def ewtls_solve(ctx: ObjectiveContext, opts: SolverOptions | None = None) -> EstimationResult:
    """Minimize Q over X, returning the estimate with diagnostics.

    A converged result satisfies ``grad_norm <= grad_tol * m``, the rank
    constraint at X_hat, and ``Q(X_hat) <= Q(X_init)`` (monotone descent).
    """
    if opts is None:
        opts = SolverOptions()
    X_init, init_used = _initial_point(ctx, opts)
    best = _minimize(ctx, X_init, opts, init_used)
    if opts.multistart > 0:
        rng = np.random.default_rng(opts.seed)
        scale = 0.1 * (1.0 + np.abs(X_init))
        candidates = [best]
        for _ in range(opts.multistart):
            X_pert = X_init + scale * rng.standard_normal(X_init.shape)
            try:
                candidates.append(_minimize(ctx, X_pert, opts, init_used))
            except ConstraintViolationError:
                continue
        converged_ones = [r for r in candidates if r.converged]
        pool = converged_ones if converged_ones else candidates
        best = min(pool, key=lambda r: r.Q_min)
    return best
