"""Weighted residual loss, total objective, estimating functions and the
derivative formulas used by the solver and the covariance estimator.

For one observation row c = [a; b] with full covariance S and Z = [X; -I_d]:

* loss           q(c, S; X) = c^T Z (Z^T S Z)^{-1} Z^T c
* row function   stilde = a c^T Z - [S_a, S_ab] Z (Z^T S Z)^{-1} Z^T c c^T Z
* normalized     s = stilde (Z^T S Z)^{-1}
* total          Q(X) = sum_i q(c_i, S_i; X), with gradient 2 sum_i s_i.

All (Z^T S Z)^{-1} applications go through Cholesky-type factorizations; an
explicit inverse never appears outside test oracles.
"""

from dataclasses import dataclass, field

import numpy as np

from ewtls import _kernels
from ewtls.exceptions import ConstraintViolationError, ModelInputError
from ewtls.model import ErrorStructure, FullCov, ParamZ, ProblemData, embed_full_cov

__all__ = [
    "ObjectiveContext",
    "q_value",
    "Q_value",
    "Q_gradient",
    "objective_with_gradient",
    "estimating_equation",
    "s_tilde",
    "s_value",
    "f_prime_action",
    "expected_jacobian_action",
]


def _spd_factor(G: np.ndarray, what: str = "Z^T S Z") -> np.ndarray:
    try:
        return np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise ConstraintViolationError(
            f"{what} is not positive definite; the rank constraint on Z_J fails"
        ) from None


def _chol_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    # two triangular systems; L comes from _spd_factor
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


@dataclass(frozen=True)
class ObjectiveContext:
    """Pairs the observation rows with their per-row weight matrices and
    holds the packed arrays the kernels consume."""

    data: ProblemData
    errors: ErrorStructure
    _J: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.errors.m != self.data.m:
            raise ModelInputError(
                f"error structure is for m={self.errors.m} rows but data has "
                f"m={self.data.m}"
            )
        self.errors.validate_for(self.data.n, self.data.d)
        object.__setattr__(
            self, "_J", np.asarray(self.errors.J, dtype=np.intp)
        )

    @property
    def m(self) -> int:
        return self.data.m

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def d(self) -> int:
        return self.data.d

    @property
    def p(self) -> int:
        return self.data.n + self.data.d

    def full_cov(self, i: int) -> FullCov:
        """Embedded (n+d)x(n+d) covariance of row ``i``."""
        return embed_full_cov(self.errors.sigma_for(i), self.errors.J, self.p)

    def mean_full_cov(self) -> FullCov:
        """Embedded average m^{-1} sum_i S_i."""
        return embed_full_cov(self.errors.mean_sigma(), self.errors.J, self.p)

    def _kernel_args(self, Z: np.ndarray):
        return (
            self.data.C,
            np.ascontiguousarray(Z),
            self._J,
            self.errors.sigma,
            self.errors.shared,
            self.n,
        )


def q_value(c: np.ndarray, S: FullCov, Z: ParamZ) -> float:
    """Weighted squared residual of one row; exactly nonnegative.

    Computed as ||L^{-1} Z^T c||^2 from the Cholesky factor L of Z^T S Z.
    """
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    G = Z.Z.T @ S.S @ Z.Z
    L = _spd_factor(G)
    z = np.linalg.solve(L, Z.Z.T @ c)
    return float(z @ z)


def s_tilde(a: np.ndarray, b: np.ndarray, S: FullCov, Z: ParamZ) -> np.ndarray:
    """Raw estimating-function term: a c^T Z - [S_a, S_ab] Z G^{-1} Z^T c c^T Z."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    n = a.shape[0]
    c = np.concatenate([a, b])
    G = Z.Z.T @ S.S @ Z.Z
    L = _spd_factor(G)
    w = Z.Z.T @ c
    y = _chol_solve(L, w)
    T = S.S[:n, :] @ Z.Z
    return np.outer(a - T @ y, w)


def s_value(a: np.ndarray, b: np.ndarray, S: FullCov, Z: ParamZ) -> np.ndarray:
    """Normalized estimating-function term s = stilde (Z^T S Z)^{-1}."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    n = a.shape[0]
    c = np.concatenate([a, b])
    G = Z.Z.T @ S.S @ Z.Z
    L = _spd_factor(G)
    w = Z.Z.T @ c
    y = _chol_solve(L, w)
    T = S.S[:n, :] @ Z.Z
    return np.outer(a - T @ y, y)


def Q_value(ctx: ObjectiveContext, X: np.ndarray) -> float:
    """Total loss sum_i q(c_i, S_i; X)."""
    Z = np.vstack([np.atleast_2d(X), -np.eye(ctx.d)])
    return _kernels.objective_value(*ctx._kernel_args(Z))


def objective_with_gradient(ctx: ObjectiveContext, X: np.ndarray) -> tuple[float, np.ndarray]:
    """(Q(X), dQ/dX) in one pass; gradient taken in the trace inner product."""
    Z = np.vstack([np.atleast_2d(X), -np.eye(ctx.d)])
    return _kernels.objective_parts(*ctx._kernel_args(Z))


def Q_gradient(ctx: ObjectiveContext, X: np.ndarray) -> np.ndarray:
    """Gradient of Q: 2 sum_i s(a_i, b_i, S_i; X)."""
    return objective_with_gradient(ctx, X)[1]


def estimating_equation(ctx: ObjectiveContext, X: np.ndarray) -> np.ndarray:
    """sum_i s(a_i, b_i, S_i; X); zero at the estimate."""
    return 0.5 * Q_gradient(ctx, X)


def row_factors(ctx: ObjectiveContext, X: np.ndarray):
    """Per-row pieces (q, ra, w, y); stilde_i = outer(ra_i, w_i)."""
    Z = np.vstack([np.atleast_2d(X), -np.eye(ctx.d)])
    return _kernels.row_terms(*ctx._kernel_args(Z))


def _stack_H(H: np.ndarray, d: int) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    return np.vstack([H, np.zeros((d, H.shape[1]))])


def f_prime_action(Z: ParamZ, S: FullCov, H: np.ndarray) -> np.ndarray:
    """Directional derivative of f(Z) = Z (Z^T S Z)^{-1} along [H; 0]."""
    G = Z.Z.T @ S.S @ Z.Z
    L = _spd_factor(G)
    Hs = _stack_H(H, Z.d)
    SZ = S.S @ Z.Z
    K = Hs.T @ SZ  # (d, d); inner bracket is K + K^T
    first = _chol_solve(L, Hs.T).T  # [H;0] G^{-1}
    inner = _chol_solve(L, K + K.T)  # G^{-1}(K + K^T)
    second = Z.Z @ _chol_solve(L, inner.T).T  # Z G^{-1}(K+K^T) G^{-1}
    return first - second


def expected_jacobian_action(a0: np.ndarray, S: FullCov, Z0: ParamZ,
                             H: np.ndarray) -> np.ndarray:
    """Expected derivative action of s at the truth: a0 a0^T H (Z0^T S Z0)^{-1}."""
    a0 = np.asarray(a0, dtype=np.float64).reshape(-1)
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    G = Z0.Z.T @ S.S @ Z0.Z
    L = _spd_factor(G)
    M = np.outer(a0, a0) @ H
    return _chol_solve(L, M.T).T
