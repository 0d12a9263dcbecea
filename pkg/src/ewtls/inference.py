"""Nuisance-parameter estimation, sandwich covariance and confidence
ellipsoids for linear functionals of the parameter matrix.

With Zhat = [X_hat; -I_d]:

* sigma2_hat = (1/d) tr[(Zhat^T Cbar Zhat)(Zhat^T Sbar Zhat)^{-1}],
  Cbar = m^{-1} sum c_i c_i^T, Sbar = m^{-1} sum S_i;
* VA_hat = m^{-1} sum a_i a_i^T - sigma2_hat * Sbar_a (upper-left block);
* Su_hat = VA_hat^{-1} [m^{-1} sum shat_i u u^T shat_i^T] VA_hat^{-T}
  with shat_i the raw estimating-function terms at X_hat (the congruence is
  applied on both sides so the estimate is symmetric PSD);
* ellipsoid {v : m (X_hat u - v)^T Su_hat^{-1} (X_hat u - v) <= chi2
  quantile with n degrees of freedom}.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ewtls._kernels import pairwise_sum
from ewtls.exceptions import InferenceError, InferenceWarning, ModelInputError
from ewtls.model import make_Z
from ewtls.objective import ObjectiveContext, row_factors
from ewtls.solver import EstimationResult
from ewtls.special import chi2_quantile

__all__ = [
    "NuisanceEstimates",
    "CovarianceEstimate",
    "ConfidenceEllipsoid",
    "estimate_sigma2",
    "estimate_VA",
    "estimate_nuisance",
    "sandwich_Su",
    "confidence_ellipsoid",
]

_EIG_CLIP = 1e-10
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class NuisanceEstimates:
    """Scale and design-limit estimates with their building blocks."""

    sigma2_hat: float
    VA_hat: np.ndarray
    S_bar: np.ndarray
    C_bar: np.ndarray


@dataclass(frozen=True)
class CovarianceEstimate:
    """Estimated asymptotic covariance of sqrt(m)(X_hat u - X0 u)."""

    u: np.ndarray
    Su_hat: np.ndarray


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    """Ellipsoid {v : (v - center)^T shape (v - center) <= radius2}."""

    center: np.ndarray
    shape: np.ndarray
    level: float
    radius2: float

    def statistic(self, v: np.ndarray) -> float:
        diff = np.asarray(v, dtype=np.float64).reshape(-1) - self.center
        return float(diff @ self.shape @ diff)

    def contains(self, v: np.ndarray) -> bool:
        return self.statistic(v) <= self.radius2


def _mean_cc(ctx: ObjectiveContext) -> np.ndarray:
    C = ctx.data.C
    return (C.T @ C) / ctx.m


def estimate_sigma2(ctx: ObjectiveContext, X_hat: np.ndarray) -> float:
    """Scale estimate (1/d) tr[(Zhat^T Cbar Zhat)(Zhat^T Sbar Zhat)^{-1}]."""
    Z = make_Z(X_hat)
    W = ctx.data.C @ Z.Z
    M_c = (W.T @ W) / ctx.m
    ZJ = Z.restrict(ctx.errors.J)
    M_s = ZJ.T @ ctx.errors.mean_sigma() @ ZJ
    try:
        L = np.linalg.cholesky(M_s)
    except np.linalg.LinAlgError:
        raise InferenceError(
            "Zhat^T Sbar Zhat is not positive definite; the rank constraint "
            "fails at X_hat"
        ) from None
    solved = np.linalg.solve(L.T, np.linalg.solve(L, M_c))
    return float(np.trace(solved)) / ctx.d


def estimate_VA(ctx: ObjectiveContext, sigma2_hat: float) -> np.ndarray:
    """Design-limit estimate m^{-1} sum a_i a_i^T - sigma2_hat * Sbar_a."""
    if sigma2_hat < 0:
        raise ModelInputError("sigma2_hat must be nonnegative")
    A = ctx.data.A
    aa_bar = (A.T @ A) / ctx.m
    S_bar_a = ctx.mean_full_cov().blocks(ctx.n)[0]
    VA = aa_bar - sigma2_hat * S_bar_a
    VA = (VA + VA.T) / 2.0
    lam = np.linalg.eigvalsh(VA)
    if lam[0] <= 0:
        warnings.warn(
            f"VA_hat is not positive definite (smallest eigenvalue "
            f"{lam[0]:.3e}); finite-sample fluctuation, treat inference "
            "with care",
            InferenceWarning,
            stacklevel=2,
        )
    return VA


def estimate_nuisance(ctx: ObjectiveContext, X_hat: np.ndarray) -> NuisanceEstimates:
    """sigma2 and V_A estimates plus the averaged moment matrices."""
    sigma2_hat = estimate_sigma2(ctx, X_hat)
    VA_hat = estimate_VA(ctx, sigma2_hat)
    return NuisanceEstimates(
        sigma2_hat=sigma2_hat,
        VA_hat=VA_hat,
        S_bar=ctx.mean_full_cov().S,
        C_bar=_mean_cc(ctx),
    )


def sandwich_Su(ctx: ObjectiveContext, X_hat: np.ndarray, VA_hat: np.ndarray,
                u: np.ndarray) -> CovarianceEstimate:
    """Sandwich covariance estimate for sqrt(m)(X_hat u - X0 u).

    The middle factor is m^{-1} sum (w_i^T u)^2 ra_i ra_i^T, the outer-product
    form of the raw estimating-function terms applied to u.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != ctx.d:
        raise ModelInputError(f"u has length {u.shape[0]}, expected d={ctx.d}")
    if not np.any(u != 0):
        raise ModelInputError("u must be a nonzero direction")

    VA = (np.asarray(VA_hat, dtype=np.float64)
          + np.asarray(VA_hat, dtype=np.float64).T) / 2.0
    lam = np.linalg.eigvalsh(VA)
    if lam[0] <= 0 or lam[-1] / lam[0] > _COND_LIMIT:
        raise InferenceError(
            "VA_hat is singular or ill-conditioned; a larger number of rows m "
            "is needed for stable inference"
        )

    _, ra, w, _ = row_factors(ctx, X_hat)
    t = w @ u  # (m,) scalar action of each stilde_i on u
    meat = pairwise_sum((t * t)[:, None, None] * (ra[:, :, None] * ra[:, None, :]))
    meat /= ctx.m
    half = np.linalg.solve(VA, meat)
    Su = np.linalg.solve(VA, half.T).T
    Su = (Su + Su.T) / 2.0

    lam, vec = np.linalg.eigh(Su)
    if lam[0] < -_EIG_CLIP:
        raise InferenceError(
            f"sandwich estimate has eigenvalue {lam[0]:.3e} below the "
            "round-off tolerance; rejecting it"
        )
    if lam[0] < 0:
        lam = np.clip(lam, 0.0, None)
        Su = (vec * lam) @ vec.T
        Su = (Su + Su.T) / 2.0
    return CovarianceEstimate(u=u.copy(), Su_hat=Su)


def confidence_ellipsoid(est: EstimationResult, cov: CovarianceEstimate,
                         m: int, level: float) -> ConfidenceEllipsoid:
    """Asymptotic confidence ellipsoid for the linear functional X0 u."""
    if not 0.0 < level < 1.0:
        raise ModelInputError("level must lie strictly between 0 and 1")
    if m < 1:
        raise ModelInputError("m must be a positive integer")
    Su = cov.Su_hat
    n = Su.shape[0]
    lam, vec = np.linalg.eigh(Su)
    if lam[0] <= 0:
        raise InferenceError(
            "Su_hat is not positive definite; no ellipsoid can be formed"
        )
    shape = m * ((vec / lam) @ vec.T)
    shape = (shape + shape.T) / 2.0
    center = est.X_hat @ cov.u
    return ConfidenceEllipsoid(
        center=center,
        shape=shape,
        level=float(level),
        radius2=chi2_quantile(level, n),
    )
