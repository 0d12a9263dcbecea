"""Synthetic-data scenarios and the Monte Carlo harness.

Datasets are generated to satisfy the model assumptions by construction:
row-wise independent errors, zero outside the J columns, covariance
sigma2 * Sigma_i on the J coordinates, and symmetric error laws (so third
moments vanish).  Randomness comes from the counter-based Philox generator
keyed by (scenario seed, stream id), which makes replicates independent
streams reproducible in any order and in parallel.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ewtls.exceptions import InferenceError, ModelInputError
from ewtls.inference import (
    confidence_ellipsoid,
    estimate_nuisance,
    sandwich_Su,
)
from ewtls.model import (
    ErrorStructure,
    ProblemData,
    TrueModel,
    check_rank_constraint,
    _validate_J,
)
from ewtls.objective import ObjectiveContext
from ewtls.solver import EstimationResult, SolverOptions, ewtls_solve
from ewtls.special import chi2_quantile

__all__ = [
    "FixedMatrix",
    "IidRows",
    "ConstantProfile",
    "ConvergingProfile",
    "PerRowProfile",
    "ScenarioSpec",
    "ReplicateOutcome",
    "McSummary",
    "CltDiagnostics",
    "ConditionReport",
    "default_scenario",
    "build_true_model",
    "build_error_structure",
    "generate_dataset",
    "run_monte_carlo",
    "clt_diagnostics",
    "check_conditions",
]

_MASK64 = (1 << 64) - 1
_FREEZE_STREAM = 1 << 63  # namespace for the frozen-design stream
ERROR_LAWS = ("gaussian", "scaled_uniform", "rademacher_mixture")
# asymmetric laws break the vanishing-third-moment assumption behind the
# normality results; exploratory use only, see allow_asymmetric_errors
UNSUPPORTED_ERROR_LAWS = ("shifted_exponential",)


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=[seed & _MASK64, stream & _MASK64])
    )


@dataclass(frozen=True)
class FixedMatrix:
    """Nonrandom design matrix given explicitly."""

    A0: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "A0", np.ascontiguousarray(self.A0, dtype=np.float64)
        )


@dataclass(frozen=True)
class IidRows:
    """Design rows drawn once per scenario seed from N(mean, cov) and then
    frozen; replicates reuse the same matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "mean", np.ascontiguousarray(self.mean, dtype=np.float64)
        )
        object.__setattr__(
            self, "cov", np.ascontiguousarray(self.cov, dtype=np.float64)
        )


@dataclass(frozen=True)
class ConstantProfile:
    """Sigma_i = sigma for every row."""

    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "sigma", np.ascontiguousarray(self.sigma, dtype=np.float64)
        )


@dataclass(frozen=True)
class ConvergingProfile:
    """Sigma_i = sigma_inf * (1 + gamma / i), i = 1..m (1-based rows)."""

    sigma_inf: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "sigma_inf",
            np.ascontiguousarray(self.sigma_inf, dtype=np.float64),
        )
        if self.gamma < 0:
            raise ModelInputError("gamma must be nonnegative")


@dataclass(frozen=True)
class PerRowProfile:
    """Explicit list of m weight matrices."""

    sigmas: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "sigmas", np.ascontiguousarray(self.sigmas, dtype=np.float64)
        )


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete description of a simulation scenario.

    ``error_law`` must be one of the symmetric laws in :data:`ERROR_LAWS`;
    symmetry makes the third-moment condition hold by construction.
    """

    m: int
    n: int
    d: int
    X0: np.ndarray
    a0_law: object
    J: tuple[int, ...]
    sigma2: float
    sigma_profile: object
    error_law: str = "gaussian"
    seed: int = 0
    allow_asymmetric_errors: bool = False

    def __post_init__(self):
        if min(self.m, self.n, self.d) < 1:
            raise ModelInputError("m, n, d must be positive")
        X0 = np.ascontiguousarray(np.atleast_2d(self.X0), dtype=np.float64)
        if X0.shape != (self.n, self.d):
            raise ModelInputError(
                f"X0 has shape {X0.shape}, expected ({self.n}, {self.d})"
            )
        object.__setattr__(self, "X0", X0)
        J = _validate_J(self.J, k_max=self.n + self.d)
        if len(J) < self.d:
            raise ModelInputError(f"|J|={len(J)} < d={self.d}")
        object.__setattr__(self, "J", J)
        if self.sigma2 < 0 or not np.isfinite(self.sigma2):
            raise ModelInputError("sigma2 must be a nonnegative finite scalar")
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.error_law in UNSUPPORTED_ERROR_LAWS:
            if not self.allow_asymmetric_errors:
                raise ModelInputError(
                    f"error_law {self.error_law!r} violates the symmetric-"
                    "error assumption and is unsupported; set "
                    "allow_asymmetric_errors=True for exploratory runs only"
                )
        elif self.error_law not in ERROR_LAWS:
            raise ModelInputError(
                f"error_law must be one of {ERROR_LAWS}, got {self.error_law!r}"
            )
        if not isinstance(self.a0_law, (FixedMatrix, IidRows)):
            raise ModelInputError("a0_law must be FixedMatrix or IidRows")
        if not isinstance(
            self.sigma_profile, (ConstantProfile, ConvergingProfile, PerRowProfile)
        ):
            raise ModelInputError("unknown sigma_profile type")
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    @property
    def k(self) -> int:
        return len(self.J)

    def with_overrides(self, m: int | None = None,
                       seed: int | None = None) -> "ScenarioSpec":
        """Copy with a new row count and/or seed (other fields unchanged)."""
        profile = self.sigma_profile
        if m is not None and m != self.m and isinstance(profile, PerRowProfile):
            raise ModelInputError(
                "cannot override m for a per-row sigma profile"
            )
        return ScenarioSpec(
            m=self.m if m is None else int(m),
            n=self.n,
            d=self.d,
            X0=self.X0,
            a0_law=self.a0_law,
            J=self.J,
            sigma2=self.sigma2,
            sigma_profile=profile,
            error_law=self.error_law,
            seed=self.seed if seed is None else int(seed),
            allow_asymmetric_errors=self.allow_asymmetric_errors,
        )


def default_scenario(m: int = 2000, seed: int = 20250810) -> ScenarioSpec:
    """Canonical Gaussian scenario used by the validation experiments.

    n=2, d=1, X0 = [1, -0.5]^T, design rows frozen from
    N((1, 1), diag(1, 2)), all three columns error-carrying,
    sigma2 = 0.01, Sigma_i = I3 * (1 + 1/i).
    """
    return ScenarioSpec(
        m=m,
        n=2,
        d=1,
        X0=np.array([[1.0], [-0.5]]),
        a0_law=IidRows(mean=np.array([1.0, 1.0]),
                       cov=np.diag([1.0, 2.0])),
        J=(0, 1, 2),
        sigma2=0.01,
        sigma_profile=ConvergingProfile(sigma_inf=np.eye(3), gamma=1.0),
        error_law="gaussian",
        seed=seed,
    )


def build_true_model(spec: ScenarioSpec) -> TrueModel:
    """Materialize the frozen ground truth (A0 depends only on the scenario
    seed, never on replicate seeds)."""
    law = spec.a0_law
    if isinstance(law, FixedMatrix):
        A0 = law.A0
        if A0.shape != (spec.m, spec.n):
            raise ModelInputError(
                f"fixed A0 has shape {A0.shape}, expected ({spec.m}, {spec.n})"
            )
    else:
        if law.mean.shape != (spec.n,) or law.cov.shape != (spec.n, spec.n):
            raise ModelInputError("IidRows mean/cov sizes do not match n")
        rng = _stream(spec.seed, _FREEZE_STREAM)
        L = np.linalg.cholesky(law.cov)
        A0 = law.mean + rng.standard_normal((spec.m, spec.n)) @ L.T
    return TrueModel(X0=spec.X0, A0=A0)


def _profile_stack(spec: ScenarioSpec) -> tuple[np.ndarray, bool]:
    """(sigma, shared) arrays for the scenario's weight profile."""
    prof = spec.sigma_profile
    k = spec.k
    if isinstance(prof, ConstantProfile):
        if prof.sigma.shape != (k, k):
            raise ModelInputError("profile sigma size does not match |J|")
        return prof.sigma, True
    if isinstance(prof, ConvergingProfile):
        if prof.sigma_inf.shape != (k, k):
            raise ModelInputError("profile sigma_inf size does not match |J|")
        i = np.arange(1, spec.m + 1, dtype=np.float64)
        factors = 1.0 + prof.gamma / i
        return factors[:, None, None] * prof.sigma_inf, False
    if prof.sigmas.shape != (spec.m, k, k):
        raise ModelInputError(
            f"per-row profile must have shape ({spec.m}, {k}, {k})"
        )
    return prof.sigmas, False


def build_error_structure(spec: ScenarioSpec) -> ErrorStructure:
    sigma, shared = _profile_stack(spec)
    if shared:
        return ErrorStructure.common(spec.J, sigma, spec.m, sigma2=spec.sigma2)
    return ErrorStructure.per_row(spec.J, sigma, sigma2=spec.sigma2)


def _standardized_draws(law: str, rng: np.random.Generator,
                        size: tuple[int, ...]) -> np.ndarray:
    """IID symmetric draws with mean 0 and variance 1."""
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "scaled_uniform":
        half = np.sqrt(3.0)
        return rng.uniform(-half, half, size)
    if law == "shifted_exponential":
        # asymmetric (skew 2), exploratory only
        return rng.exponential(1.0, size) - 1.0
    # two-point scale mixture of signs: variance (0.25 + 1.75)/2 = 1
    sign = 2.0 * rng.integers(0, 2, size) - 1.0
    scale = np.where(rng.integers(0, 2, size) == 1, np.sqrt(1.75), 0.5)
    return sign * scale


def _noise_matrix(spec: ScenarioSpec, replicate_seed: int) -> np.ndarray:
    """(m, |J|) noise with per-row covariance sigma2 * Sigma_i."""
    if replicate_seed < 0 or replicate_seed >= _FREEZE_STREAM:
        raise ModelInputError("replicate_seed must lie in [0, 2^63)")
    k = spec.k
    if spec.sigma2 == 0.0:
        return np.zeros((spec.m, k))
    rng = _stream(spec.seed, replicate_seed)
    E = _standardized_draws(spec.error_law, rng, (spec.m, k))
    root = np.sqrt(spec.sigma2)
    prof = spec.sigma_profile
    if isinstance(prof, ConstantProfile):
        L = np.linalg.cholesky(prof.sigma)
        return root * (E @ L.T)
    if isinstance(prof, ConvergingProfile):
        L = np.linalg.cholesky(prof.sigma_inf)
        i = np.arange(1, spec.m + 1, dtype=np.float64)
        return root * (E @ L.T) * np.sqrt(1.0 + prof.gamma / i)[:, None]
    Ls = np.linalg.cholesky(prof.sigmas)
    return root * np.einsum("mkj,mj->mk", Ls, E)


def generate_dataset(
    spec: ScenarioSpec, replicate_seed: int
) -> tuple[ProblemData, ErrorStructure, TrueModel]:
    """One synthetic dataset; bit-identical for identical (seed, replicate)."""
    tm = build_true_model(spec)
    errors = build_error_structure(spec)
    data = _sample_observations(spec, tm, replicate_seed)
    return data, errors, tm


def _sample_observations(spec: ScenarioSpec, tm: TrueModel,
                         replicate_seed: int) -> ProblemData:
    C = tm.C0.copy()
    noise = _noise_matrix(spec, replicate_seed)
    C[:, np.asarray(spec.J, dtype=np.intp)] += noise
    return ProblemData(C=C, n=spec.n, d=spec.d)


@dataclass(frozen=True)
class ReplicateOutcome:
    """Per-replicate estimation record."""

    index: int
    converged: bool
    iterations: int
    grad_norm: float
    X_hat: np.ndarray
    err_fro: float
    sigma2_hat: float | None
    VA_hat: np.ndarray | None
    Su_hat: np.ndarray | None
    statistic: float | None
    covered: bool | None


@dataclass(frozen=True)
class McSummary:
    """Aggregate Monte Carlo results for one scenario."""

    m: int
    n: int
    d: int
    u: np.ndarray
    level: float
    seed: int
    replicates: int
    converged_count: int
    excluded_fraction: float
    invalid: bool
    degenerate: bool
    median_err_fro: float
    mean_err_fro: float
    coverage: float | None
    emp_cov: np.ndarray | None
    mean_Su_hat: np.ndarray | None
    mean_sigma2_hat: float | None
    mean_VA_hat: np.ndarray | None
    stat_quantiles: dict[float, float] | None
    chi2_quantiles: dict[float, float]
    outcomes: tuple[ReplicateOutcome, ...] = field(repr=False, default=())


_QUANTILE_PROBS = (0.5, 0.9, 0.95)


def _run_replicate(spec: ScenarioSpec, tm: TrueModel, errors: ErrorStructure,
                   index: int, u: np.ndarray, level: float,
                   opts: SolverOptions) -> ReplicateOutcome:
    data = _sample_observations(spec, tm, index)
    ctx = ObjectiveContext(data=data, errors=errors)
    est = ewtls_solve(ctx, opts)
    err = float(np.linalg.norm(est.X_hat - tm.X0))
    if not est.converged:
        return ReplicateOutcome(
            index=index, converged=False, iterations=est.iterations,
            grad_norm=est.grad_norm, X_hat=est.X_hat, err_fro=err,
            sigma2_hat=None, VA_hat=None, Su_hat=None, statistic=None,
            covered=None,
        )
    nuis = estimate_nuisance(ctx, est.X_hat)
    statistic = None
    covered = None
    Su = None
    if spec.sigma2 > 0.0:
        # sigma2 = 0 is the zero-covariance degenerate case: no ellipsoid
        try:
            cov = sandwich_Su(ctx, est.X_hat, nuis.VA_hat, u)
            Su = cov.Su_hat
            ell = confidence_ellipsoid(est, cov, spec.m, level)
            target = tm.X0 @ u
            statistic = ell.statistic(target)
            covered = bool(statistic <= ell.radius2)
        except InferenceError:
            pass
    return ReplicateOutcome(
        index=index, converged=True, iterations=est.iterations,
        grad_norm=est.grad_norm, X_hat=est.X_hat, err_fro=err,
        sigma2_hat=nuis.sigma2_hat, VA_hat=nuis.VA_hat, Su_hat=Su,
        statistic=statistic, covered=covered,
    )


def run_monte_carlo(spec: ScenarioSpec, replicates: int, u: np.ndarray,
                    level: float = 0.95,
                    solver_opts: SolverOptions | None = None,
                    threads: int = 1) -> McSummary:
    """Estimate every replicate and aggregate the asymptotic diagnostics.

    Non-converged replicates are excluded from the statistics and their
    fraction reported; above 5 percent the summary is flagged invalid.
    """
    if replicates < 1:
        raise ModelInputError("replicates must be >= 1")
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != spec.d or not np.any(u != 0):
        raise ModelInputError(f"u must be a nonzero vector of length d={spec.d}")
    opts = solver_opts if solver_opts is not None else SolverOptions()

    tm = build_true_model(spec)
    errors = build_error_structure(spec)

    def work(r: int) -> ReplicateOutcome:
        return _run_replicate(spec, tm, errors, r, u, level, opts)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, range(replicates)))
    else:
        outcomes = [work(r) for r in range(replicates)]

    good = [o for o in outcomes if o.converged]
    excluded = 1.0 - len(good) / replicates
    errs = np.array([o.err_fro for o in good]) if good else np.array([np.nan])

    deviations = None
    emp_cov = None
    if good:
        dev = np.stack([
            np.sqrt(spec.m) * ((o.X_hat - tm.X0) @ u) for o in good
        ])
        deviations = dev
        if len(good) > 1:
            emp_cov = np.atleast_2d(np.cov(dev, rowvar=False, ddof=1))

    with_stat = [o for o in good if o.statistic is not None]
    degenerate = len(with_stat) == 0
    coverage = None
    stat_quantiles = None
    mean_Su = None
    if not degenerate:
        coverage = float(np.mean([o.covered for o in with_stat]))
        stats = np.array([o.statistic for o in with_stat])
        stat_quantiles = {
            q: float(np.quantile(stats, q)) for q in _QUANTILE_PROBS
        }
        mean_Su = np.mean([o.Su_hat for o in with_stat], axis=0)

    mean_sigma2 = (
        float(np.mean([o.sigma2_hat for o in good])) if good else None
    )
    mean_VA = np.mean([o.VA_hat for o in good], axis=0) if good else None

    return McSummary(
        m=spec.m, n=spec.n, d=spec.d, u=u, level=level, seed=spec.seed,
        replicates=replicates, converged_count=len(good),
        excluded_fraction=excluded, invalid=excluded > 0.05,
        degenerate=degenerate,
        median_err_fro=float(np.median(errs)),
        mean_err_fro=float(np.mean(errs)),
        coverage=coverage,
        emp_cov=emp_cov,
        mean_Su_hat=mean_Su,
        mean_sigma2_hat=mean_sigma2,
        mean_VA_hat=mean_VA,
        stat_quantiles=stat_quantiles,
        chi2_quantiles={q: chi2_quantile(q, spec.n) for q in _QUANTILE_PROBS},
        outcomes=tuple(outcomes),
    )


@dataclass(frozen=True)
class CltDiagnostics:
    """Normality diagnostics for the normalized row sums.

    Component 1 is sum_i a0_i ctilde_i^T / sqrt(m) (n x |J|); component 2 is
    sum_i (ctilde_i ctilde_i^T - sigma2 Sigma_i) / sqrt(m) (|J| x |J|).
    Entries outside the J columns are identically zero and omitted.
    """

    replicates: int
    mean_z1: np.ndarray
    mean_z2: np.ndarray
    cross_cov_z: np.ndarray
    skew_z1: np.ndarray
    skew_z2: np.ndarray
    kurt_z1: np.ndarray
    kurt_z2: np.ndarray
    degenerate: bool

    def max_abs_z(self) -> dict[str, float]:
        return {
            "mean": float(max(np.abs(self.mean_z1).max(initial=0.0),
                              np.abs(self.mean_z2).max(initial=0.0))),
            "cross_cov": float(np.abs(self.cross_cov_z).max(initial=0.0)),
            "skew": float(max(np.abs(self.skew_z1).max(initial=0.0),
                              np.abs(self.skew_z2).max(initial=0.0))),
            "kurtosis": float(max(np.abs(self.kurt_z1).max(initial=0.0),
                                  np.abs(self.kurt_z2).max(initial=0.0))),
        }


def _moment_z(samples: np.ndarray, order: int) -> np.ndarray:
    """Z-scores of skewness (order 3) or excess kurtosis (order 4)."""
    R = samples.shape[0]
    mu = samples.mean(axis=0)
    centered = samples - mu
    m2 = (centered ** 2).mean(axis=0)
    safe = np.where(m2 > 0, m2, 1.0)
    if order == 3:
        stat = (centered ** 3).mean(axis=0) / safe ** 1.5
        se = np.sqrt(6.0 / R)
    else:
        stat = (centered ** 4).mean(axis=0) / safe ** 2 - 3.0
        se = np.sqrt(24.0 / R)
    stat = np.where(m2 > 0, stat, 0.0)
    return stat / se


def clt_diagnostics(spec: ScenarioSpec, replicates: int) -> CltDiagnostics:
    """Monte Carlo check that the normalized row sums behave like a centered
    Gaussian pair with uncorrelated components."""
    if replicates < 2:
        raise ModelInputError("replicates must be >= 2")
    tm = build_true_model(spec)
    errors = build_error_structure(spec)
    sigma_sum = (
        spec.m * errors.sigma if errors.shared else errors.sigma.sum(axis=0)
    )
    centering = spec.sigma2 * sigma_sum
    root_m = np.sqrt(spec.m)

    n, k = spec.n, spec.k
    W1 = np.empty((replicates, n, k))
    W2 = np.empty((replicates, k, k))
    for r in range(replicates):
        noise = _noise_matrix(spec, r)
        W1[r] = (tm.A0.T @ noise) / root_m
        W2[r] = (noise.T @ noise - centering) / root_m

    F1 = W1.reshape(replicates, -1)
    F2 = W2.reshape(replicates, -1)
    var1 = F1.var(axis=0)
    var2 = F2.var(axis=0)
    degenerate = bool(np.all(var1 == 0) and np.all(var2 == 0))

    def mean_z(F, var):
        se = np.sqrt(np.where(var > 0, var, 1.0) / replicates)
        z = F.mean(axis=0) / se
        return np.where(var > 0, z, 0.0)

    c1 = F1 - F1.mean(axis=0)
    c2 = F2 - F2.mean(axis=0)
    cross = (c1.T @ c2) / (replicates - 1)
    cross_se = np.sqrt(
        np.outer(np.where(var1 > 0, var1, 1.0),
                 np.where(var2 > 0, var2, 1.0)) / replicates
    )
    cross_z = np.where(np.outer(var1 > 0, var2 > 0), cross / cross_se, 0.0)

    return CltDiagnostics(
        replicates=replicates,
        mean_z1=mean_z(F1, var1).reshape(n, k),
        mean_z2=mean_z(F2, var2).reshape(k, k),
        cross_cov_z=cross_z,
        skew_z1=_moment_z(F1, 3).reshape(n, k),
        skew_z2=_moment_z(F2, 3).reshape(k, k),
        kurt_z1=_moment_z(F1, 4).reshape(n, k),
        kurt_z2=_moment_z(F2, 4).reshape(k, k),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class ConditionReport:
    """Numeric checks of the model conditions that are verifiable from a
    scenario: eigenvalue floor, design-limit nonsingularity, weight-matrix
    convergence and the rank constraint at the truth."""

    kappa2: float
    va_emp: np.ndarray
    lambda_min_va: float
    sigma_dev_last: float
    sigma_dev_tail_max: float
    rank_ok_at_truth: bool
    violations: tuple[str, ...]


def check_conditions(spec: ScenarioSpec) -> ConditionReport:
    errors = build_error_structure(spec)
    tm = build_true_model(spec)
    va_emp = (tm.A0.T @ tm.A0) / spec.m
    lam_min = float(np.linalg.eigvalsh(va_emp)[0])

    if errors.shared:
        dev_last = 0.0
        dev_tail = 0.0
    else:
        prof = spec.sigma_profile
        limit = (prof.sigma_inf if isinstance(prof, ConvergingProfile)
                 else errors.sigma[-1])
        devs = np.linalg.norm(errors.sigma - limit, axis=(1, 2))
        dev_last = float(devs[-1])
        tail = devs[spec.m // 2:]
        dev_tail = float(tail.max(initial=0.0))

    rank_ok = check_rank_constraint(tm.Z0, spec.J)

    violations = []
    if errors.kappa2 <= 0:
        violations.append("eigenvalue floor kappa2 is not positive")
    if lam_min <= 1e-12:
        violations.append("empirical design limit m^-1 A0^T A0 is singular")
    if not rank_ok:
        violations.append("rank constraint fails at the true parameter")

    return ConditionReport(
        kappa2=errors.kappa2,
        va_emp=va_emp,
        lambda_min_va=lam_min,
        sigma_dev_last=dev_last,
        sigma_dev_tail_max=dev_tail,
        rank_ok_at_truth=rank_ok,
        violations=tuple(violations),
    )
