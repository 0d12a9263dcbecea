"""Element-wise weighted total least squares for errors-in-variables models
with row-wise heteroscedastic errors and error-free columns.

Public surface: the model containers, the objective calculus, the solver,
nuisance/covariance inference, the simulation harness and a command-line
front end (``ewtls``).
"""

from ewtls._kernels import active_backend, available_backends, set_backend
from ewtls.exceptions import (
    ConstraintViolationError,
    DataFormatError,
    EwtlsError,
    InferenceError,
    InferenceWarning,
    InitializationError,
    ModelInputError,
    ModelWarning,
    TlsSolutionError,
)
from ewtls.inference import (
    ConfidenceEllipsoid,
    CovarianceEstimate,
    NuisanceEstimates,
    confidence_ellipsoid,
    estimate_VA,
    estimate_nuisance,
    estimate_sigma2,
    sandwich_Su,
)
from ewtls.model import (
    Dimensions,
    ErrorStructure,
    FullCov,
    ParamZ,
    ProblemData,
    TrueModel,
    check_rank_constraint,
    embed_full_cov,
    make_Z,
)
from ewtls.objective import (
    ObjectiveContext,
    Q_gradient,
    Q_value,
    expected_jacobian_action,
    f_prime_action,
    q_value,
    s_tilde,
    s_value,
)
from ewtls.simulation import (
    McSummary,
    ScenarioSpec,
    check_conditions,
    clt_diagnostics,
    default_scenario,
    generate_dataset,
    run_monte_carlo,
)
from ewtls.solver import (
    EstimationResult,
    SolverOptions,
    ewtls_solve,
    ols_estimate,
    tls_estimate,
)
from ewtls.special import chi2_quantile

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # backends
    "active_backend",
    "available_backends",
    "set_backend",
    # errors
    "EwtlsError",
    "ModelInputError",
    "DataFormatError",
    "ConstraintViolationError",
    "InitializationError",
    "TlsSolutionError",
    "InferenceError",
    "ModelWarning",
    "InferenceWarning",
    # model
    "Dimensions",
    "ProblemData",
    "ErrorStructure",
    "FullCov",
    "ParamZ",
    "TrueModel",
    "embed_full_cov",
    "make_Z",
    "check_rank_constraint",
    # objective
    "ObjectiveContext",
    "q_value",
    "Q_value",
    "Q_gradient",
    "s_tilde",
    "s_value",
    "f_prime_action",
    "expected_jacobian_action",
    # solver
    "SolverOptions",
    "EstimationResult",
    "ols_estimate",
    "tls_estimate",
    "ewtls_solve",
    # inference
    "NuisanceEstimates",
    "CovarianceEstimate",
    "ConfidenceEllipsoid",
    "estimate_sigma2",
    "estimate_VA",
    "estimate_nuisance",
    "sandwich_Su",
    "confidence_ellipsoid",
    "chi2_quantile",
    # simulation
    "ScenarioSpec",
    "McSummary",
    "default_scenario",
    "generate_dataset",
    "run_monte_carlo",
    "clt_diagnostics",
    "check_conditions",
]
