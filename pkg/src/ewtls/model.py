"""Observation model, error-covariance structure and the Z parameterization.

The data model is ``A X ~ B`` with ``C = [A, B]`` observed row-wise.  Errors
live only in the columns listed in the index set ``J`` (0-based internally;
file formats use 1-based indices, see :mod:`ewtls.dataio`).  Each row ``i``
carries a known symmetric positive definite weight matrix ``Sigma_i`` on the
``J`` coordinates; the full (n+d)-dimensional covariance embeds ``Sigma_i``
with exact zeros elsewhere.  The parameter is encoded as ``Z = [X; -I_d]``
subject to ``rank(Z_J) = d``.

All container types are immutable after construction and safe to share
across threads.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ewtls.exceptions import ModelInputError, ModelWarning

__all__ = [
    "RANK_TOL",
    "SYMMETRY_TOL",
    "Dimensions",
    "ProblemData",
    "ErrorStructure",
    "FullCov",
    "ParamZ",
    "TrueModel",
    "embed_full_cov",
    "make_Z",
    "check_rank_constraint",
]

RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a or out.base is a:
        out = out.copy()
    out.setflags(write=False)
    return out


def _require_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ModelInputError(f"{name} contains non-finite entries")


def symmetrize_checked(S: np.ndarray, name: str = "matrix",
                       tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return (S + S^T)/2, rejecting asymmetry beyond ``tol`` relative.

    File round-trip noise below the tolerance is silently repaired;
    anything larger is treated as a corrupt input.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ModelInputError(f"{name} must be square, got shape {S.shape}")
    scale = max(1.0, float(np.abs(S).max(initial=0.0)))
    asym = float(np.abs(S - S.T).max(initial=0.0))
    if asym > tol * scale:
        raise ModelInputError(
            f"{name} is not symmetric (relative asymmetry {asym / scale:.3e})"
        )
    return (S + S.T) / 2.0


@dataclass(frozen=True)
class Dimensions:
    """Problem sizes: m observation rows, n input columns, d output columns."""

    m: int
    n: int
    d: int

    def __post_init__(self):
        for name in ("m", "n", "d"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ModelInputError(f"dimension {name} must be a positive integer")
        if self.m <= self.n:
            warnings.warn(
                f"m={self.m} <= n={self.n}: the input Gram matrix is likely "
                "singular; estimates may be unreliable",
                ModelWarning,
                stacklevel=2,
            )

    @property
    def p(self) -> int:
        """Total number of columns n + d."""
        return self.n + self.d


@dataclass(frozen=True)
class ProblemData:
    """Observed matrix C = [A, B] with the column split recorded."""

    C: np.ndarray
    n: int
    d: int

    def __post_init__(self):
        C = _readonly(np.atleast_2d(self.C))
        if C.ndim != 2:
            raise ModelInputError("C must be a 2-d matrix")
        _require_finite(C, "C")
        if C.shape[1] != self.n + self.d:
            raise ModelInputError(
                f"C has {C.shape[1]} columns, expected n+d={self.n + self.d}"
            )
        object.__setattr__(self, "C", C)
        # construction-time check only; the warning lives in Dimensions
        self.dims

    @property
    def dims(self) -> Dimensions:
        return Dimensions(self.C.shape[0], self.n, self.d)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def A(self) -> np.ndarray:
        return self.C[:, : self.n]

    @property
    def B(self) -> np.ndarray:
        return self.C[:, self.n:]

    def row(self, i: int) -> np.ndarray:
        """Observation row c_i as an (n+d)-vector."""
        return self.C[i]


def _validate_J(J, k_max: int | None = None) -> tuple[int, ...]:
    J = tuple(int(j) for j in J)
    if len(J) == 0:
        raise ModelInputError("J must be non-empty")
    if any(b <= a for a, b in zip(J, J[1:])):
        raise ModelInputError("J must be strictly increasing")
    if J[0] < 0:
        raise ModelInputError("J contains a negative index")
    if k_max is not None and J[-1] >= k_max:
        raise ModelInputError(f"J index {J[-1]} out of range for p={k_max}")
    return J


@dataclass(frozen=True)
class ErrorStructure:
    """Error-carrying column set J with per-row weight matrices.

    ``sigma`` is either a single (k, k) matrix shared by all m rows
    (``shared=True``) or a stack of shape (m, k, k).  ``sigma2`` is the
    scale factor: known in simulation, None when it is to be estimated.
    ``kappa2`` is the computed eigenvalue floor min_i lambda_min(Sigma_i).
    """

    J: tuple[int, ...]
    sigma: np.ndarray
    m: int
    shared: bool
    sigma2: float | None = None
    kappa2: float = field(init=False)

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise ModelInputError("m must be a positive integer")
        object.__setattr__(self, "m", int(self.m))
        J = _validate_J(self.J)
        object.__setattr__(self, "J", J)
        k = len(J)
        sig = np.asarray(self.sigma, dtype=np.float64)
        if self.shared:
            if sig.shape != (k, k):
                raise ModelInputError(
                    f"shared sigma must have shape ({k}, {k}), got {sig.shape}"
                )
            sig = symmetrize_checked(sig, "sigma")
        else:
            if sig.shape != (self.m, k, k):
                raise ModelInputError(
                    f"per-row sigma must have shape ({self.m}, {k}, {k}), "
                    f"got {sig.shape}"
                )
            _require_finite(sig, "sigma")
            scale = np.maximum(1.0, np.abs(sig).max(axis=(1, 2)))
            asym = np.abs(sig - sig.transpose(0, 2, 1)).max(axis=(1, 2))
            bad = np.flatnonzero(asym > SYMMETRY_TOL * scale)
            if bad.size:
                i = int(bad[0])
                raise ModelInputError(
                    f"sigma[{i}] is not symmetric "
                    f"(relative asymmetry {asym[i] / scale[i]:.3e})"
                )
            sig = (sig + sig.transpose(0, 2, 1)) / 2.0
        _require_finite(sig, "sigma")
        sig = _readonly(sig)
        object.__setattr__(self, "sigma", sig)
        if self.sigma2 is not None:
            s2 = float(self.sigma2)
            if s2 < 0.0 or not np.isfinite(s2):
                raise ModelInputError("sigma2 must be a nonnegative finite scalar")
            object.__setattr__(self, "sigma2", s2)
        eigs = np.linalg.eigvalsh(sig)
        kappa2 = float(eigs.min())
        if kappa2 <= 0.0:
            raise ModelInputError(
                "every row covariance must be symmetric positive definite "
                f"(smallest eigenvalue {kappa2:.3e})"
            )
        object.__setattr__(self, "kappa2", kappa2)

    @classmethod
    def common(cls, J, sigma, m: int, sigma2: float | None = None) -> "ErrorStructure":
        """One weight matrix applied to every row."""
        return cls(J=tuple(J), sigma=sigma, m=m, shared=True, sigma2=sigma2)

    @classmethod
    def per_row(cls, J, sigmas, sigma2: float | None = None) -> "ErrorStructure":
        """A list/stack of m weight matrices, one per row."""
        stack = np.asarray(sigmas, dtype=np.float64)
        return cls(J=tuple(J), sigma=stack, m=stack.shape[0], shared=False,
                   sigma2=sigma2)

    @property
    def k(self) -> int:
        return len(self.J)

    def sigma_for(self, i: int) -> np.ndarray:
        """Weight matrix of row ``i`` (0-based)."""
        if not 0 <= i < self.m:
            raise ModelInputError(f"row index {i} out of range for m={self.m}")
        return self.sigma if self.shared else self.sigma[i]

    def mean_sigma(self) -> np.ndarray:
        """Average of the row weight matrices."""
        return self.sigma if self.shared else self.sigma.mean(axis=0)

    def scaled(self, tau: float) -> "ErrorStructure":
        """Same structure with every Sigma_i multiplied by ``tau > 0``."""
        if tau <= 0:
            raise ModelInputError("tau must be positive")
        return ErrorStructure(J=self.J, sigma=tau * self.sigma, m=self.m,
                              shared=self.shared, sigma2=self.sigma2)

    def validate_for(self, n: int, d: int) -> None:
        """Check compatibility with an (n, d) column split."""
        _validate_J(self.J, k_max=n + d)
        if self.k < d:
            raise ModelInputError(
                f"|J|={self.k} < d={d}: the rank constraint on Z_J cannot hold"
            )


@dataclass(frozen=True)
class FullCov:
    """Full (n+d)x(n+d) covariance with zeros outside the J rows/columns."""

    S: np.ndarray

    def __post_init__(self):
        S = symmetrize_checked(np.asarray(self.S, dtype=np.float64), "S")
        object.__setattr__(self, "S", _readonly(S))

    @property
    def p(self) -> int:
        return self.S.shape[0]

    def blocks(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(S_a, S_ab, S_ba, S_b) for the given input-column count n."""
        if not 0 < n < self.p:
            raise ModelInputError(f"block split n={n} out of range for p={self.p}")
        S = self.S
        return S[:n, :n], S[:n, n:], S[n:, :n], S[n:, n:]

    def restrict(self, J) -> np.ndarray:
        """Submatrix on the rows/columns in J."""
        idx = np.asarray(_validate_J(J, k_max=self.p), dtype=np.intp)
        return self.S[np.ix_(idx, idx)]


def embed_full_cov(sigma: np.ndarray, J, p: int) -> FullCov:
    """Scatter a |J|x|J| weight matrix into a p x p matrix, zero elsewhere.

    ``J`` uses 0-based indices here; the file-format boundary converts from
    the 1-based convention.
    """
    J = _validate_J(J, k_max=p)
    sigma = symmetrize_checked(np.asarray(sigma, dtype=np.float64), "sigma")
    if sigma.shape != (len(J), len(J)):
        raise ModelInputError(
            f"sigma shape {sigma.shape} does not match |J|={len(J)}"
        )
    S = np.zeros((p, p), dtype=np.float64)
    idx = np.asarray(J, dtype=np.intp)
    S[np.ix_(idx, idx)] = sigma
    return FullCov(S=S)


@dataclass(frozen=True)
class ParamZ:
    """Parameter matrix X with its implicit encoding Z = [X; -I_d]."""

    X: np.ndarray
    Z: np.ndarray = field(init=False)

    def __post_init__(self):
        X = _readonly(np.atleast_2d(self.X))
        _require_finite(X, "X")
        object.__setattr__(self, "X", X)
        d = X.shape[1]
        Z = np.vstack([X, -np.eye(d)])
        object.__setattr__(self, "Z", _readonly(Z))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def restrict(self, J) -> np.ndarray:
        """Row submatrix Z_J."""
        idx = np.asarray(_validate_J(J, k_max=self.Z.shape[0]), dtype=np.intp)
        return self.Z[idx, :]


def make_Z(X: np.ndarray) -> ParamZ:
    """Stack X over -I_d."""
    return ParamZ(X=np.atleast_2d(np.asarray(X, dtype=np.float64)))


def check_rank_constraint(Z, J, tol: float = RANK_TOL) -> bool:
    """True iff the d-th largest singular value of Z_J clears the threshold
    ``tol * max(largest singular value, 1)``.

    Accepts a :class:`ParamZ` or a raw (n+d, d) array.  Degenerate inputs
    (too few rows, non-finite values) return False rather than raising.
    """
    Zm = Z.Z if isinstance(Z, ParamZ) else np.atleast_2d(np.asarray(Z, float))
    d = Zm.shape[1]
    try:
        idx = np.asarray(_validate_J(J, k_max=Zm.shape[0]), dtype=np.intp)
    except ModelInputError:
        return False
    ZJ = Zm[idx, :]
    if ZJ.shape[0] < d or not np.all(np.isfinite(ZJ)):
        return False
    s = np.linalg.svd(ZJ, compute_uv=False)
    return bool(s[d - 1] > tol * max(s[0], 1.0))


@dataclass(frozen=True)
class TrueModel:
    """Simulation-only ground truth: X0 and the nonrandom input matrix A0."""

    X0: np.ndarray
    A0: np.ndarray
    B0: np.ndarray = field(init=False)
    C0: np.ndarray = field(init=False)

    def __post_init__(self):
        X0 = _readonly(np.atleast_2d(self.X0))
        A0 = _readonly(np.atleast_2d(self.A0))
        _require_finite(X0, "X0")
        _require_finite(A0, "A0")
        if A0.shape[1] != X0.shape[0]:
            raise ModelInputError(
                f"A0 has {A0.shape[1]} columns but X0 has {X0.shape[0]} rows"
            )
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "B0", _readonly(A0 @ X0))
        object.__setattr__(self, "C0", _readonly(np.hstack([A0, self.B0])))

    @property
    def dims(self) -> Dimensions:
        return Dimensions(self.A0.shape[0], self.X0.shape[0], self.X0.shape[1])

    @property
    def Z0(self) -> ParamZ:
        return make_Z(self.X0)
