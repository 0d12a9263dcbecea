"""Hot per-row accumulation kernels with two interchangeable backends.

The compiled Cython core (``ewtls._kernels._core``) is preferred when it was
built; otherwise a vectorized NumPy implementation is used.  Selection
happens at import time and can be forced with ``EWTLS_BACKEND=numpy`` or
``EWTLS_BACKEND=compiled``.

Backend contract
----------------
All backends implement, with identical semantics:

``row_terms(C, Z, J, sigma, shared, n) -> (q, ra, w, y)``
    Per-row pieces of the weighted residual calculus, for row i:
    ``w_i = Z^T c_i``, ``G_i = Z_J^T Sigma_i Z_J``, ``y_i = G_i^{-1} w_i``,
    ``q_i = w_i^T G_i^{-1} w_i`` (computed as a sum of squares, hence
    exactly nonnegative) and ``ra_i = a_i - T_i y_i`` with
    ``T_i = [S_a, S_ab]_i Z``.  The row estimating function factors as
    ``stilde_i = ra_i w_i^T`` and ``s_i = ra_i y_i^T``.

``objective_value(C, Z, J, sigma, shared, n) -> Q``
    ``sum_i q_i``.

``objective_parts(C, Z, J, sigma, shared, n) -> (Q, grad)``
    ``Q`` plus its gradient ``2 * sum_i ra_i y_i^T`` with respect to X.

Row sums use a summation order fixed by row index and independent of any
thread count, so repeated evaluations are bit-identical.  A failed
factorization of ``G_i`` raises ``ConstraintViolationError`` naming the row.
"""

import os

import numpy as np

from ewtls._kernels import _numpy

try:
    from ewtls._kernels import _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"numpy": _numpy}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def _initial_backend() -> str:
    forced = os.environ.get("EWTLS_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            available = ", ".join(sorted(_BACKENDS))
            raise ImportError(
                f"EWTLS_BACKEND={forced!r} is not available (have: {available})"
            )
        return forced
    return "compiled" if _compiled is not None else "numpy"


_active_name = _initial_backend()
_active = _BACKENDS[_active_name]


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active_name


def set_backend(name: str) -> None:
    """Switch the process-wide kernel backend (used by tests/benchmarks)."""
    global _active, _active_name
    if name not in _BACKENDS:
        available = ", ".join(sorted(_BACKENDS))
        raise ValueError(f"unknown backend {name!r} (have: {available})")
    _active_name = name
    _active = _BACKENDS[name]


def get_backend(name: str):
    return _BACKENDS[name]


def pairwise_sum(terms: np.ndarray) -> np.ndarray:
    """Sum along axis 0 with a fixed balanced binary tree keyed by index.

    The tree depends only on the leading length, never on threading, so
    accumulations are reproducible and permutation of equal halves commutes
    the same way on every call.
    """
    a = np.asarray(terms)
    if a.shape[0] <= 8:
        return a.sum(axis=0)
    h = a.shape[0] // 2
    return pairwise_sum(a[:h]) + pairwise_sum(a[h:])


def row_terms(C, Z, J, sigma, shared, n):
    return _active.row_terms(C, Z, J, sigma, shared, n)


def objective_value(C, Z, J, sigma, shared, n):
    return _active.objective_value(C, Z, J, sigma, shared, n)


def objective_parts(C, Z, J, sigma, shared, n):
    return _active.objective_parts(C, Z, J, sigma, shared, n)
