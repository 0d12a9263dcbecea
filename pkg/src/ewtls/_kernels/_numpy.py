"""NumPy fallback kernel: batched over rows, deterministic reductions."""

import numpy as np

from ewtls.exceptions import ConstraintViolationError


def _psum(a: np.ndarray) -> np.ndarray:
    # fixed balanced tree keyed by row index (mirrors _kernels.pairwise_sum;
    # duplicated here so the backend module stays self-contained)
    if a.shape[0] <= 8:
        return a.sum(axis=0)
    h = a.shape[0] // 2
    return _psum(a[:h]) + _psum(a[h:])


_BLOCK = 128


def _outer_sum(ra: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sum_i outer(ra_i, y_i) with a deterministic, thread-independent order:
    sequential einsum inside fixed 128-row blocks, pairwise across blocks."""
    m = ra.shape[0]
    if m <= _BLOCK:
        return np.einsum("mi,mj->ij", ra, y)
    nblocks = (m + _BLOCK - 1) // _BLOCK
    parts = np.empty((nblocks, ra.shape[1], y.shape[1]))
    for b in range(nblocks):
        sl = slice(b * _BLOCK, min((b + 1) * _BLOCK, m))
        parts[b] = np.einsum("mi,mj->ij", ra[sl], y[sl])
    return _psum(parts)


def _find_bad_row(G: np.ndarray) -> int:
    for i in range(G.shape[0]):
        try:
            np.linalg.cholesky(G[i])
        except np.linalg.LinAlgError:
            return i
    return -1


def _core(C, Z, J, sigma, shared, n, want_rows: bool):
    """Shared computation: returns (q, ra, w, y); ra/y None when not needed.

    want_rows=False skips the gradient pieces (line-search fast path).
    """
    ZJ = Z[J, :]
    d = Z.shape[1]
    w = C @ Z  # (m, d) rows are Z^T c_i
    # positions within J of the error-carrying input columns (< n)
    a_pos = np.flatnonzero(J < n)
    a_cols = J[a_pos]

    if shared:
        V = sigma @ ZJ  # (k, d)
        G = ZJ.T @ V
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise ConstraintViolationError(
                "Z^T S Z is not positive definite for the shared weight "
                "matrix; the rank constraint on Z_J fails"
            ) from None
        z = np.linalg.solve(L, w.T)  # (d, m)
        q = np.einsum("dm,dm->m", z, z)
        if not want_rows:
            return q, None, w, None
        y = np.linalg.solve(L.T, z).T  # (m, d)
        Tn = np.zeros((n, d))
        Tn[a_cols] = V[a_pos]
        ra = C[:, :n] - y @ Tn.T
        return q, ra, w, y

    V = np.matmul(sigma, ZJ)  # (m, k, d)
    G = np.matmul(ZJ.T, V)  # (m, d, d)
    if d == 1:
        g = G[:, 0, 0]
        bad = np.flatnonzero(g <= 0.0)
        if bad.size:
            i = int(bad[0])
            raise ConstraintViolationError(
                f"Z^T S Z is not positive definite at row {i}", row=i
            )
        q = w[:, 0] ** 2 / g
        if not want_rows:
            return q, None, w, None
        y = w / g[:, None]
    else:
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            i = _find_bad_row(G)
            raise ConstraintViolationError(
                f"Z^T S Z is not positive definite at row {i}", row=i
            ) from None
        z = np.linalg.solve(L, w[:, :, None])  # (m, d, 1)
        q = np.einsum("mdo,mdo->m", z, z)
        if not want_rows:
            return q, None, w, None
        y = np.linalg.solve(np.swapaxes(L, 1, 2), z)[:, :, 0]
    ra = C[:, :n].copy()
    if a_pos.size:
        ra[:, a_cols] -= np.einsum("mkd,md->mk", V[:, a_pos, :], y)
    return q, ra, w, y


def row_terms(C, Z, J, sigma, shared, n):
    return _core(C, Z, J, sigma, shared, n, want_rows=True)


def objective_value(C, Z, J, sigma, shared, n):
    q, _, _, _ = _core(C, Z, J, sigma, shared, n, want_rows=False)
    return float(_psum(q))


def objective_parts(C, Z, J, sigma, shared, n):
    q, ra, _, y = _core(C, Z, J, sigma, shared, n, want_rows=True)
    grad = 2.0 * _outer_sum(ra, y)
    return float(_psum(q)), grad
