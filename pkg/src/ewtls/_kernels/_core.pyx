# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-row kernel: one pass over the rows, small dense factorizations
unrolled in C.  Semantics match ewtls._kernels._numpy exactly (see the
backend contract in ewtls/_kernels/__init__.py); accumulation is sequential
by row index and independent of threading."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

from ewtls.exceptions import ConstraintViolationError

cnp.import_array()


cdef int _chol(const double* G, double* L, int d) noexcept nogil:
    """Lower Cholesky factor of a d x d SPD matrix; -1 on nonpositive pivot."""
    cdef int i, j, t
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = G[i * d + j]
            for t in range(j):
                s -= L[i * d + t] * L[j * d + t]
            if i == j:
                if s <= 0.0:
                    return -1
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
    return 0


cdef inline void _forward(const double* L, const double* b, double* z,
                          int d) noexcept nogil:
    cdef int j, t
    cdef double s
    for j in range(d):
        s = b[j]
        for t in range(j):
            s -= L[j * d + t] * z[t]
        z[j] = s / L[j * d + j]


cdef inline void _backward(const double* L, const double* z, double* y,
                           int d) noexcept nogil:
    cdef int j, t
    cdef double s
    for j in range(d - 1, -1, -1):
        s = z[j]
        for t in range(j + 1, d):
            s -= L[t * d + j] * y[t]
        y[j] = s / L[j * d + j]


cdef Py_ssize_t _sweep(const double[:, ::1] C, const double[:, ::1] Z,
                       const Py_ssize_t[::1] J,
                       const double[:, :, ::1] sigma3, bint shared, int n,
                       bint want_rows, bint fused,
                       double[::1] q_out, double[:, ::1] ra_out,
                       double[:, ::1] w_out, double[:, ::1] y_out,
                       double[::1] Q_out, double[:, ::1] grad_out,
                       double[:, ::1] V, double[:, ::1] G, double[:, ::1] L,
                       double[::1] wz, double[::1] z, double[::1] y,
                       double[::1] ra_row) noexcept nogil:
    """Row sweep shared by all entry points; returns the offending row on a
    factorization failure, -1 otherwise."""
    cdef Py_ssize_t m = C.shape[0]
    cdef Py_ssize_t p = C.shape[1]
    cdef Py_ssize_t k = J.shape[0]
    cdef int d = <int> Z.shape[1]
    cdef Py_ssize_t i, r, t, col
    cdef int j, jj
    cdef double s, qi, acc
    cdef double Q = 0.0

    if shared:
        for r in range(k):
            for j in range(d):
                s = 0.0
                for t in range(k):
                    s += sigma3[0, r, t] * Z[J[t], j]
                V[r, j] = s
        for j in range(d):
            for jj in range(d):
                s = 0.0
                for t in range(k):
                    s += Z[J[t], j] * V[t, jj]
                G[j, jj] = s
        if _chol(&G[0, 0], &L[0, 0], d) != 0:
            return 0

    for i in range(m):
        if not shared:
            for r in range(k):
                for j in range(d):
                    s = 0.0
                    for t in range(k):
                        s += sigma3[i, r, t] * Z[J[t], j]
                    V[r, j] = s
            for j in range(d):
                for jj in range(d):
                    s = 0.0
                    for t in range(k):
                        s += Z[J[t], j] * V[t, jj]
                    G[j, jj] = s
            if _chol(&G[0, 0], &L[0, 0], d) != 0:
                return i

        for j in range(d):
            s = 0.0
            for t in range(p):
                s += Z[t, j] * C[i, t]
            wz[j] = s
            if w_out is not None:
                w_out[i, j] = s
        _forward(&L[0, 0], &wz[0], &z[0], d)
        qi = 0.0
        for j in range(d):
            qi += z[j] * z[j]
        if q_out is not None:
            q_out[i] = qi
        Q += qi

        if want_rows:
            _backward(&L[0, 0], &z[0], &y[0], d)
            if y_out is not None:
                for j in range(d):
                    y_out[i, j] = y[j]
            for t in range(n):
                ra_row[t] = C[i, t]
            for r in range(k):
                col = J[r]
                if col < n:
                    acc = 0.0
                    for j in range(d):
                        acc += V[r, j] * y[j]
                    ra_row[col] -= acc
            if ra_out is not None:
                for t in range(n):
                    ra_out[i, t] = ra_row[t]
            if fused:
                for t in range(n):
                    for j in range(d):
                        grad_out[t, j] += 2.0 * ra_row[t] * y[j]

    if Q_out is not None:
        Q_out[0] = Q
    return -1


cdef class _Scratch:
    """Per-call work buffers (thread-safe: each call allocates its own)."""
    cdef object V, G, L, wz, z, y, ra_row

    def __init__(self, Py_ssize_t k, int d, int n):
        self.V = np.empty((k, d))
        self.G = np.empty((d, d))
        self.L = np.empty((d, d))
        self.wz = np.empty(d)
        self.z = np.empty(d)
        self.y = np.empty(d)
        self.ra_row = np.empty(n)


def _prep(C, Z, J, sigma, bint shared):
    Zc = np.ascontiguousarray(Z, dtype=np.float64)
    Jc = np.ascontiguousarray(J, dtype=np.intp)
    Sc = np.ascontiguousarray(sigma, dtype=np.float64)
    if shared:
        Sc = Sc[None, :, :]
    return Zc, Jc, Sc


def _raise_bad(Py_ssize_t row, bint shared):
    if shared:
        raise ConstraintViolationError(
            "Z^T S Z is not positive definite for the shared weight matrix; "
            "the rank constraint on Z_J fails"
        )
    raise ConstraintViolationError(
        f"Z^T S Z is not positive definite at row {row}", row=int(row)
    )


def row_terms(C, Z, J, sigma, bint shared, int n):
    Zc, Jc, Sc = _prep(C, Z, J, sigma, shared)
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Zv = Zc
    cdef const Py_ssize_t[::1] Jv = Jc
    cdef const double[:, :, ::1] Sv = Sc
    cdef Py_ssize_t m = Cv.shape[0]
    cdef int d = <int> Zv.shape[1]
    sc = _Scratch(Jv.shape[0], d, n)

    q = np.empty(m)
    ra = np.empty((m, n))
    w = np.empty((m, d))
    y = np.empty((m, d))

    cdef double[::1] qv = q
    cdef double[:, ::1] rav = ra
    cdef double[:, ::1] wv = w
    cdef double[:, ::1] yv = y
    cdef double[:, ::1] Vv = sc.V
    cdef double[:, ::1] Gv = sc.G
    cdef double[:, ::1] Lv = sc.L
    cdef double[::1] wzv = sc.wz
    cdef double[::1] zv = sc.z
    cdef double[::1] ybv = sc.y
    cdef double[::1] rrv = sc.ra_row
    cdef Py_ssize_t bad

    with nogil:
        bad = _sweep(Cv, Zv, Jv, Sv, shared, n, True, False,
                     qv, rav, wv, yv, None, None,
                     Vv, Gv, Lv, wzv, zv, ybv, rrv)
    if bad >= 0:
        _raise_bad(bad, shared)
    return q, ra, w, y


def objective_value(C, Z, J, sigma, bint shared, int n):
    Zc, Jc, Sc = _prep(C, Z, J, sigma, shared)
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Zv = Zc
    cdef const Py_ssize_t[::1] Jv = Jc
    cdef const double[:, :, ::1] Sv = Sc
    cdef int d = <int> Zv.shape[1]
    sc = _Scratch(Jv.shape[0], d, n)

    Q = np.zeros(1)
    cdef double[::1] Qv = Q
    cdef double[:, ::1] Vv = sc.V
    cdef double[:, ::1] Gv = sc.G
    cdef double[:, ::1] Lv = sc.L
    cdef double[::1] wzv = sc.wz
    cdef double[::1] zv = sc.z
    cdef double[::1] ybv = sc.y
    cdef double[::1] rrv = sc.ra_row
    cdef Py_ssize_t bad

    with nogil:
        bad = _sweep(Cv, Zv, Jv, Sv, shared, n, False, False,
                     None, None, None, None, Qv, None,
                     Vv, Gv, Lv, wzv, zv, ybv, rrv)
    if bad >= 0:
        _raise_bad(bad, shared)
    return float(Q[0])


def objective_parts(C, Z, J, sigma, bint shared, int n):
    Zc, Jc, Sc = _prep(C, Z, J, sigma, shared)
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Zv = Zc
    cdef const Py_ssize_t[::1] Jv = Jc
    cdef const double[:, :, ::1] Sv = Sc
    cdef int d = <int> Zv.shape[1]
    sc = _Scratch(Jv.shape[0], d, n)

    Q = np.zeros(1)
    grad = np.zeros((n, d))
    cdef double[::1] Qv = Q
    cdef double[:, ::1] gv = grad
    cdef double[:, ::1] Vv = sc.V
    cdef double[:, ::1] Gv = sc.G
    cdef double[:, ::1] Lv = sc.L
    cdef double[::1] wzv = sc.wz
    cdef double[::1] zv = sc.z
    cdef double[::1] ybv = sc.y
    cdef double[::1] rrv = sc.ra_row
    cdef Py_ssize_t bad

    with nogil:
        bad = _sweep(Cv, Zv, Jv, Sv, shared, n, True, True,
                     None, None, None, None, Qv, gv,
                     Vv, Gv, Lv, wzv, zv, ybv, rrv)
    if bad >= 0:
        _raise_bad(bad, shared)
    return float(Q[0]), grad
