import numpy as np
import pytest

from ewtls import ConstraintViolationError
from ewtls._kernels import (
    available_backends,
    get_backend,
    pairwise_sum,
)
from ewtls._kernels import _numpy as numpy_backend
from conftest import random_spd

HAVE_COMPILED = "compiled" in available_backends()

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled kernel extension not built"
)


def _instance(rng, m, n, d, shared):
    p = n + d
    k = int(rng.integers(d, p + 1))
    J = np.sort(rng.choice(p, size=k, replace=False)).astype(np.intp)
    C = np.ascontiguousarray(rng.standard_normal((m, p)))
    Z = np.vstack([rng.standard_normal((n, d)), -np.eye(d)])
    base = random_spd(rng, k)
    base = (base + base.T) / 2
    if shared:
        sigma = base
    else:
        scales = 1.0 + rng.uniform(0, 1, m)
        sigma = np.ascontiguousarray(scales[:, None, None] * base)
    return C, Z, J, sigma


class TestPairwiseSum:
    def test_matches_numpy_sum(self):
        rng = np.random.default_rng(1)
        for shape in [(1,), (7,), (64, 3), (1001, 2, 2)]:
            a = rng.standard_normal(shape)
            np.testing.assert_allclose(
                pairwise_sum(a), a.sum(axis=0), rtol=1e-12, atol=1e-12
            )

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal(637)
        assert pairwise_sum(a) == pairwise_sum(a.copy())


class TestNumpyBackend:
    def test_row_terms_against_dense_formulas(self):
        rng = np.random.default_rng(3)
        for shared in (True, False):
            for (m, n, d) in [(17, 2, 1), (9, 3, 2), (5, 2, 3)]:
                C, Z, J, sigma = _instance(rng, m, n, d, shared)
                q, ra, w, y = numpy_backend.row_terms(C, Z, J, sigma, shared, n)
                p = n + d
                for i in range(m):
                    S = np.zeros((p, p))
                    sig_i = sigma if shared else sigma[i]
                    S[np.ix_(J, J)] = sig_i
                    G = Z.T @ S @ Z
                    Ginv = np.linalg.inv(G)
                    wi = Z.T @ C[i]
                    yi = Ginv @ wi
                    qi = wi @ Ginv @ wi
                    Ti = S[:n, :] @ Z
                    rai = C[i, :n] - Ti @ yi
                    assert q[i] == pytest.approx(qi, rel=1e-10)
                    np.testing.assert_allclose(w[i], wi, rtol=1e-12, atol=1e-12)
                    np.testing.assert_allclose(y[i], yi, rtol=1e-9, atol=1e-12)
                    np.testing.assert_allclose(ra[i], rai, rtol=1e-9, atol=1e-12)

    def test_objective_parts_consistent_with_row_terms(self):
        rng = np.random.default_rng(4)
        C, Z, J, sigma = _instance(rng, 33, 3, 2, False)
        q, ra, w, y = numpy_backend.row_terms(C, Z, J, sigma, False, 3)
        Q, grad = numpy_backend.objective_parts(C, Z, J, sigma, False, 3)
        assert Q == pytest.approx(q.sum(), rel=1e-12)
        np.testing.assert_allclose(
            grad, 2.0 * np.einsum("mi,mj->ij", ra, y), rtol=1e-10
        )
        assert numpy_backend.objective_value(C, Z, J, sigma, False, 3) == Q

    def test_q_nonnegative(self):
        rng = np.random.default_rng(5)
        for shared in (True, False):
            C, Z, J, sigma = _instance(rng, 200, 2, 2, shared)
            q, *_ = numpy_backend.row_terms(C, Z, J, sigma, shared, 2)
            assert np.all(q >= 0.0)

    def test_row_error_named(self):
        # feed an invalid (negative-definite) matrix directly to the kernel
        rng = np.random.default_rng(6)
        C, Z, J, sigma = _instance(rng, 10, 2, 2, False)
        sigma = sigma.copy()
        sigma[4] = -np.eye(len(J))
        with pytest.raises(ConstraintViolationError) as err:
            numpy_backend.row_terms(C, Z, J, sigma, False, 2)
        assert err.value.row == 4
        assert "row 4" in str(err.value)

    def test_shared_error(self):
        Z = np.vstack([np.zeros((2, 1)), -np.eye(1)])
        C = np.ascontiguousarray(np.random.default_rng(0).standard_normal((5, 3)))
        J = np.array([0, 1], dtype=np.intp)  # Z_J = 0 -> G = 0
        with pytest.raises(ConstraintViolationError):
            numpy_backend.row_terms(C, Z, J, np.eye(2), True, 2)


@needs_compiled
class TestBackendEquivalence:
    def test_outputs_match(self):
        compiled = get_backend("compiled")
        rng = np.random.default_rng(7)
        cases = [(40, 2, 1, True), (40, 2, 1, False), (25, 3, 2, True),
                 (25, 3, 2, False), (12, 4, 3, False), (1, 1, 1, True)]
        for (m, n, d, shared) in cases:
            C, Z, J, sigma = _instance(rng, m, n, d, shared)
            ref = numpy_backend.row_terms(C, Z, J, sigma, shared, n)
            got = compiled.row_terms(C, Z, J, sigma, shared, n)
            for a, b in zip(ref, got):
                np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-13)
            Qr, Gr = numpy_backend.objective_parts(C, Z, J, sigma, shared, n)
            Qc, Gc = compiled.objective_parts(C, Z, J, sigma, shared, n)
            assert Qc == pytest.approx(Qr, rel=1e-12)
            np.testing.assert_allclose(Gc, Gr, rtol=1e-11, atol=1e-12)
            assert compiled.objective_value(C, Z, J, sigma, shared, n) == \
                pytest.approx(Qr, rel=1e-12)

    def test_compiled_row_error(self):
        compiled = get_backend("compiled")
        rng = np.random.default_rng(8)
        C, Z, J, sigma = _instance(rng, 10, 2, 2, False)
        sigma = sigma.copy()
        sigma[7] = -np.eye(len(J))
        with pytest.raises(ConstraintViolationError) as err:
            compiled.row_terms(C, Z, J, sigma, False, 2)
        assert err.value.row == 7

    def test_repeat_calls_bit_identical(self):
        compiled = get_backend("compiled")
        rng = np.random.default_rng(9)
        C, Z, J, sigma = _instance(rng, 101, 3, 2, False)
        Q1, g1 = compiled.objective_parts(C, Z, J, sigma, False, 3)
        Q2, g2 = compiled.objective_parts(C, Z, J, sigma, False, 3)
        assert Q1 == Q2
        assert np.array_equal(g1, g2)
