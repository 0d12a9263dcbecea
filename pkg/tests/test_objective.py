import numpy as np
import pytest

from ewtls import (
    ConstraintViolationError,
    ErrorStructure,
    ModelInputError,
    ModelWarning,
    ObjectiveContext,
    ProblemData,
    Q_gradient,
    Q_value,
    TrueModel,
    embed_full_cov,
    expected_jacobian_action,
    f_prime_action,
    make_Z,
    q_value,
    s_tilde,
    s_value,
)
from ewtls.objective import estimating_equation, objective_with_gradient
from ewtls.validation import fd_gradient, make_random_instance
from conftest import random_spd


def _full_cov(rng, p):
    S = random_spd(rng, p)
    return embed_full_cov((S + S.T) / 2, tuple(range(p)), p)


class TestQValue:
    def test_hand_case(self):
        # n=1, d=1, X=0 so Z=(0,-1)^T, S=I2, c=(1,2): G=1, Z^T c=-2 -> q=4
        Z = make_Z(np.zeros((1, 1)))
        S = embed_full_cov(np.eye(2), (0, 1), 2)
        assert q_value(np.array([1.0, 2.0]), S, Z) == pytest.approx(4.0, abs=1e-14)

    def test_kernel_row_gives_zero(self):
        rng = np.random.default_rng(1)
        tm = TrueModel(X0=rng.standard_normal((3, 2)),
                       A0=rng.standard_normal((10, 3)))
        S = _full_cov(rng, 5)
        Z0 = tm.Z0
        for i in range(10):
            assert q_value(tm.C0[i], S, Z0) <= 1e-24

    def test_dense_inverse_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, d = 3, 2
            Z = make_Z(rng.standard_normal((n, d)))
            S = _full_cov(rng, n + d)
            c = rng.standard_normal(n + d)
            G = Z.Z.T @ S.S @ Z.Z
            ref = c @ Z.Z @ np.linalg.inv(G) @ Z.Z.T @ c
            assert q_value(c, S, Z) == pytest.approx(ref, rel=1e-10)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            Z = make_Z(rng.standard_normal((2, 2)))
            S = _full_cov(rng, 4)
            c = rng.standard_normal(4) * 10.0 ** float(rng.integers(-8, 2))
            assert q_value(c, S, Z) >= 0.0

    def test_constraint_violation(self):
        # errors only in input columns and X = 0 make Z_J^T Sigma Z_J singular
        Z = make_Z(np.zeros((2, 1)))
        S = embed_full_cov(np.eye(2), (0, 1), 3)
        with pytest.raises(ConstraintViolationError):
            q_value(np.ones(3), S, Z)


def _noisy_context(rng, m=12, n=3, d=2, shared=True):
    ctx, X = make_random_instance(rng, m, n, d, shared=shared)
    return ctx, X


class TestQTotal:
    def test_zero_noise_is_zero(self):
        rng = np.random.default_rng(4)
        tm = TrueModel(X0=rng.standard_normal((2, 1)),
                       A0=rng.standard_normal((30, 2)))
        data = ProblemData(C=tm.C0, n=2, d=1)
        errors = ErrorStructure.common((0, 1, 2), random_spd(rng, 3), 30)
        ctx = ObjectiveContext(data=data, errors=errors)
        assert Q_value(ctx, tm.X0) <= 1e-20

    def test_single_row_reduces_to_q_value(self):
        rng = np.random.default_rng(5)
        sigma = random_spd(rng, 3)
        errors = ErrorStructure.common((0, 1, 2), sigma, 1)
        C = rng.standard_normal((1, 3))
        with pytest.warns(ModelWarning):  # m=1 <= n is intentional here
            data = ProblemData(C=C, n=2, d=1)
        ctx = ObjectiveContext(data, errors)
        X = rng.standard_normal((2, 1))
        S = embed_full_cov(errors.sigma, (0, 1, 2), 3)
        assert Q_value(ctx, X) == pytest.approx(
            q_value(C[0], S, make_Z(X)), rel=1e-12
        )

    def test_classical_tls_objective_oracle(self):
        # with identity weights, Q(X) = sum ||(a^T X - b^T)(X^T X + I)^{-1/2}||^2
        from scipy.linalg import sqrtm

        rng = np.random.default_rng(6)
        m, n, d = 25, 3, 2
        C = rng.standard_normal((m, n + d))
        data = ProblemData(C=C, n=n, d=d)
        errors = ErrorStructure.common(tuple(range(n + d)), np.eye(n + d), m)
        ctx = ObjectiveContext(data=data, errors=errors)
        for _ in range(5):
            X = rng.standard_normal((n, d))
            W = np.linalg.inv(np.real(sqrtm(X.T @ X + np.eye(d))))
            resid = (data.A @ X - data.B) @ W
            ref = float(np.sum(resid**2))
            assert Q_value(ctx, X) == pytest.approx(ref, rel=1e-10)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(7)
        ctx, X = _noisy_context(rng, m=40, shared=False)
        perm = rng.permutation(40)
        data_p = ProblemData(C=ctx.data.C[perm], n=ctx.n, d=ctx.d)
        errors_p = ErrorStructure.per_row(ctx.errors.J, ctx.errors.sigma[perm])
        ctx_p = ObjectiveContext(data=data_p, errors=errors_p)
        q1, q2 = Q_value(ctx, X), Q_value(ctx_p, X)
        assert q2 == pytest.approx(q1, rel=1e-13)

    def test_mismatched_m(self):
        rng = np.random.default_rng(8)
        errors = ErrorStructure.common((0, 1), np.eye(2), 5)
        with pytest.raises(ModelInputError):
            ObjectiveContext(
                ProblemData(C=rng.standard_normal((4, 2)), n=1, d=1), errors
            )

    def test_cached_full_cov_matches_embedding(self):
        rng = np.random.default_rng(9)
        ctx, _ = _noisy_context(rng, m=6, shared=False)
        for i in range(6):
            ref = embed_full_cov(ctx.errors.sigma_for(i), ctx.errors.J, ctx.p)
            np.testing.assert_array_equal(ctx.full_cov(i).S, ref.S)


class TestEstimatingFunction:
    def test_zero_c_gives_zero(self):
        rng = np.random.default_rng(10)
        Z = make_Z(rng.standard_normal((3, 2)))
        S = _full_cov(rng, 5)
        zero = np.zeros(3), np.zeros(2)
        np.testing.assert_array_equal(s_tilde(*zero, S, Z), np.zeros((3, 2)))
        np.testing.assert_array_equal(s_value(*zero, S, Z), np.zeros((3, 2)))

    def test_noiseless_row_annihilated(self):
        rng = np.random.default_rng(11)
        tm = TrueModel(X0=rng.standard_normal((3, 2)),
                       A0=rng.standard_normal((8, 3)))
        S = _full_cov(rng, 5)
        Z0 = tm.Z0
        for i in range(8):
            st = s_tilde(tm.A0[i], tm.B0[i], S, Z0)
            assert np.abs(st).max() <= 1e-13 * max(1, np.abs(tm.C0).max()) ** 2

    def test_s_equals_stilde_times_inverse(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            n, d = 3, 2
            Z = make_Z(rng.standard_normal((n, d)))
            S = _full_cov(rng, n + d)
            a, b = rng.standard_normal(n), rng.standard_normal(d)
            G = Z.Z.T @ S.S @ Z.Z
            ref = s_tilde(a, b, S, Z) @ np.linalg.inv(G)
            np.testing.assert_allclose(s_value(a, b, S, Z), ref, rtol=1e-10,
                                       atol=1e-14)

    def test_half_q_derivative_identity(self):
        # 0.5 dq/dX = stilde (Z^T S Z)^{-1} = s, checked by central differences
        rng = np.random.default_rng(13)
        for _ in range(8):
            n, d = 2, 2
            S = _full_cov(rng, n + d)
            a, b = rng.standard_normal(n), rng.standard_normal(d)
            c = np.concatenate([a, b])
            X = rng.standard_normal((n, d))
            s = s_value(a, b, S, make_Z(X))
            fd = np.zeros_like(X)
            for i in range(n):
                for j in range(d):
                    h = 1e-6 * (1.0 + abs(X[i, j]))
                    Xp, Xm = X.copy(), X.copy()
                    Xp[i, j] += h
                    Xm[i, j] -= h
                    fd[i, j] = (q_value(c, S, make_Z(Xp))
                                - q_value(c, S, make_Z(Xm))) / (4.0 * h)
            denom = max(np.linalg.norm(fd), np.linalg.norm(s), 1e-12)
            assert np.linalg.norm(s - fd) / denom <= 1e-6


class TestGradient:
    def test_zero_noise_gradient_vanishes(self):
        rng = np.random.default_rng(14)
        tm = TrueModel(X0=rng.standard_normal((2, 1)),
                       A0=rng.standard_normal((20, 2)))
        data = ProblemData(C=tm.C0, n=2, d=1)
        errors = ErrorStructure.common((0, 1, 2), np.eye(3), 20)
        ctx = ObjectiveContext(data=data, errors=errors)
        grad = Q_gradient(ctx, tm.X0)
        assert np.abs(grad).max() <= 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        for _ in range(6):
            ctx, X = make_random_instance(rng, m=15, n=3, d=2)
            _, grad = objective_with_gradient(ctx, X)
            ref = fd_gradient(ctx, X)
            denom = max(np.linalg.norm(ref), np.linalg.norm(grad), 1e-12)
            assert np.linalg.norm(grad - ref) / denom <= 1e-6

    def test_gradient_is_twice_row_sum(self):
        rng = np.random.default_rng(16)
        ctx, X = make_random_instance(rng, m=9, n=2, d=2, full_J=True)
        Z = make_Z(X)
        total = np.zeros((2, 2))
        for i in range(9):
            total += s_value(ctx.data.A[i], ctx.data.B[i], ctx.full_cov(i), Z)
        np.testing.assert_allclose(Q_gradient(ctx, X), 2.0 * total,
                                   rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(estimating_equation(ctx, X), total,
                                   rtol=1e-9, atol=1e-12)


class TestFPrimeAction:
    def test_zero_direction(self):
        rng = np.random.default_rng(17)
        Z = make_Z(rng.standard_normal((3, 2)))
        S = _full_cov(rng, 5)
        np.testing.assert_array_equal(
            f_prime_action(Z, S, np.zeros((3, 2))), np.zeros((5, 2))
        )

    def test_linearity(self):
        rng = np.random.default_rng(18)
        Z = make_Z(rng.standard_normal((3, 2)))
        S = _full_cov(rng, 5)
        H1, H2 = rng.standard_normal((2, 3, 2))
        lhs = f_prime_action(Z, S, H1 + H2)
        rhs = f_prime_action(Z, S, H1) + f_prime_action(Z, S, H2)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_directional_finite_difference(self):
        rng = np.random.default_rng(19)
        for _ in range(6):
            n, d = 3, 2
            X = rng.standard_normal((n, d))
            H = rng.standard_normal((n, d))
            S = _full_cov(rng, n + d)
            action = f_prime_action(make_Z(X), S, H)

            def f_of(Xk):
                Zk = make_Z(Xk).Z
                return Zk @ np.linalg.inv(Zk.T @ S.S @ Zk)

            t = 1e-6
            fd = (f_of(X + t * H) - f_of(X - t * H)) / (2.0 * t)
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(action - fd) / denom <= 1e-5


class TestExpectedJacobianAction:
    def test_zero_inputs(self):
        rng = np.random.default_rng(20)
        Z0 = make_Z(rng.standard_normal((3, 2)))
        S = _full_cov(rng, 5)
        H = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(
            expected_jacobian_action(np.zeros(3), S, Z0, H), np.zeros((3, 2))
        )
        np.testing.assert_array_equal(
            expected_jacobian_action(rng.standard_normal(3), S, Z0,
                                     np.zeros((3, 2))),
            np.zeros((3, 2)),
        )

    def test_matches_dense_formula(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            n, d = 3, 2
            Z0 = make_Z(rng.standard_normal((n, d)))
            S = _full_cov(rng, n + d)
            a0 = rng.standard_normal(n)
            H = rng.standard_normal((n, d))
            G = Z0.Z.T @ S.S @ Z0.Z
            ref = np.outer(a0, a0) @ H @ np.linalg.inv(G)
            np.testing.assert_allclose(
                expected_jacobian_action(a0, S, Z0, H), ref,
                rtol=1e-10, atol=1e-13,
            )
