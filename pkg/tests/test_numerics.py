"""Linear-algebra layer against independent oracles.

The oracles here are deliberately different algorithms from the
implementations: a truncated power series for the matrix exponential, a
Kronecker-vectorized linear solve for the Lyapunov equation, and an
explicit-inverse density for the Gaussian log pdf.
"""

import numpy as np
import pytest

from depmatern import numerics
from depmatern.errors import NotPositiveDefinite, ValidationError


def expm_series(q: np.ndarray, t: float, terms: int = 60) -> np.ndarray:
    out = np.eye(q.shape[0])
    term = np.eye(q.shape[0])
    for k in range(1, terms):
        term = term @ (t * q) / k
        out = out + term
    return out


def lyapunov_kron(q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve (Q (x) I + I (x) Q) vec(S) = -vec(D) directly."""
    n = q.shape[0]
    lhs = np.kron(q, np.eye(n)) + np.kron(np.eye(n), q)
    return np.linalg.solve(lhs, -d.ravel()).reshape(n, n)


def logpdf_inverse(y, mean, cov) -> float:
    diff = np.asarray(y, dtype=float) - np.asarray(mean, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    quad = diff @ np.linalg.inv(cov) @ diff
    return -0.5 * (diff.size * np.log(2 * np.pi) + logdet + quad)


def matern32_companion(ell: float) -> np.ndarray:
    s3 = np.sqrt(3.0)
    return np.array([[0.0, 1.0], [-3.0 / ell**2, -2.0 * s3 / ell]])


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(numerics.cholesky(np.eye(3)), np.eye(3))

    def test_frozen_2x2(self):
        factor = numerics.cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
        assert np.allclose(factor, [[2.0, 0.0], [1.0, 2.0]], atol=1e-14)

    def test_random_psd_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = rng.normal(size=(6, 6))
            a = m @ m.T + np.eye(6)
            factor = numerics.cholesky(a)
            assert np.allclose(np.triu(factor, 1), 0.0)
            assert np.max(np.abs(factor @ factor.T - a)) < 1e-10

    def test_jitter_rescues_singular_psd(self):
        v = np.array([1.0, 2.0, 3.0])
        a = np.outer(v, v)  # rank 1, plain Cholesky fails
        factor = numerics.cholesky(a)
        assert np.max(np.abs(factor @ factor.T - a)) < 1e-8

    def test_asymmetric_input_symmetrized(self):
        a = np.array([[4.0, 2.0 + 1e-12], [2.0 - 1e-12, 5.0]])
        factor = numerics.cholesky(a)
        assert np.allclose(factor, [[2.0, 0.0], [1.0, 2.0]], atol=1e-9)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            numerics.cholesky(np.diag([1.0, -1.0]))

    def test_validation(self):
        with pytest.raises(ValidationError):
            numerics.cholesky(np.ones((2, 3)))
        with pytest.raises(ValidationError):
            numerics.cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestMatrixExponential:
    def test_zero_time_is_identity(self):
        q = np.array([[0.0, 1.0], [-3.0, -2.0 * np.sqrt(3.0)]])
        assert np.allclose(numerics.matrix_exponential(q, 0.0), np.eye(2), atol=1e-15)

    def test_scalar_block(self):
        out = numerics.matrix_exponential(np.array([[-2.0]]), 0.7)
        assert np.allclose(out, np.exp(-1.4))

    def test_repeated_root_companion_closed_form(self):
        # exp(t Q) for the repeated-root block: exp(-s3 t/ell) *
        # [[1 + s3 t/ell, t], [-3 t/ell^2, 1 - s3 t/ell]]
        for ell, t in [(1.0, 1.0), (0.3, 0.05), (5.0, 2.0)]:
            s3 = np.sqrt(3.0)
            out = numerics.matrix_exponential(matern32_companion(ell), t)
            expected = np.exp(-t * s3 / ell) * np.array(
                [[1 + t * s3 / ell, t], [-3 * t / ell**2, 1 - t * s3 / ell]]
            )
            assert np.max(np.abs(out - expected)) < 1e-12

    def test_frozen_unit_case(self):
        out = numerics.matrix_exponential(matern32_companion(1.0), 1.0)
        expected = np.array([[0.4833577245965077, 0.17692120631776423],
                             [-0.5307636189532927, -0.12951531196097923]])
        # recompute the frozen numbers from the closed form
        s3 = np.sqrt(3.0)
        assert abs(expected[0, 0] - np.exp(-s3) * (1 + s3)) < 1e-15
        assert abs(expected[0, 1] - np.exp(-s3)) < 1e-15
        assert abs(expected[1, 0] - np.exp(-s3) * (-3.0)) < 1e-15
        assert abs(expected[1, 1] - np.exp(-s3) * (1 - s3)) < 1e-15
        assert np.max(np.abs(out - expected)) < 1e-14

    def test_against_series_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            m = rng.normal(size=(3, 3))
            q = m - (np.abs(np.linalg.eigvals(m).real).max() + 1.0) * np.eye(3)
            t = rng.uniform(0.05, 1.5)
            out = numerics.matrix_exponential(q, t)
            assert np.max(np.abs(out - expm_series(q, t))) < 1e-9

    def test_companion_path_matches_series(self):
        for ell in (0.5, 1.0, 3.0):
            q = matern32_companion(ell)
            out = numerics.matrix_exponential(q, 0.4)
            assert np.max(np.abs(out - expm_series(q, 0.4))) < 1e-10

    def test_distinct_root_companion_uses_general_path(self):
        q = np.array([[0.0, 1.0], [-2.0, -3.0]])  # eigenvalues -1, -2
        out = numerics.matrix_exponential(q, 0.6)
        assert np.max(np.abs(out - expm_series(q, 0.6))) < 1e-10

    def test_semigroup(self):
        q = matern32_companion(0.8)
        a = numerics.matrix_exponential(q, 0.3)
        b = numerics.matrix_exponential(q, 0.45)
        ab = numerics.matrix_exponential(q, 0.75)
        assert np.max(np.abs(a @ b - ab)) < 1e-12

    def test_validation(self):
        with pytest.raises(ValidationError):
            numerics.matrix_exponential(np.eye(2), np.inf)
        with pytest.raises(ValidationError):
            numerics.matrix_exponential(np.ones((2, 3)), 1.0)


class TestSolveLyapunov:
    def test_scalar(self):
        s = numerics.solve_lyapunov(np.array([[-2.0]]), np.array([[4.0]]))
        assert np.allclose(s, [[1.0]])

    def test_univariate_matern32_stationary(self):
        # ell = 2 with squared diffusion (2 sqrt(3)/2)^3 gives diag(2, 6/4)
        ell = 2.0
        q = matern32_companion(ell)
        d = np.zeros((2, 2))
        d[1, 1] = (2.0 * np.sqrt(3.0) / ell) ** 3
        s = numerics.solve_lyapunov(q, d)
        assert np.max(np.abs(s - np.diag([2.0, 6.0 / ell**2]))) < 1e-12

    def test_against_kronecker_oracle(self):
        rng = np.random.default_rng(2)
        for dim in (2, 3, 4):
            for _ in range(5):
                m = rng.normal(size=(dim, dim))
                q = m - (np.abs(np.linalg.eigvals(m).real).max() + 0.5) * np.eye(dim)
                w = rng.normal(size=(dim, dim))
                d = w @ w.T
                s = numerics.solve_lyapunov(q, d)
                assert np.max(np.abs(s - lyapunov_kron(q, d))) < 1e-9
                residual = q @ s + s @ q.T + d
                assert np.max(np.abs(residual)) < 1e-9

    def test_solution_psd_for_psd_d(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = rng.normal(size=(4, 4))
            q = m - (np.abs(np.linalg.eigvals(m).real).max() + 0.5) * np.eye(4)
            w = rng.normal(size=(4, 2))
            s = numerics.solve_lyapunov(q, w @ w.T)
            assert np.linalg.eigvalsh(s).min() > -1e-10

    def test_unstable_q_rejected(self):
        with pytest.raises(ValidationError):
            numerics.solve_lyapunov(np.array([[1.0]]), np.array([[1.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            numerics.solve_lyapunov(-np.eye(2), np.eye(3))


class TestMvnLogpdf:
    def test_standard_normal(self):
        val = numerics.mvn_logpdf(np.array([0.0]), np.array([0.0]), np.eye(1))
        assert abs(val - (-0.5 * np.log(2 * np.pi))) < 1e-14

    def test_frozen_scalar_case(self):
        # y = 1, mean 0, variance 2: -(log(4 pi) + 1/2)/2
        val = numerics.mvn_logpdf([1.0], [0.0], [[2.0]])
        assert abs(val - (-0.5 * (np.log(4 * np.pi) + 0.5))) < 1e-14
        assert abs(val - (-1.5155121234846454)) < 1e-12

    def test_against_inverse_oracle(self):
        rng = np.random.default_rng(4)
        for dim in (1, 2, 5):
            for _ in range(5):
                m = rng.normal(size=(dim, dim))
                cov = m @ m.T + np.eye(dim)
                y = rng.normal(size=dim)
                mean = rng.normal(size=dim)
                val = numerics.mvn_logpdf(y, mean, cov)
                assert abs(val - logpdf_inverse(y, mean, cov)) < 1e-10

    def test_validation(self):
        with pytest.raises(ValidationError):
            numerics.mvn_logpdf([1.0, 2.0], [0.0], np.eye(2))
        with pytest.raises(ValidationError):
            numerics.mvn_logpdf([1.0], [0.0], np.eye(2))
        with pytest.raises(ValidationError):
            numerics.mvn_logpdf([np.nan], [0.0], np.eye(1))
