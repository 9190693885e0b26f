import numpy as np
import pytest

from epimcar.linalg import (
    NotPositiveDefinite,
    NotSymmetric,
    cholesky_factor,
    is_positive_definite,
    kronecker,
    sample_mvn_precision,
)
from epimcar.model import build_omega, build_w_neighborhood


def random_spd(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + dim * np.eye(dim)


class TestCholeskyFactor:
    def test_identity(self):
        assert np.array_equal(cholesky_factor(np.eye(3)), np.eye(3))

    def test_reconstruction_2x2(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        lower = cholesky_factor(a)
        assert np.max(np.abs(lower @ lower.T - a)) < 1e-12
        assert np.all(np.diag(lower) > 0)
        assert np.allclose(np.triu(lower, 1), 0.0)

    def test_indefinite_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_rejected(self):
        with pytest.raises(NotSymmetric):
            cholesky_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_random_spd_reconstruction(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            dim = rng.integers(1, 9)
            a = random_spd(rng, dim)
            lower = cholesky_factor(a)
            assert np.max(np.abs(lower @ lower.T - a)) < 1e-10


class TestKronecker:
    def test_identity_block_diagonal(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = kronecker(np.eye(2), b)
        expected = np.zeros((4, 4))
        expected[:2, :2] = b
        expected[2:, 2:] = b
        assert np.array_equal(out, expected)

    def test_matches_double_loop_definition(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = kronecker(a, b)
        oracle = np.zeros((4, 4))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    for l in range(2):
                        oracle[i * 2 + k, j * 2 + l] = a[i, j] * b[k, l]
        assert np.array_equal(out, oracle)

    def test_dimension_contract(self):
        rng = np.random.default_rng(2)
        out = kronecker(rng.standard_normal((12, 12)), rng.standard_normal((5, 5)))
        assert out.shape == (60, 60)

    def test_bilinearity_in_scalar(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((2, 4))
        assert np.allclose(kronecker(2.5 * a, b), 2.5 * kronecker(a, b))


class TestSampleMvnPrecision:
    def test_identity_moments(self):
        rng = np.random.default_rng(4)
        draws = np.array(
            [sample_mvn_precision(np.zeros(2), np.eye(2), rng) for _ in range(50_000)]
        )
        assert np.max(np.abs(draws.mean(axis=0))) < 0.02
        assert np.max(np.abs(np.cov(draws.T) - np.eye(2))) < 0.03

    def test_diagonal_precision_variances(self):
        rng = np.random.default_rng(5)
        precision = np.diag([2.0, 2.0])
        draws = np.array(
            [sample_mvn_precision(np.zeros(2), precision, rng) for _ in range(50_000)]
        )
        assert np.max(np.abs(draws.var(axis=0, ddof=1) - 0.5)) < 0.02

    def test_deterministic_for_fixed_seed(self):
        precision = np.array([[2.0, 0.3], [0.3, 1.0]])
        mean = np.array([1.0, -2.0])
        a = [
            sample_mvn_precision(mean, precision, np.random.default_rng(42))
            for _ in range(3)
        ]
        b = [
            sample_mvn_precision(mean, precision, np.random.default_rng(42))
            for _ in range(3)
        ]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_not_positive_definite_propagates(self):
        rng = np.random.default_rng(6)
        with pytest.raises(NotPositiveDefinite):
            sample_mvn_precision(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), rng)

    def test_empirical_covariance_bound(self):
        rng = np.random.default_rng(7)
        precision = np.array([[2.0, 0.5], [0.5, 1.5]])
        cov = np.linalg.inv(precision)
        n = 50_000
        draws = np.array([sample_mvn_precision(np.zeros(2), precision, rng) for _ in range(n)])
        bound = 5.0 * np.sqrt(1.0 / n) * np.max(np.diag(cov))
        assert np.max(np.abs(np.cov(draws.T) - cov)) < bound


class TestIsPositiveDefinite:
    def test_identity(self):
        assert is_positive_definite(np.eye(4))

    def test_negative_eigenvalue(self):
        assert not is_positive_definite(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_neighborhood_omega(self):
        omega = build_omega(build_w_neighborhood(3, True), 0.5)
        assert is_positive_definite(omega)
        assert np.all(np.linalg.eigvalsh(omega) > 0)

    def test_asymmetric_is_an_error(self):
        with pytest.raises(NotSymmetric):
            is_positive_definite(np.array([[1.0, 0.2], [0.0, 1.0]]))

    def test_agrees_with_eigenvalue_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            dim = rng.integers(1, 7)
            sym = rng.standard_normal((dim, dim))
            sym = (sym + sym.T) / 2 + rng.normal(scale=1.0) * np.eye(dim)
            oracle = bool(np.min(np.linalg.eigvalsh(sym)) > 1e-12)
            assert is_positive_definite(sym) == oracle
