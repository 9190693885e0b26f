"""Dense linear-algebra primitives for precision-parameterised Gaussian models.

Everything here operates on small dense matrices (at most a few hundred rows).
Cholesky factorisation doubles as the positive-definiteness gate for precision
and covariance proposals, so it applies an explicit pivot floor instead of
deferring to LAPACK's failure mode.
"""

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "NotSymmetric",
    "NotPositiveDefinite",
    "SYMMETRY_TOL",
    "PIVOT_FLOOR",
    "cholesky_factor",
    "kronecker",
    "sample_mvn_precision",
    "is_positive_definite",
]

# Tolerances sized for double precision at the dimensions used by the model
# (nothing above a few hundred rows).
SYMMETRY_TOL = 1e-10
PIVOT_FLOOR = 1e-12


class NotSymmetric(ValueError):
    """Matrix expected to be symmetric is not (beyond tolerance)."""


class NotPositiveDefinite(ValueError):
    """Cholesky pivot fell at or below the floor; matrix is not (numerically) SPD."""


def _as_square_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise NotSymmetric(f"matrix is asymmetric beyond tolerance {tol:g}")
    return a


def cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor L with ``L @ L.T == a`` and strictly positive diagonal.

    Parameters
    ----------
    a : ndarray, shape (n, n)
        Symmetric (within ``SYMMETRY_TOL``) positive definite matrix.

    Raises
    ------
    NotSymmetric
        If ``a`` is not square or not symmetric within tolerance.
    NotPositiveDefinite
        If any pivot is <= ``PIVOT_FLOOR``. This is the signal that a
        precision/covariance proposal is invalid.
    """
    a = _as_square_symmetric(a)
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= PIVOT_FLOOR:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at column {j} <= {PIVOT_FLOOR:g}")
        ljj = np.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / ljj
    return lower


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) of the result equals ``a[i, j] * b``."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def sample_mvn_precision(
    mean: np.ndarray, precision: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw from MVN(mean, precision^{-1}) without forming the covariance.

    Factors ``precision = L L^T`` and returns ``mean + L^{-T} z`` with z a
    standard normal vector, which has exactly the requested distribution.

    Raises
    ------
    NotPositiveDefinite
        Propagated from the factorisation when ``precision`` is not SPD.
    """
    mean = np.asarray(mean, dtype=float)
    lower = cholesky_factor(precision)
    z = rng.standard_normal(lower.shape[0])
    return mean + solve_triangular(lower, z, lower=True, trans="T")


def is_positive_definite(a: np.ndarray) -> bool:
    """True iff Cholesky factorisation succeeds with the module's pivot floor.

    Raises ``NotSymmetric`` for inputs asymmetric beyond tolerance; asymmetry
    is an error, not a "not positive definite" answer.
    """
    a = _as_square_symmetric(a)
    try:
        cholesky_factor(a)
    except NotPositiveDefinite:
        return False
    return True
