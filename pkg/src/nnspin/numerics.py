"""Small dense complex-matrix kernels and statistical primitives.

All operators in this package are tiny (4x4 to 8x8 for states, up to
n^2 x n^2 for superoperators), so accuracy is prioritised over speed:
Hermitian exponentials go through an exact eigendecomposition, and the
general exponential defers to scipy's scaling-and-squaring Pade code.
"""

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NumericalFailureError

HERMITIAN_TOL = 1e-12


def is_hermitian(m, tol=HERMITIAN_TOL):
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T)) <= tol


def require_hermitian(m, tol=HERMITIAN_TOL, name="matrix"):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {m.shape}")
    dev = np.max(np.abs(m - m.conj().T))
    if dev > tol:
        raise InvalidInputError(f"{name} is not Hermitian (max |M - M^dag| = {dev:.3e})")
    return m


def is_unitary(u, tol=1e-10):
    u = np.asarray(u)
    return np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol


def dft_matrix(n):
    """Unitary DFT matrix F_jk = exp(-2i pi j k / n) / sqrt(n)."""
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


def expm_hermitian(h, scale=1.0):
    """exp(-i * scale * H) for Hermitian H, via eigendecomposition."""
    h = require_hermitian(h)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * scale * w)) @ v.conj().T


def expm_general(m):
    """exp(M) for an arbitrary square matrix (scaling-and-squaring Pade)."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"expm_general needs a square matrix, got shape {m.shape}")
    return scipy.linalg.expm(m)


def eig_hermitian(h):
    """Ascending eigenvalues and orthonormal eigenvectors of Hermitian H."""
    h = require_hermitian(h)
    w, v = np.linalg.eigh(h)
    return w, v


def gls_solve(design, observations, covariance, max_condition=1e12):
    """Generalized least squares: argmin (y - Xd)^T Sigma^-1 (y - Xd).

    Solved through the Cholesky factor of Sigma (whitening) followed by an
    ordinary least-squares solve, which is stable for the well-conditioned
    kernels used here.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(observations, dtype=float)
    sigma = np.asarray(covariance, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise InvalidInputError("design/observation shapes are inconsistent")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(sigma)
        raise NumericalFailureError(
            f"covariance is not positive definite (cond ~ {cond:.3e})"
        ) from exc
    xw = scipy.linalg.solve_triangular(chol, x, lower=True)
    yw = scipy.linalg.solve_triangular(chol, y, lower=True)
    cond = np.linalg.cond(xw)
    if not np.isfinite(cond) or cond > max_condition:
        raise NumericalFailureError(f"design matrix is rank deficient (cond = {cond:.3e})")
    coeffs, *_ = np.linalg.lstsq(xw, yw, rcond=None)
    return coeffs
