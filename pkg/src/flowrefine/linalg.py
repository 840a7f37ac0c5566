"""Dense linear algebra helpers: Cholesky with jitter policy, Gaussian sampling.

Matrices are plain float64 ``numpy`` arrays. Everything here assumes the
desk-scale dimensions this package targets (d up to a few thousand), so no
sparse or factored representations are used.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream

__all__ = [
    "NotPositiveDefinite",
    "cholesky",
    "cholesky_with_jitter",
    "sample_gaussian",
    "gaussian_log_density",
    "gaussian_entropy",
]


class NotPositiveDefinite(ValueError):
    """Raised when a matrix that must be SPD has a non-positive pivot."""


def cholesky(a: np.ndarray, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Parameters
    ----------
    a : (d, d) symmetric positive-definite matrix.
    sym_tol : maximum allowed relative asymmetry.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is non-positive. Callers holding a near-singular Hessian
        should retry through :func:`cholesky_with_jitter`.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - a.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    try:
        return np.linalg.cholesky((a + a.T) / 2.0)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefinite(str(err)) from None


def cholesky_with_jitter(a: np.ndarray, max_escalations: int = 3) -> np.ndarray:
    """Cholesky with the standard retry policy for degenerate Hessians.

    On failure, adds ``1e-6 * mean(diag(a))`` to the diagonal and escalates
    the jitter tenfold up to `max_escalations` times before giving up.
    """
    try:
        return cholesky(a)
    except NotPositiveDefinite:
        pass
    base = 1e-6 * float(np.mean(np.diag(a)))
    if base <= 0:
        base = 1e-6
    jitter = base
    for _ in range(max_escalations):
        try:
            return cholesky(a + jitter * np.eye(a.shape[0]))
        except NotPositiveDefinite:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"matrix not positive definite after jitter escalation up to {jitter:g}"
    )


def sample_gaussian(
    mean: np.ndarray, chol_factor: np.ndarray, n: int, rng: RngStream
) -> np.ndarray:
    """Draw ``n`` samples from N(mean, L @ L.T) as an (n, d) array.

    Rows are ``mean + L @ z`` with ``z`` i.i.d. standard normal, so a fixed
    stream yields bit-identical output.
    """
    mean = np.asarray(mean, dtype=np.float64)
    chol_factor = np.asarray(chol_factor, dtype=np.float64)
    d = mean.shape[0]
    if chol_factor.shape != (d, d):
        raise ValueError(
            f"chol_factor shape {chol_factor.shape} does not match mean length {d}"
        )
    if n == 0:
        return np.empty((0, d))
    z = rng.standard_normal(n, d)
    return mean + z @ chol_factor.T


def gaussian_log_density(
    x: np.ndarray, mean: np.ndarray, chol_factor: np.ndarray
) -> np.ndarray:
    """log N(x | mean, L L^T) for a single point (d,) or a batch (n, d)."""
    from scipy.linalg import solve_triangular

    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = mean.shape[0]
    delta = x - mean
    w = solve_triangular(chol_factor, delta.T, lower=True)
    maha = np.sum(w * w, axis=0)
    log_det = np.sum(np.log(np.diag(chol_factor)))
    out = -0.5 * d * np.log(2.0 * np.pi) - log_det - 0.5 * maha
    return float(out[0]) if single else out


def gaussian_entropy(chol_factor: np.ndarray) -> float:
    """Entropy of N(mu, L L^T): d/2 (1 + log 2 pi) + sum log diag L."""
    d = chol_factor.shape[0]
    return 0.5 * d * (1.0 + np.log(2.0 * np.pi)) + float(
        np.sum(np.log(np.diag(chol_factor)))
    )
