"""Predictive-distribution approximations and the machinery to compare them.

Covers MC integration over parameter samples, the linearized output
distribution, the binary probit approximation, the multi-class probit
approximation (which deliberately ignores off-diagonal output covariance),
and the trapezoid quadrature of the logistic-Gaussian integral

    I(m, s) = integral sigma(f) N(f | m, s^2) df

that serves as the gold standard for the error studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .laplace import GaussianPosterior
from .models import Likelihood, LinearModel, softmax
from .rng import RngStream

__all__ = [
    "PredictiveMatrix",
    "OutputGaussian",
    "mc_predictive",
    "mc_predictive_regression",
    "linearized_output",
    "linearized_mc_predictive",
    "mpa_predictive",
    "probit_binary",
    "mpa",
    "logistic_gaussian_quadrature",
    "mc_error_grid",
    "mc_error_scaling",
]

_ROW_SUM_TOL = 1e-9
_CHUNK_ENTRIES = 20_000_000  # bound on S*N*C per forward batch


@dataclass
class PredictiveMatrix:
    """(N, C) class probabilities plus provenance of the approximation."""

    probs: np.ndarray
    method: str
    n_samples: int | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ValueError("probs must be (N, C)")
        if np.any(self.probs < -1e-12) or np.any(self.probs > 1 + 1e-12):
            raise ValueError("probabilities out of [0, 1]")
        rows = self.probs.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > _ROW_SUM_TOL:
            raise ValueError("rows must sum to 1")

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)


@dataclass
class OutputGaussian:
    """Gaussian over the network outputs at one input: N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        c = self.mean.size
        if self.cov.shape != (c, c):
            raise ValueError("cov must be (C, C)")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-8 * max(
            1.0, float(np.max(np.abs(self.cov)))
        ):
            raise ValueError("cov must be symmetric")


def _class_probs(likelihood: Likelihood, f: np.ndarray) -> np.ndarray:
    """Per-sample class probabilities from raw outputs, shape (..., N, C)."""
    if likelihood.kind == "categorical":
        return softmax(f)
    if likelihood.kind == "bernoulli":
        p1 = expit(f[..., 0])
        return np.stack([1.0 - p1, p1], axis=-1)
    raise ValueError("class probabilities are undefined for a Gaussian likelihood")


def mc_predictive(
    samples: np.ndarray, model, likelihood: Likelihood, X: np.ndarray
) -> PredictiveMatrix:
    """Average the per-sample class probabilities over parameter samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise ValueError("need at least one parameter sample")
    X = np.atleast_2d(X)
    n, c_out = X.shape[0], model.n_outputs
    n_classes = 2 if likelihood.kind == "bernoulli" else c_out
    total = np.zeros((n, n_classes))
    chunk = max(1, _CHUNK_ENTRIES // max(1, n * c_out))
    if isinstance(model, LinearModel):
        for start in range(0, samples.shape[0], chunk):
            f = model.forward_batch(samples[start : start + chunk], X)
            total += _class_probs(likelihood, f).sum(axis=0)
    else:
        for theta in samples:
            total += _class_probs(likelihood, model.forward(theta, X))
    probs = total / samples.shape[0]
    return PredictiveMatrix(probs, method="mc", n_samples=samples.shape[0])


def mc_predictive_regression(
    samples: np.ndarray, model, likelihood: Likelihood, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mixture mean and variance (epistemic + noise) of the regression predictive."""
    if likelihood.kind != "gaussian":
        raise ValueError("regression predictive needs a Gaussian likelihood")
    samples = np.atleast_2d(samples)
    X = np.atleast_2d(X)
    if isinstance(model, LinearModel):
        f = model.forward_batch(samples, X)[:, :, 0]
    else:
        f = np.stack([model.forward(t, X)[:, 0] for t in samples])
    mean = f.mean(axis=0)
    var = f.var(axis=0) + likelihood.sigma_noise**2
    return mean, var


def linearized_output(
    posterior: GaussianPosterior, model, x: np.ndarray
) -> OutputGaussian:
    """First-order output distribution N(f_mu(x), J Sigma J^T).

    Exact (not a Taylor approximation) for models linear in the parameters.
    """
    if posterior.dim != model.dim:
        raise ValueError("posterior dimension does not match the model")
    x = np.atleast_2d(x)
    if x.shape[0] != 1:
        raise ValueError("one input point at a time")
    jac = model.output_jacobian(posterior.mean, x)
    f_mu = model.forward(posterior.mean, x)[0]
    jl = jac @ posterior.chol
    return OutputGaussian(mean=f_mu, cov=jl @ jl.T)


def linearized_mc_predictive(
    outputs: list[OutputGaussian], likelihood: Likelihood, n_samples: int, rng: RngStream
) -> PredictiveMatrix:
    """MC integration in output space: sample f ~ N(f_mu, S(x)), average probs."""
    rows = []
    for i, og in enumerate(outputs):
        try:
            chol = np.linalg.cholesky(og.cov + 1e-12 * np.eye(og.mean.size))
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(og.cov)
            chol = v @ np.diag(np.sqrt(np.maximum(w, 0.0)))
        z = rng.substream(i).standard_normal(n_samples, og.mean.size)
        f = og.mean + z @ chol.T
        rows.append(_class_probs(likelihood, f).mean(axis=0))
    return PredictiveMatrix(
        np.vstack(rows), method="linearized-mc", n_samples=n_samples
    )


def probit_binary(m: float, s2: float) -> float:
    """Probit closed form for the logistic-Gaussian integral."""
    if s2 < 0:
        raise ValueError("variance must be non-negative")
    return float(expit(m / np.sqrt(1.0 + np.pi * s2 / 8.0)))


def mpa(f_mean: np.ndarray, s_diag: np.ndarray) -> np.ndarray:
    """Multi-class probit approximation; off-diagonal covariance is ignored."""
    f_mean = np.asarray(f_mean, dtype=np.float64)
    s_diag = np.asarray(s_diag, dtype=np.float64)
    if f_mean.shape != s_diag.shape:
        raise ValueError("mean and variance vectors must have equal length")
    if np.any(s_diag < 0):
        raise ValueError("variances must be non-negative")
    scaled = f_mean / np.sqrt(1.0 + np.pi * s_diag / 8.0)
    return softmax(scaled)


def mpa_predictive(
    posterior: GaussianPosterior, model, X: np.ndarray
) -> PredictiveMatrix:
    """MPA over linearized outputs for every row of X."""
    rows = []
    for x in np.atleast_2d(X):
        og = linearized_output(posterior, model, x)
        rows.append(mpa(og.mean, np.diag(og.cov)))
    return PredictiveMatrix(np.vstack(rows), method="mpa")


def logistic_gaussian_quadrature(m: float, s: float, n_points: int = 20000) -> float:
    """Trapezoid quadrature of I(m, s) over [m - 10 s, m + 10 s].

    The integrand's mass beyond ten standard deviations is far below the
    quadrature error, so the truncated domain is exact for all purposes here.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    if n_points < 2:
        raise ValueError("need at least two evaluation points")
    f = np.linspace(m - 10.0 * s, m + 10.0 * s, n_points)
    density = np.exp(-0.5 * ((f - m) / s) ** 2) / (s * np.sqrt(2.0 * np.pi))
    return float(np.trapezoid(expit(f) * density, f))


def _mc_logistic_estimates(
    m: float, s: float, n_samples: int, n_repeats: int, rng: RngStream
) -> np.ndarray:
    """(n_repeats,) MC estimates of I(m, s) with independent substreams."""
    out = np.empty(n_repeats)
    for r in range(n_repeats):
        f = m + s * rng.substream(r).standard_normal(n_samples)
        out[r] = float(np.mean(expit(f)))
    return out


@dataclass
class ErrorGrid:
    """MC and probit error surfaces on an (m, s) grid."""

    m_grid: np.ndarray
    s_grid: np.ndarray
    mc_mean_error: np.ndarray  # (len(m), len(s)) mean |error| over repeats
    mc_max_error: np.ndarray  # per-cell max |error| over repeats
    probit_error: np.ndarray
    n_samples: int
    n_repeats: int

    @property
    def max_mc_error(self) -> float:
        return float(self.mc_max_error.max())

    @property
    def max_probit_error(self) -> float:
        return float(self.probit_error.max())

    def argmax_locations(self) -> dict:
        i, j = np.unravel_index(np.argmax(self.mc_max_error), self.mc_max_error.shape)
        k, l = np.unravel_index(np.argmax(self.probit_error), self.probit_error.shape)
        return {
            "mc": {"m": float(self.m_grid[i]), "s": float(self.s_grid[j])},
            "probit": {"m": float(self.m_grid[k]), "s": float(self.s_grid[l])},
        }


def mc_error_grid(
    m_grid: np.ndarray,
    s_grid: np.ndarray,
    n_samples: int,
    n_repeats: int,
    rng: RngStream,
    quad_points: int = 20000,
) -> ErrorGrid:
    """Absolute errors of MC and probit against quadrature over a grid.

    MC errors are collected per cell over `n_repeats` independent seeds; both
    the repeat-mean and the repeat-max surfaces are kept, since a single-seed
    map has noticeably heavier extremes. The probit surface is deterministic.
    """
    m_grid = np.asarray(m_grid, dtype=np.float64)
    s_grid = np.asarray(s_grid, dtype=np.float64)
    if m_grid.size == 0 or s_grid.size == 0:
        raise ValueError("grids must be non-empty")
    mc_mean = np.empty((m_grid.size, s_grid.size))
    mc_max = np.empty_like(mc_mean)
    probit_err = np.empty_like(mc_mean)
    for i, m in enumerate(m_grid):
        for j, s in enumerate(s_grid):
            truth = logistic_gaussian_quadrature(m, s, quad_points)
            cell_rng = rng.substream(i * s_grid.size + j)
            errors = np.abs(
                _mc_logistic_estimates(m, s, n_samples, n_repeats, cell_rng) - truth
            )
            mc_mean[i, j] = errors.mean()
            mc_max[i, j] = errors.max()
            probit_err[i, j] = abs(probit_binary(m, s * s) - truth)
    return ErrorGrid(
        m_grid=m_grid,
        s_grid=s_grid,
        mc_mean_error=mc_mean,
        mc_max_error=mc_max,
        probit_error=probit_err,
        n_samples=n_samples,
        n_repeats=n_repeats,
    )


def mc_error_scaling(
    m: float,
    s: float,
    sample_counts: list[int],
    n_repeats: int,
    rng: RngStream,
) -> list[tuple[int, float]]:
    """Empirical standard error of the MC estimate per sample count."""
    if any(
        sample_counts[i] >= sample_counts[i + 1] for i in range(len(sample_counts) - 1)
    ):
        raise ValueError("sample counts must be strictly increasing")
    out = []
    for k, n_samples in enumerate(sample_counts):
        estimates = _mc_logistic_estimates(
            m, s, n_samples, n_repeats, rng.substream(k)
        )
        out.append((n_samples, float(np.std(estimates, ddof=1))))
    return out
