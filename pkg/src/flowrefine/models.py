"""Likelihood models over which posteriors are formed.

Two model families cover everything the experiments need:

* :class:`LinearModel` -- outputs that are exactly linear in the parameter
  vector (last-layer classifier / binary logistic head / linear regressor).
  Parameters are laid out output-major with the bias appended last per
  output, i.e. ``theta.reshape(n_outputs, n_features + 1)`` has rows
  ``[w_c, b_c]``. This keeps the Jacobian and Hessian blocks contiguous.
* :class:`TinyMLP` -- a small tanh network with hand-coded backprop, used
  for the all-layer toy experiments where the Gaussian posterior sits over
  every weight.

Likelihoods are categorical softmax, Bernoulli over a single logit, and a
homoscedastic Gaussian with fixed noise scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

__all__ = [
    "Dataset",
    "Likelihood",
    "LinearModel",
    "TinyMLP",
    "log_likelihood",
    "grad_log_likelihood",
    "log_prior",
    "grad_log_prior",
    "log_joint",
    "grad_log_joint",
    "output_jacobian",
    "log_softmax",
    "softmax",
]

REGRESSION = 0  # Dataset.n_classes value marking real-valued targets


@dataclass
class Dataset:
    """Features, labels/targets, and the number of classes (0 for regression)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("X must be a non-empty (N, P) array")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain non-finite values")
        if self.n_classes == REGRESSION:
            self.y = np.asarray(self.y, dtype=np.float64)
        else:
            self.y = np.asarray(self.y)
            if not np.issubdtype(self.y.dtype, np.integer):
                raise ValueError("classification labels must be integers")
            if self.y.min() < 0 or self.y.max() >= self.n_classes:
                raise ValueError("labels out of range [0, n_classes)")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("labels must be one per row of X")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Likelihood:
    """Observation model: 'categorical', 'bernoulli', or 'gaussian'."""

    kind: str
    sigma_noise: float = 0.3

    def __post_init__(self):
        if self.kind not in ("categorical", "bernoulli", "gaussian"):
            raise ValueError(f"unknown likelihood kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma_noise <= 0:
            raise ValueError("sigma_noise must be positive")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


class LinearModel:
    """f_theta(x) = W @ [x, 1] with theta = W flattened output-major."""

    def __init__(self, n_features: int, n_outputs: int, include_bias: bool = True):
        self.n_features = n_features
        self.n_outputs = n_outputs
        self.include_bias = include_bias
        self.dim = n_outputs * (n_features + int(include_bias))
        self._augment_cache: tuple | None = None

    def _augment(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"X has {X.shape[1]} features, model expects {self.n_features}"
            )
        if not self.include_bias:
            return X
        # cache keyed on array identity: feature matrices are never mutated
        # in this package, and augmenting 10^4-row matrices per gradient call
        # dominates the HMC/ELBO hot loops otherwise
        cached = self._augment_cache
        if cached is not None and cached[0] is X:
            return cached[1]
        Xa = np.hstack([X, np.ones((X.shape[0], 1))])
        self._augment_cache = (X, Xa)
        return Xa

    def _weights(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has length {theta.size}, expected {self.dim}")
        return theta.reshape(self.n_outputs, -1)

    def forward(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """(N, n_outputs) outputs; exactly linear in theta."""
        return self._augment(X) @ self._weights(theta).T

    def forward_batch(self, thetas: np.ndarray, X: np.ndarray) -> np.ndarray:
        """(S, N, n_outputs) outputs for a stack of S parameter vectors."""
        Xa = self._augment(X)
        s = thetas.shape[0]
        # one GEMM: (N, k) @ (k, S*C), then split the joined axis
        w_cols = thetas.reshape(s * self.n_outputs, -1).T
        out = Xa @ w_cols
        return out.reshape(Xa.shape[0], s, self.n_outputs).transpose(1, 0, 2)

    def backprop_params(
        self, theta: np.ndarray, X: np.ndarray, df: np.ndarray
    ) -> np.ndarray:
        """Vector-Jacobian product: sum_i df[i] x_aug[i] arranged as theta."""
        Xa = self._augment(X)
        return (df.T @ Xa).ravel()

    def output_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """(n_outputs, dim) Jacobian of f w.r.t. theta; block-diagonal in x_aug."""
        xa = self._augment(np.atleast_2d(x))[0]
        return np.kron(np.eye(self.n_outputs), xa)


class TinyMLP:
    """Fully-connected tanh network with a flattened parameter vector.

    widths = [in, h1, ..., out]; hidden layers use tanh, the output layer is
    linear. Gradients are hand-coded backprop, which keeps the module free of
    autodiff frameworks and makes finite-difference cross-checks meaningful.
    """

    def __init__(self, widths: list[int]):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = list(widths)
        self.n_features = widths[0]
        self.n_outputs = widths[-1]
        self.dim = sum(
            widths[i + 1] * widths[i] + widths[i + 1] for i in range(len(widths) - 1)
        )

    def _unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has length {theta.size}, expected {self.dim}")
        layers = []
        pos = 0
        for i in range(len(self.widths) - 1):
            din, dout = self.widths[i], self.widths[i + 1]
            W = theta[pos : pos + dout * din].reshape(dout, din)
            pos += dout * din
            b = theta[pos : pos + dout]
            pos += dout
            layers.append((W, b))
        return layers

    def init_params(self, rng) -> np.ndarray:
        """Glorot-scaled random initialization."""
        parts = []
        for i in range(len(self.widths) - 1):
            din, dout = self.widths[i], self.widths[i + 1]
            scale = np.sqrt(2.0 / (din + dout))
            parts.append(scale * rng.standard_normal(dout * din))
            parts.append(np.zeros(dout))
        return np.concatenate(parts)

    def _forward_trace(self, theta: np.ndarray, X: np.ndarray):
        layers = self._unpack(theta)
        a = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if a.shape[1] != self.n_features:
            raise ValueError(
                f"X has {a.shape[1]} features, network expects {self.n_features}"
            )
        activations = [a]
        for idx, (W, b) in enumerate(layers):
            z = a @ W.T + b
            a = np.tanh(z) if idx < len(layers) - 1 else z
            activations.append(a)
        return layers, activations

    def forward(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return self._forward_trace(theta, X)[1][-1]

    def backprop_params(
        self, theta: np.ndarray, X: np.ndarray, df: np.ndarray
    ) -> np.ndarray:
        """VJP of sum_i df[i] . f(x_i) w.r.t. theta."""
        layers, activations = self._forward_trace(theta, X)
        grad_parts = [None] * len(layers)
        delta = np.atleast_2d(df)
        for idx in range(len(layers) - 1, -1, -1):
            W, _ = layers[idx]
            a_prev = activations[idx]
            gW = delta.T @ a_prev
            gb = delta.sum(axis=0)
            grad_parts[idx] = np.concatenate([gW.ravel(), gb])
            if idx > 0:
                # tanh'(z) = 1 - a^2 where a is the post-activation we stored
                delta = (delta @ W) * (1.0 - activations[idx] ** 2)
        return np.concatenate(grad_parts)

    def output_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """(n_outputs, dim): one backprop pass per output unit."""
        x = np.atleast_2d(x)
        rows = []
        for c in range(self.n_outputs):
            seed = np.zeros((x.shape[0], self.n_outputs))
            seed[:, c] = 1.0
            rows.append(self.backprop_params(theta, x, seed))
        return np.vstack(rows)


def _check_theta(model, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.dim,):
        raise ValueError(f"theta has length {theta.size}, expected {model.dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite values")
    return theta


def _residual(likelihood: Likelihood, f: np.ndarray, data: Dataset) -> np.ndarray:
    """d log p(y|f) / d f, one row per example."""
    if likelihood.kind == "categorical":
        probs = softmax(f)
        onehot = np.zeros_like(probs)
        onehot[np.arange(data.n), data.y] = 1.0
        return onehot - probs
    if likelihood.kind == "bernoulli":
        return (data.y.astype(np.float64) - expit(f[:, 0]))[:, None]
    return ((data.y - f[:, 0]) / likelihood.sigma_noise**2)[:, None]


def log_likelihood(model, likelihood: Likelihood, theta: np.ndarray, data: Dataset) -> float:
    """Sum over examples of log p(y_i | f_theta(x_i))."""
    theta = _check_theta(model, theta)
    f = model.forward(theta, data.X)
    return float(_log_likelihood_from_outputs(likelihood, f, data))


def _log_likelihood_from_outputs(
    likelihood: Likelihood, f: np.ndarray, data: Dataset
) -> float:
    if likelihood.kind == "categorical":
        logp = log_softmax(f)
        return float(logp[np.arange(data.n), data.y].sum())
    if likelihood.kind == "bernoulli":
        z = f[:, 0]
        y = data.y.astype(np.float64)
        # log sigma(z) = log_expit(z); log(1 - sigma(z)) = log_expit(-z)
        return float(np.sum(y * log_expit(z) + (1.0 - y) * log_expit(-z)))
    resid = data.y - f[:, 0]
    s2 = likelihood.sigma_noise**2
    return float(
        -0.5 * data.n * np.log(2.0 * np.pi * s2) - 0.5 * np.sum(resid**2) / s2
    )


def grad_log_likelihood(
    model, likelihood: Likelihood, theta: np.ndarray, data: Dataset
) -> np.ndarray:
    theta = _check_theta(model, theta)
    f = model.forward(theta, data.X)
    return model.backprop_params(theta, data.X, _residual(likelihood, f, data))


def log_prior(theta: np.ndarray, precision: float) -> float:
    """log N(theta | 0, precision^-1 I) including the normalizer."""
    if precision <= 0:
        raise ValueError("prior precision must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.size
    return float(
        0.5 * d * np.log(precision / (2.0 * np.pi))
        - 0.5 * precision * np.sum(theta**2)
    )


def grad_log_prior(theta: np.ndarray, precision: float) -> np.ndarray:
    if precision <= 0:
        raise ValueError("prior precision must be positive")
    return -precision * np.asarray(theta, dtype=np.float64)


def log_joint(
    model, likelihood: Likelihood, theta: np.ndarray, data: Dataset, precision: float
) -> float:
    return log_likelihood(model, likelihood, theta, data) + log_prior(theta, precision)


def grad_log_joint(
    model, likelihood: Likelihood, theta: np.ndarray, data: Dataset, precision: float
) -> np.ndarray:
    return grad_log_likelihood(model, likelihood, theta, data) + grad_log_prior(
        theta, precision
    )


def output_jacobian(model, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(n_outputs, dim) Jacobian of the network output at theta."""
    theta = _check_theta(model, theta)
    return model.output_jacobian(theta, x)


def log_likelihood_batch(
    model, likelihood: Likelihood, thetas: np.ndarray, data: Dataset
) -> np.ndarray:
    """log p(D | theta_s) for a stack of parameter vectors, shape (S,)."""
    thetas = np.atleast_2d(thetas)
    if isinstance(model, LinearModel):
        f = model.forward_batch(thetas, data.X)
        if likelihood.kind == "categorical":
            # picked-logit minus logsumexp, avoiding a full (S, N, C) log_softmax
            fmax = f.max(axis=-1)
            lse = fmax + np.log(np.exp(f - fmax[..., None]).sum(axis=-1))
            picked = f[:, np.arange(data.n), data.y]
            return (picked - lse).sum(axis=1)
        if likelihood.kind == "bernoulli":
            z = f[:, :, 0]
            y = data.y.astype(np.float64)
            return np.sum(y * log_expit(z) + (1.0 - y) * log_expit(-z), axis=1)
        resid = data.y - f[:, :, 0]
        s2 = likelihood.sigma_noise**2
        return -0.5 * data.n * np.log(2.0 * np.pi * s2) - 0.5 * np.sum(
            resid**2, axis=1
        ) / s2
    return np.array(
        [log_likelihood(model, likelihood, t, data) for t in thetas]
    )


def grad_log_likelihood_batch(
    model, likelihood: Likelihood, thetas: np.ndarray, data: Dataset
) -> np.ndarray:
    """Gradient of log p(D | theta_s) per stacked parameter vector, (S, d)."""
    thetas = np.atleast_2d(thetas)
    if isinstance(model, LinearModel):
        Xa = model._augment(data.X)
        f = model.forward_batch(thetas, data.X)
        if likelihood.kind == "categorical":
            probs = softmax(f)
            resid = -probs
            resid[:, np.arange(data.n), data.y] += 1.0
        elif likelihood.kind == "bernoulli":
            resid = (data.y.astype(np.float64) - expit(f[:, :, 0]))[:, :, None]
        else:
            resid = ((data.y - f[:, :, 0]) / likelihood.sigma_noise**2)[:, :, None]
        s = thetas.shape[0]
        # (S*C, N) @ (N, k) in one GEMM, matching the theta layout on reshape
        flat = resid.transpose(0, 2, 1).reshape(s * model.n_outputs, -1)
        return (flat @ Xa).reshape(s, model.dim)
    return np.vstack(
        [grad_log_likelihood(model, likelihood, t, data) for t in thetas]
    )
