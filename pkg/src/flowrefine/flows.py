"""Radial normalizing-flow layers and stacks.

A radial layer moves points toward or away from a center ``z0``:

    y = z + beta * h(r) * (z - z0),   h(r) = 1 / (alpha + r),   r = ||z - z0||

with log-Jacobian-determinant

    log|det J| = (d - 1) log(1 + beta h) + log(1 + beta h + beta h'(r) r),

where ``h'(r) = -1/(alpha + r)^2``. The second factor simplifies to
``1 + beta alpha / (alpha + r)^2``, which makes the expression continuous at
r = 0 with limit ``d log(1 + beta/alpha)``.

Invertibility holds by construction: layers store unconstrained raw values
with ``alpha = softplus(raw_alpha)`` and ``beta = -alpha + softplus(raw_beta)``,
so ``beta > -alpha`` always. The inverse has no closed form but only the
radius needs solving (directions are preserved); a bisection on the monotone
scalar map ``r -> r (1 + beta/(alpha + r))`` recovers it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .laplace import GaussianPosterior
from .rng import RngStream

__all__ = [
    "RadialLayer",
    "RadialFlowStack",
    "RefinedPosterior",
    "radial_forward",
    "radial_inverse",
    "flow_forward",
    "init_near_identity",
    "refined_log_density",
    "sample_refined",
    "softplus",
    "inv_softplus",
]

_R_FLOOR = 1e-300  # avoids 0/0 in the direction u/r; the limits are all 0 there


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    """Inverse of softplus; y must be positive."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus outputs are strictly positive")
    return y + np.log1p(-np.exp(-y))


@dataclass
class RadialLayer:
    """One radial transform; parameters stored in unconstrained form."""

    z0: np.ndarray
    raw_alpha: float
    raw_beta: float

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=np.float64)

    @property
    def alpha(self) -> float:
        return float(softplus(self.raw_alpha))

    @property
    def beta(self) -> float:
        return float(-softplus(self.raw_alpha) + softplus(self.raw_beta))

    @property
    def dim(self) -> int:
        return self.z0.size

    @classmethod
    def identity_like(cls, z0: np.ndarray, alpha: float = 1.0, beta: float = 0.0):
        """Layer with given center and effective (alpha, beta)."""
        raw_alpha = float(inv_softplus(alpha))
        raw_beta = float(inv_softplus(alpha + beta))
        return cls(z0=np.asarray(z0, dtype=np.float64), raw_alpha=raw_alpha, raw_beta=raw_beta)


@dataclass
class RadialFlowStack:
    """Ordered composition of radial layers; an empty stack is the identity."""

    layers: list[RadialLayer] = field(default_factory=list)

    def __post_init__(self):
        dims = {layer.dim for layer in self.layers}
        if len(dims) > 1:
            raise ValueError("all layers must share one dimension")

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int | None:
        return self.layers[0].dim if self.layers else None

    def copy(self) -> "RadialFlowStack":
        return RadialFlowStack(
            [
                RadialLayer(layer.z0.copy(), layer.raw_alpha, layer.raw_beta)
                for layer in self.layers
            ]
        )

    def raw_parameters(self) -> np.ndarray:
        """Flatten to [z0, raw_alpha, raw_beta] per layer."""
        parts = []
        for layer in self.layers:
            parts.append(layer.z0)
            parts.append([layer.raw_alpha, layer.raw_beta])
        return np.concatenate(parts) if parts else np.empty(0)

    @classmethod
    def from_raw_parameters(cls, raw: np.ndarray, d: int, n_layers: int):
        per = d + 2
        if raw.size != n_layers * per:
            raise ValueError("raw parameter vector has wrong length")
        layers = []
        for l in range(n_layers):
            chunk = raw[l * per : (l + 1) * per]
            layers.append(
                RadialLayer(z0=chunk[:d].copy(), raw_alpha=float(chunk[d]), raw_beta=float(chunk[d + 1]))
            )
        return cls(layers)


@dataclass
class RefinedPosterior:
    """Gaussian base pushed through a radial flow stack."""

    base: GaussianPosterior
    flow: RadialFlowStack

    def __post_init__(self):
        if len(self.flow) and self.flow.dim != self.base.dim:
            raise ValueError("flow dimension must match the base posterior")

    @property
    def dim(self) -> int:
        return self.base.dim


def radial_forward(layer: RadialLayer, z: np.ndarray):
    """Apply one layer. Accepts (d,) or (n, d); returns (y, log_det) alike."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    d = layer.dim
    if z2.shape[1] != d:
        raise ValueError(f"points have dimension {z2.shape[1]}, layer has {d}")
    alpha, beta = layer.alpha, layer.beta
    u = z2 - layer.z0
    r = np.linalg.norm(u, axis=1)
    h = 1.0 / (alpha + r)
    y = z2 + (beta * h)[:, None] * u
    # second log-det factor in the r-stable form 1 + beta*alpha/(alpha+r)^2
    log_det = (d - 1) * np.log1p(beta * h) + np.log1p(beta * alpha * h * h)
    if single:
        return y[0], float(log_det[0])
    return y, log_det


def radial_inverse(layer: RadialLayer, y: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Invert one layer by bisection on the radius."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    alpha, beta = layer.alpha, layer.beta
    v = y2 - layer.z0
    big_r = np.linalg.norm(v, axis=1)

    # solve g(r) = r (1 + beta/(alpha+r)) = R; g is strictly increasing
    lo = np.zeros_like(big_r)
    hi = big_r + max(-beta, 0.0) + 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        g = mid * (1.0 + beta / (alpha + mid))
        take_hi = g < big_r
        lo = np.where(take_hi, mid, lo)
        hi = np.where(take_hi, hi, mid)
        if np.max(hi - lo) < tol:
            break
    r = 0.5 * (lo + hi)
    scale = np.where(big_r > 0, r / np.maximum(big_r, _R_FLOOR), 0.0)
    z = layer.z0 + v * scale[:, None]
    return z[0] if single else z


def flow_forward(stack: RadialFlowStack, z: np.ndarray):
    """Push points through every layer; total log-det is the per-layer sum."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    y = np.atleast_2d(z).copy()
    total = np.zeros(y.shape[0])
    for layer in stack.layers:
        y, ld = radial_forward(layer, y)
        total = total + ld
    if single:
        return y[0], float(total[0])
    return y, total


def flow_inverse(stack: RadialFlowStack, y: np.ndarray):
    """Invert the whole stack (last layer first); returns (z, total_log_det)
    with the log-det evaluated at the recovered pre-images."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    z = np.atleast_2d(y).copy()
    total = np.zeros(z.shape[0])
    for layer in reversed(stack.layers):
        z = radial_inverse(layer, z)
        _, ld = radial_forward(layer, z)
        total = total + ld
    if single:
        return z[0], float(total[0])
    return z, total


def init_near_identity(
    d: int, n_layers: int, base: GaussianPosterior, rng: RngStream
) -> RadialFlowStack:
    """Stack whose layers start as exact identities (beta = 0, alpha = 1).

    Centers are scattered around the base mean at a tenth of the posterior
    scale, which breaks symmetry between layers; beta = 0 keeps the refined
    posterior bit-compatible with the base until training moves it, so an
    untrained refinement is a true no-op downstream.
    """
    if n_layers < 1:
        raise ValueError("need at least one layer")
    layers = []
    for l in range(n_layers):
        xi = rng.standard_normal(d)
        z0 = base.mean + 0.1 * (base.chol @ xi)
        layers.append(RadialLayer.identity_like(z0, alpha=1.0, beta=0.0))
    return RadialFlowStack(layers)


def refined_log_density(rp: RefinedPosterior, theta: np.ndarray):
    """log of the refined density at arbitrary points via stack inversion."""
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    pts = np.atleast_2d(theta)
    z, total_ld = flow_inverse(rp.flow, pts)
    base_ld = rp.base.log_density(z)
    base_ld = np.atleast_1d(base_ld)
    out = base_ld - total_ld
    return float(out[0]) if single else out


def sample_refined(rp: RefinedPosterior, n: int, rng: RngStream):
    """Draw base samples, push them forward; density needs no inversion.

    Returns (samples, log_density) where log q~(F(z)) = log q(z) - log_det(z).
    """
    z = rp.base.sample(n, rng)
    if n == 0:
        return z, np.empty(0)
    y, total_ld = flow_forward(rp.flow, z)
    base_ld = np.atleast_1d(rp.base.log_density(z))
    return y, base_ld - total_ld
