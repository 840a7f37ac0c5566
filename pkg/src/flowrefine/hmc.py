"""Hamiltonian Monte Carlo with dual-averaging step-size adaptation.

Plain fixed-path-length HMC with an identity mass matrix: momenta are
standard normal, trajectories use the leapfrog integrator, and a Metropolis
correction on the total energy keeps the chain exact. During warmup the step
size adapts by dual averaging toward a target acceptance rate and is then
frozen. Convergence is checked with the split Gelman-Rubin statistic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import RngStream

__all__ = [
    "AdaptationFailed",
    "HmcConfig",
    "ChainSet",
    "leapfrog",
    "hmc_sample",
    "gelman_rubin",
]

DIVERGENCE_THRESHOLD = 1000.0  # |delta H| beyond this marks a divergent transition


class AdaptationFailed(RuntimeError):
    pass


@dataclass
class HmcConfig:
    n_chains: int = 4
    n_warmup: int = 500
    n_samples: int = 600
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.n_chains, self.n_warmup, self.n_samples, self.leapfrog_steps) <= 0:
            raise ValueError("HmcConfig counts must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class ChainSet:
    """Post-warmup draws per chain plus sampler diagnostics."""

    samples: np.ndarray  # (n_chains, n_samples, d)
    accept_rates: np.ndarray
    step_sizes: np.ndarray
    divergences: np.ndarray
    provenance: str = "hmc"

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    def pooled(self) -> np.ndarray:
        """All chains stacked into one (n_chains * n_samples, d) array."""
        return self.samples.reshape(-1, self.samples.shape[2])


def leapfrog(
    grad_log_post: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    momentum: np.ndarray,
    step: float,
    n_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Leapfrog integration of Hamiltonian dynamics with identity mass."""
    if step <= 0:
        raise ValueError("step size must be positive")
    theta = np.array(theta, dtype=np.float64)
    momentum = np.array(momentum, dtype=np.float64)
    if n_steps == 0:
        return theta, momentum
    momentum = momentum + 0.5 * step * grad_log_post(theta)
    for i in range(n_steps):
        theta = theta + step * momentum
        grad = grad_log_post(theta)
        momentum = momentum + (step if i < n_steps - 1 else 0.5 * step) * grad
    return theta, momentum


def _find_initial_step(log_post, grad_log_post, theta, rng: RngStream) -> float:
    """Heuristic from the NUTS paper: double/halve until the one-step
    acceptance probability crosses 1/2."""
    d = theta.size
    step = 1.0
    p = rng.standard_normal(d)
    h0 = log_post(theta) - 0.5 * np.dot(p, p)
    t1, p1 = leapfrog(grad_log_post, theta, p, step, 1)
    h1 = log_post(t1) - 0.5 * np.dot(p1, p1)
    if not np.isfinite(h1):
        step = 1e-3
        t1, p1 = leapfrog(grad_log_post, theta, p, step, 1)
        h1 = log_post(t1) - 0.5 * np.dot(p1, p1)
        if not np.isfinite(h1):
            raise AdaptationFailed("cannot find a finite starting step size")
    direction = 1.0 if (h1 - h0) > np.log(0.5) else -1.0
    for _ in range(50):
        step *= 2.0**direction
        t1, p1 = leapfrog(grad_log_post, theta, p, step, 1)
        h1 = log_post(t1) - 0.5 * np.dot(p1, p1)
        if not np.isfinite(h1):
            h1 = -np.inf
        if direction * (h1 - h0) <= direction * np.log(0.5):
            break
    return step


def _run_chain(
    log_post,
    grad_log_post,
    theta0: np.ndarray,
    config: HmcConfig,
    rng: RngStream,
) -> tuple[np.ndarray, float, float, int]:
    theta = np.array(theta0, dtype=np.float64)
    d = theta.size
    lp = log_post(theta)
    if not np.isfinite(lp):
        raise ValueError("log posterior is non-finite at the chain start")

    step = _find_initial_step(log_post, grad_log_post, theta, rng.substream(0))
    # dual averaging state (Hoffman & Gelman 2014, Algorithm 5 constants)
    mu = np.log(10.0 * step)
    log_step_avg = np.log(step)
    h_bar = 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75

    draw_rng = rng.substream(1).generator
    n_accept = 0
    n_divergent = 0
    samples = np.empty((config.n_samples, d))
    total = config.n_warmup + config.n_samples
    warmup_failures = 0

    for it in range(total):
        p0 = draw_rng.standard_normal(d)
        h0 = lp - 0.5 * np.dot(p0, p0)
        theta_prop, p_prop = leapfrog(grad_log_post, theta, p0, step, config.leapfrog_steps)
        lp_prop = log_post(theta_prop)
        h_prop = lp_prop - 0.5 * np.dot(p_prop, p_prop)
        delta = h_prop - h0
        divergent = not np.isfinite(delta) or abs(delta) > DIVERGENCE_THRESHOLD
        if divergent:
            accept_prob = 0.0
            if it >= config.n_warmup:
                n_divergent += 1
            else:
                warmup_failures += 1
        else:
            accept_prob = min(1.0, float(np.exp(min(delta, 0.0))))
        if not divergent and np.log(draw_rng.uniform()) < delta:
            theta, lp = theta_prop, lp_prop
            if it >= config.n_warmup:
                n_accept += 1

        if it < config.n_warmup:
            t = it + 1
            h_bar = (1.0 - 1.0 / (t + t0)) * h_bar + (
                config.target_accept - accept_prob
            ) / (t + t0)
            log_step = mu - np.sqrt(t) / gamma * h_bar
            eta = t**-kappa
            log_step_avg = eta * log_step + (1.0 - eta) * log_step_avg
            step = float(np.exp(log_step))
            if it == config.n_warmup - 1:
                step = float(np.exp(log_step_avg))
                if warmup_failures >= config.n_warmup:
                    raise AdaptationFailed("every warmup transition diverged")
        else:
            samples[it - config.n_warmup] = theta

    return samples, n_accept / config.n_samples, step, n_divergent


def hmc_sample(
    log_post: Callable[[np.ndarray], float],
    grad_log_post: Callable[[np.ndarray], np.ndarray],
    inits: np.ndarray,
    config: HmcConfig | None = None,
) -> ChainSet:
    """Run independent chains from the given initial points.

    `inits` has one row per chain; chains use disjoint substreams of the
    configured seed, so results are reproducible and chain-parallelizable.
    """
    config = config or HmcConfig()
    inits = np.atleast_2d(np.asarray(inits, dtype=np.float64))
    if inits.shape[0] != config.n_chains:
        raise ValueError(
            f"got {inits.shape[0]} initial points for {config.n_chains} chains"
        )
    root = RngStream(config.seed, 23)
    all_samples = []
    rates, steps, divs = [], [], []
    for c in range(config.n_chains):
        samples, rate, step, ndiv = _run_chain(
            log_post, grad_log_post, inits[c], config, root.substream(c)
        )
        all_samples.append(samples)
        rates.append(rate)
        steps.append(step)
        divs.append(ndiv)
    return ChainSet(
        samples=np.stack(all_samples),
        accept_rates=np.array(rates),
        step_sizes=np.array(steps),
        divergences=np.array(divs),
    )


def gelman_rubin(chains: np.ndarray | ChainSet) -> np.ndarray:
    """Split-R-hat per dimension; constant dimensions report +inf.

    Accepts a ChainSet or an (n_chains, n_samples, d) array. Each chain is
    split in half, then the usual between/within variance ratio is computed
    over the 2m half-chains.
    """
    if isinstance(chains, ChainSet):
        chains = chains.samples
    chains = np.asarray(chains, dtype=np.float64)
    m, n, d = chains.shape
    if m < 2:
        raise ValueError("need at least two chains")
    if n < 10:
        raise ValueError("chains must have length at least 10")
    half = n // 2
    split = np.concatenate([chains[:, :half, :], chains[:, half : 2 * half, :]], axis=0)
    n_eff = half
    means = split.mean(axis=1)  # (2m, d)
    within = split.var(axis=1, ddof=1).mean(axis=0)  # (d,)
    between = n_eff * means.var(axis=0, ddof=1)  # (d,)
    r_hat = np.full(d, np.inf)
    pos = within > 0
    var_plus = (n_eff - 1) / n_eff * within[pos] + between[pos] / n_eff
    r_hat[pos] = np.sqrt(var_plus / within[pos])
    return r_hat
