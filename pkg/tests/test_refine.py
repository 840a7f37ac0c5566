"""ELBO estimation/gradients, flow training, and the mean-field VB baseline."""

import numpy as np
import pytest

from flowrefine.data import gen_toy_logreg
from flowrefine.flows import (
    RadialFlowStack,
    RadialLayer,
    RefinedPosterior,
    init_near_identity,
    sample_refined,
)
from flowrefine.laplace import GaussianPosterior, MapConfig, fit_laplace
from flowrefine.linalg import gaussian_entropy
from flowrefine.models import Dataset, Likelihood, LinearModel, log_joint
from flowrefine.optim import finite_diff_grad
from flowrefine.refine import (
    RefineConfig,
    elbo_estimate,
    elbo_grad,
    meanfield_vb,
    refine,
)
from flowrefine.rng import RngStream


def conjugate_problem(rng, n=25, p=2, sigma=0.3, lam=1.5):
    """Linear-Gaussian regression with its exact posterior and log evidence."""
    X = rng.standard_normal((n, p))
    w = rng.standard_normal(p + 1)
    Xa = np.hstack([X, np.ones((n, 1))])
    y = Xa @ w + sigma * rng.standard_normal(n)
    data = Dataset(X, y, 0)
    model = LinearModel(p, 1)
    lik = Likelihood("gaussian", sigma_noise=sigma)
    prec = lam * np.eye(p + 1) + Xa.T @ Xa / sigma**2
    cov = np.linalg.inv(prec)
    mean = cov @ (Xa.T @ y) / sigma**2
    post = GaussianPosterior(mean=mean, cov=cov, prior_precision=lam, provenance="manual")
    cov_y = sigma**2 * np.eye(n) + Xa @ Xa.T / lam
    sign, logdet = np.linalg.slogdet(cov_y)
    evidence = -0.5 * (n * np.log(2 * np.pi) + logdet + y @ np.linalg.solve(cov_y, y))
    return model, lik, data, lam, post, float(evidence)


def prior_base(d, lam):
    return GaussianPosterior(
        mean=np.zeros(d),
        cov=np.eye(d) / lam,
        prior_precision=lam,
        provenance="manual",
    )


def identity_stack(d, n_layers=1):
    return RadialFlowStack(
        [RadialLayer.identity_like(np.zeros(d), alpha=1.0, beta=0.0) for _ in range(n_layers)]
    )


class TestElboEstimate:
    def test_prior_equals_posterior_gives_zero(self):
        # no data, base = prior: the ELBO is the log evidence of nothing = 0
        lam = 2.0
        rp = RefinedPosterior(prior_base(3, lam), identity_stack(3))
        val = elbo_estimate(rp, None, None, None, lam, 4000, RngStream(1))
        assert abs(val) < 0.05  # MC error only

    def test_identity_flow_matches_direct_gaussian_elbo(self, rng):
        # independent re-implementation: no flow machinery at all
        model = LinearModel(2, 1)
        lik = Likelihood("bernoulli")
        data = Dataset(rng.standard_normal((12, 2)), rng.integers(0, 2, 12), 2)
        a = 0.3 * rng.standard_normal((3, 3))
        base = GaussianPosterior(mean=rng.standard_normal(3), cov=a @ a.T + 0.5 * np.eye(3))
        rp = RefinedPosterior(base, identity_stack(3, 2))
        lam = 1.1
        n_mc = 64
        got = elbo_estimate(rp, model, lik, data, lam, n_mc, RngStream(5))
        z = base.sample(n_mc, RngStream(5))
        direct = np.mean(
            [log_joint(model, lik, t, data, lam) for t in z]
        ) + gaussian_entropy(base.chol)
        assert abs(got - direct) < 1e-10

    def test_conjugate_training_reaches_evidence(self, rng):
        model, lik, data, lam, post, evidence = conjugate_problem(rng)
        rp, trace = refine(
            post, model, lik, data, lam, RefineConfig(epochs=20, lr=0.001, seed=0)
        )
        final = elbo_estimate(rp, model, lik, data, lam, 4000, RngStream(99))
        assert abs(final - evidence) < 0.05

    def test_requires_samples(self, rng):
        rp = RefinedPosterior(prior_base(2, 1.0), identity_stack(2))
        with pytest.raises(ValueError):
            elbo_estimate(rp, None, None, None, 1.0, 0, RngStream(0))


class TestElboGrad:
    def test_matches_finite_differences_shared_noise(self, rng):
        for trial in range(10):
            d = int(rng.integers(1, 6))
            n_layers = int(rng.integers(1, 3))
            a = 0.3 * rng.standard_normal((d, d))
            base = GaussianPosterior(mean=rng.standard_normal(d), cov=a @ a.T + np.eye(d))
            if d >= 2:
                model = LinearModel(d - 1, 1)
                lik = Likelihood("bernoulli")
                data = Dataset(rng.standard_normal((10, d - 1)), rng.integers(0, 2, 10), 2)
            else:
                model, lik, data = None, None, None
            stack = RadialFlowStack(
                [
                    RadialLayer(rng.standard_normal(d), float(rng.normal()), float(rng.normal()))
                    for _ in range(n_layers)
                ]
            )
            rp = RefinedPosterior(base, stack)
            stream = RngStream(200 + trial)
            ana = elbo_grad(rp, model, lik, data, 1.3, 8, stream)

            def estimate(raw):
                s = RadialFlowStack.from_raw_parameters(raw, d, n_layers)
                return elbo_estimate(
                    RefinedPosterior(base, s), model, lik, data, 1.3, 8, RngStream(200 + trial)
                )

            fd = finite_diff_grad(estimate, stack.raw_parameters(), eps=1e-6)
            denom = max(np.max(np.abs(fd)), 1e-6)
            assert np.max(np.abs(ana - fd)) / denom < 1e-4

    def test_zero_gradient_at_optimum_within_noise(self):
        # base = prior, no data, identity flow: expected gradient is zero
        lam = 1.7
        rp = RefinedPosterior(prior_base(2, lam), identity_stack(2))
        grads = np.array(
            [elbo_grad(rp, None, None, None, lam, 16, RngStream(s, 3)) for s in range(50)]
        )
        mean = grads.mean(axis=0)
        se = grads.std(axis=0, ddof=1) / np.sqrt(len(grads))
        assert np.all(np.abs(mean) <= 3.0 * se + 1e-12)

    def test_variance_halves_with_double_samples(self, rng):
        base = prior_base(2, 1.0)
        layer = RadialLayer(np.array([0.4, -0.2]), 0.3, 0.8)
        rp = RefinedPosterior(base, RadialFlowStack([layer]))
        counts = [8, 32, 128, 512]
        variances = []
        for k, n_mc in enumerate(counts):
            grads = np.array(
                [
                    elbo_grad(rp, None, None, None, 1.0, n_mc, RngStream(s, 100 + k))
                    for s in range(60)
                ]
            )
            variances.append(grads.var(axis=0, ddof=1).sum())
        slope = np.polyfit(np.log(counts), np.log(variances), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.2)

    def test_unbiasedness_proxy(self, rng):
        # mean analytic gradient over seeds == fd gradient of the mean ELBO
        base = prior_base(2, 1.0)
        layer = RadialLayer(np.array([0.3, 0.1]), 0.2, 0.4)
        rp = RefinedPosterior(base, RadialFlowStack([layer]))
        n_seeds = 200
        grads = np.array(
            [elbo_grad(rp, None, None, None, 1.0, 8, RngStream(s, 7)) for s in range(n_seeds)]
        )
        mean_grad = grads.mean(axis=0)
        se = grads.std(axis=0, ddof=1) / np.sqrt(n_seeds)

        raw0 = rp.flow.raw_parameters()

        def mean_elbo(raw):
            stack = RadialFlowStack.from_raw_parameters(raw, 2, 1)
            rp2 = RefinedPosterior(base, stack)
            return np.mean(
                [elbo_estimate(rp2, None, None, None, 1.0, 8, RngStream(s, 7)) for s in range(n_seeds)]
            )

        fd = finite_diff_grad(mean_elbo, raw0, eps=1e-5)
        assert np.all(np.abs(mean_grad - fd) <= 3.0 * se + 1e-8)


@pytest.fixture(scope="module")
def toy_setup():
    data = gen_toy_logreg(RngStream(0, 1))
    model = LinearModel(2, 1)
    lik = Likelihood("bernoulli")
    post, _ = fit_laplace(
        model, lik, data, 1.0, MapConfig(max_epochs=3000, lr=0.05, grad_tol=1e-7)
    )
    return model, lik, data, post


class TestRefine:
    def test_improves_elbo_on_toy_posterior(self, toy_setup):
        model, lik, data, post = toy_setup
        cfg = RefineConfig(epochs=800, lr=0.01, n_layers=5, seed=0)
        rp, trace = refine(post, model, lik, data, 1.0, cfg)
        assert max(trace.eval_elbo) >= trace.eval_elbo[0] + 0.1

    def test_zero_epochs_is_identity(self, toy_setup):
        model, lik, data, post = toy_setup
        cfg = RefineConfig(epochs=0, n_layers=3, seed=1)
        rp, trace = refine(post, model, lik, data, 1.0, cfg)
        draws, _ = sample_refined(rp, 50, RngStream(2))
        base_draws = post.sample(50, RngStream(2))
        assert np.max(np.abs(draws - base_draws)) < 1e-12
        assert trace.elbo == []

    def test_deterministic(self, toy_setup):
        model, lik, data, post = toy_setup
        cfg = RefineConfig(epochs=15, lr=0.01, n_layers=2, seed=3)
        _, t1 = refine(post, model, lik, data, 1.0, cfg)
        _, t2 = refine(post, model, lik, data, 1.0, cfg)
        assert t1.elbo == t2.elbo
        assert t1.eval_elbo == t2.eval_elbo
        assert t1.lr == t2.lr

    def test_best_iterate_never_below_start(self, toy_setup):
        model, lik, data, post = toy_setup
        for seed in range(3):
            cfg = RefineConfig(epochs=25, lr=0.05, n_layers=2, seed=seed)
            _, trace = refine(post, model, lik, data, 1.0, cfg)
            best = max(trace.eval_elbo)
            assert best >= trace.eval_elbo[0]
            assert trace.eval_elbo[trace.best_epoch] == best

    def test_base_frozen(self, toy_setup):
        model, lik, data, post = toy_setup
        mean_bytes = post.mean.tobytes()
        cov_bytes = post.cov.tobytes()
        refine(post, model, lik, data, 1.0, RefineConfig(epochs=10, n_layers=2, seed=0))
        assert post.mean.tobytes() == mean_bytes
        assert post.cov.tobytes() == cov_bytes

    def test_elbo_lower_bounds_evidence(self, rng):
        model, lik, data, lam, post, evidence = conjugate_problem(rng)
        stack = init_near_identity(post.dim, 2, post, RngStream(1))
        rp = RefinedPosterior(post, stack)
        estimates = np.array(
            [elbo_estimate(rp, model, lik, data, lam, 16, RngStream(s, 5)) for s in range(100)]
        )
        se = estimates.std(ddof=1) / 10.0
        assert estimates.mean() <= evidence + 3.0 * se


class TestMeanfieldVb:
    def test_recovers_diagonal_conjugate_posterior(self, rng):
        # orthogonal design, no bias: the exact posterior is diagonal
        n, p = 64, 3
        q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = q * np.sqrt(n / 4.0)
        w = np.array([1.0, -0.5, 0.25])
        sigma, lam = 0.5, 2.0
        y = X @ w + sigma * rng.standard_normal(n)
        data = Dataset(X, y, 0)
        model = LinearModel(p, 1, include_bias=False)
        lik = Likelihood("gaussian", sigma_noise=sigma)
        prec = lam * np.eye(p) + X.T @ X / sigma**2
        exact_mean = np.linalg.solve(prec, X.T @ y / sigma**2)
        exact_var = 1.0 / np.diag(prec)
        post = meanfield_vb(
            model, lik, data, lam, RefineConfig(epochs=3000, lr=0.02, n_mc=64, seed=0)
        )
        assert post.provenance == "vb"
        assert np.max(np.abs(post.mean - exact_mean)) < 1e-2
        assert np.max(np.abs(np.diag(post.cov) - exact_var) / exact_var) < 5e-2

    def test_strong_prior_shrinks_mean(self, rng):
        data = Dataset(rng.standard_normal((20, 2)), rng.integers(0, 2, 20), 2)
        model = LinearModel(2, 1)
        post = meanfield_vb(
            model, Likelihood("bernoulli"), data, 1e4,
            RefineConfig(epochs=400, lr=0.02, seed=0),
        )
        assert np.max(np.abs(post.mean)) < 0.05
