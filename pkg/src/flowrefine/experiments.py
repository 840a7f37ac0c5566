"""Experiment pipelines behind the CLI subcommands.

Each function is importable on its own (the demo scripts use them directly)
and returns plain dicts/arrays; serialization lives in the CLI layer. All
stochastic steps derive substreams from one seed, so a run is reproducible
end to end.
"""

from __future__ import annotations

import re
import time

import numpy as np
from scipy.stats import gaussian_kde

from .data import gen_mixture_classes, gen_toy_logreg, gen_toy_regression, train_val_split
from .flows import RefinedPosterior, flow_forward
from .hmc import ChainSet, HmcConfig, gelman_rubin, hmc_sample
from .laplace import GaussianPosterior, MapConfig, fit_laplace, fit_map
from .metrics import MetricsReport, fpr95, mmd, nll, temperature_scale
from .models import (
    Dataset,
    Likelihood,
    LinearModel,
    TinyMLP,
    grad_log_joint,
    grad_log_likelihood_batch,
    log_joint,
    log_likelihood_batch,
    log_softmax,
    softmax,
)
from .predictive import (
    PredictiveMatrix,
    linearized_mc_predictive,
    linearized_output,
    mc_error_grid,
    mc_error_scaling,
    mc_predictive,
    mc_predictive_regression,
    mpa,
    mpa_predictive,
)
from .refine import RefineConfig, meanfield_vb, refine
from .rng import RngStream

__all__ = [
    "run_mc_grid",
    "run_toy2d",
    "run_compare",
    "run_ablate_flow",
    "run_ood",
    "run_mc_vs_analytic",
    "parse_methods",
]

_REFINE_METHOD = re.compile(r"^la-refine-(\d+)$")

# substream ids; one place so commands never collide on a stream
_S_DATA, _S_SPLIT, _S_MAP, _S_PRED, _S_VB_PRED, _S_HMC_INIT, _S_MMD = 3, 4, 5, 60, 61, 77, 50


def parse_methods(spec: str) -> list[str]:
    methods = [m.strip() for m in spec.split(",") if m.strip()]
    for m in methods:
        if m in ("map", "map-temp", "la", "vb", "hmc"):
            continue
        if _REFINE_METHOD.match(m):
            continue
        raise ValueError(f"unknown method {m!r}")
    if not methods:
        raise ValueError("no methods given")
    return methods


def _log_post_closures(model, likelihood, data, precision):
    """(log_post, grad_log_post) callables for samplers; the linear-model
    categorical case is hand-inlined since it sits in the HMC hot loop."""
    if isinstance(model, LinearModel) and likelihood.kind == "categorical":
        Xa = model._augment(data.X)
        y_idx = (np.arange(data.n), data.y)
        c = model.n_outputs
        const = 0.5 * model.dim * np.log(precision / (2.0 * np.pi))

        def lp(theta):
            f = Xa @ theta.reshape(c, -1).T
            fmax = f.max(axis=1)
            lse = fmax + np.log(np.exp(f - fmax[:, None]).sum(axis=1))
            ll = float((f[y_idx] - lse).sum())
            return ll + const - 0.5 * precision * float(theta @ theta)

        def glp(theta):
            f = Xa @ theta.reshape(c, -1).T
            f -= f.max(axis=1, keepdims=True)
            np.exp(f, out=f)
            f /= f.sum(axis=1, keepdims=True)
            f *= -1.0
            f[y_idx] += 1.0
            return (f.T @ Xa).ravel() - precision * theta

        return lp, glp

    def lp(theta):
        return float(
            log_likelihood_batch(model, likelihood, theta[None], data)[0]
        ) + 0.5 * theta.size * np.log(precision / (2.0 * np.pi)) - 0.5 * precision * float(
            theta @ theta
        )

    def glp(theta):
        return (
            grad_log_likelihood_batch(model, likelihood, theta[None], data)[0]
            - precision * theta
        )

    return lp, glp


def _jittered_inits(post: GaussianPosterior, n_chains: int, rng: RngStream) -> np.ndarray:
    noise = rng.standard_normal(n_chains, post.dim)
    return post.mean + 0.1 * (post.chol @ noise.T).T


def run_mc_grid(
    n_samples: int = 100,
    m_range: tuple[float, float] = (-5.0, 5.0),
    s_range: tuple[float, float] = (0.1, 10.0),
    grid: int = 50,
    n_repeats: int = 10,
    seed: int = 0,
) -> dict:
    """Error surfaces of MC integration and the probit approximation."""
    if m_range[0] >= m_range[1] or s_range[0] >= s_range[1] or s_range[0] <= 0:
        raise ValueError("invalid grid ranges")
    m_grid = np.linspace(m_range[0], m_range[1], grid)
    s_grid = np.linspace(s_range[0], s_range[1], grid)
    surf = mc_error_grid(m_grid, s_grid, n_samples, n_repeats, RngStream(seed, 1))
    return {
        "grid": surf,
        "summary": {
            "max_mc_error": surf.max_mc_error,
            "max_mc_mean_error": float(surf.mc_mean_error.max()),
            "max_probit_error": surf.max_probit_error,
            "argmax": surf.argmax_locations(),
            "n_samples": n_samples,
            "n_repeats": n_repeats,
        },
    }


def run_mc_scaling(
    m: float = 1.0,
    s: float = 2.0,
    sample_counts: list[int] | None = None,
    n_repeats: int = 200,
    seed: int = 0,
) -> dict:
    """Standard error of the MC estimate vs sample count, with fitted slope."""
    counts = sample_counts or [10, 100, 1000, 10_000, 100_000]
    pairs = mc_error_scaling(m, s, counts, n_repeats, RngStream(seed, 2))
    log_s = np.log10([p[0] for p in pairs])
    log_se = np.log10([p[1] for p in pairs])
    slope = float(np.polyfit(log_s, log_se, 1)[0])
    return {"pairs": pairs, "slope": slope, "m": m, "s": s, "n_repeats": n_repeats}


# ------------------------------------------------------------- toy 2D task

TOY2D_PRECISION = 1.0
TOY2D_MAP = MapConfig(max_epochs=3000, lr=0.05, grad_tol=1e-7)
TOY2D_REFINE = dict(epochs=1500, lr=0.01, n_mc=32)
TOY2D_VB = dict(epochs=2000, lr=0.02, n_mc=32)
TOY2D_HMC = dict(n_chains=4, n_warmup=1000, n_samples=600, target_accept=0.9)
RHAT_THRESHOLD = 1.1


def run_toy2d(
    flow_lengths: list[int] | None = None,
    seed: int = 0,
    n_mmd: int = 2000,
    kde_grid: int = 60,
) -> dict:
    """LA / VB / refined-LA / HMC on the bimodal 2D logistic task.

    Returns parameter samples, MMD-to-HMC per method, and kernel-density
    grids over the two weight coordinates for plotting. Raises RuntimeError
    when any HMC dimension fails the Gelman-Rubin gate.
    """
    flow_lengths = flow_lengths or [5]
    data = gen_toy_logreg(RngStream(seed, 1))
    model = LinearModel(2, 1)
    lik = Likelihood("bernoulli")
    lam = TOY2D_PRECISION

    cfg = MapConfig(**{**TOY2D_MAP.__dict__, "seed": seed})
    post, map_info = fit_laplace(model, lik, data, lam, cfg)

    lp, glp = _log_post_closures(model, lik, data, lam)
    hmc_cfg = HmcConfig(seed=seed, **TOY2D_HMC)
    inits = _jittered_inits(post, hmc_cfg.n_chains, RngStream(seed, _S_HMC_INIT))
    chains = hmc_sample(lp, glp, inits, hmc_cfg)
    rhat = gelman_rubin(chains)
    if rhat.max() >= RHAT_THRESHOLD:
        raise RuntimeError(
            f"HMC did not converge: max split-R-hat {rhat.max():.3f} >= {RHAT_THRESHOLD}"
        )
    hmc_samples = chains.pooled()[:n_mmd]

    samples = {"hmc": hmc_samples}
    samples["la"] = post.sample(n_mmd, RngStream(seed, _S_MMD))

    vb_post = meanfield_vb(
        model, lik, data, lam, RefineConfig(seed=seed, n_layers=1, **TOY2D_VB)
    )
    samples["vb"] = vb_post.sample(n_mmd, RngStream(seed, _S_MMD + 1))

    elbo_traces = {}
    for ell in flow_lengths:
        rp, trace = refine(
            post, model, lik, data, lam,
            RefineConfig(seed=seed, n_layers=ell, **TOY2D_REFINE),
        )
        draws = post.sample(n_mmd, RngStream(seed, _S_MMD + 2))
        samples[f"la-refine-{ell}"], _ = flow_forward(rp.flow, draws)
        elbo_traces[f"la-refine-{ell}"] = trace

    mmd_table = {
        name: mmd(s, hmc_samples) for name, s in samples.items() if name != "hmc"
    }
    # self-distance via independent chain halves
    half = chains.n_chains // 2
    if half >= 1:
        a = chains.samples[:half].reshape(-1, chains.dim)
        b = chains.samples[half:].reshape(-1, chains.dim)
        mmd_table["hmc"] = mmd(a, b)

    lo = hmc_samples[:, :2].min(axis=0) - 0.5
    hi = hmc_samples[:, :2].max(axis=0) + 0.5
    g1 = np.linspace(lo[0], hi[0], kde_grid)
    g2 = np.linspace(lo[1], hi[1], kde_grid)
    mesh = np.stack(np.meshgrid(g1, g2, indexing="ij")).reshape(2, -1)
    kde_grids = {}
    for name, s in samples.items():
        kde = gaussian_kde(s[:, :2].T)
        kde_grids[name] = kde(mesh).reshape(kde_grid, kde_grid)

    return {
        "samples": samples,
        "mmd": mmd_table,
        "kde_axes": (g1, g2),
        "kde_grids": kde_grids,
        "rhat": rhat,
        "map_info": map_info,
        "accept_rates": chains.accept_rates,
        "elbo_traces": elbo_traces,
        "precision": lam,
    }


# --------------------------------------------------------- desk-scale task

DESK_MAP = MapConfig(max_epochs=1500, lr=0.05, grad_tol=1e-4)
DESK_REFINE = dict(epochs=100, lr=0.02, n_mc=32)
DESK_VB = dict(epochs=1500, lr=0.02, n_mc=32)
DESK_HMC = dict(n_chains=4, n_warmup=300, n_samples=150, leapfrog_steps=24)


def make_desk_task(seed: int, n_classes: int = 10, n_features: int = 64, n_total: int = 10_000):
    """The mixture-of-Gaussians benchmark with its 80/20 split."""
    full = gen_mixture_classes(n_classes, n_features, n_total, RngStream(seed, _S_DATA))
    return train_val_split(full, 0.2, RngStream(seed, _S_SPLIT))


def run_compare(
    train: Dataset,
    test: Dataset,
    methods: list[str],
    precision: float = 1.0,
    n_pred_samples: int = 20,
    seed: int = 0,
    map_config: MapConfig | None = None,
    refine_overrides: dict | None = None,
    hmc_overrides: dict | None = None,
    vb_overrides: dict | None = None,
) -> dict:
    """Fit every requested method on `train`, score predictives on `test`.

    Parameter draws for LA and its refinements share one base stream, so the
    refined predictive differs from the LA predictive only through the flow.
    MMD-to-HMC columns appear when 'hmc' is among the methods.
    """
    model = LinearModel(train.p, train.n_classes)
    lik = Likelihood("categorical")
    map_config = map_config or MapConfig(**{**DESK_MAP.__dict__, "seed": seed})

    t0 = time.perf_counter()
    post, map_info = fit_laplace(model, lik, train, precision, map_config)
    la_seconds = time.perf_counter() - t0

    reports: list[MetricsReport] = []
    param_samples: dict[str, np.ndarray] = {}
    extras: dict = {"map_info": map_info, "la_seconds": la_seconds}

    hmc_pool = None
    chains = None
    if "hmc" in methods:
        lp, glp = _log_post_closures(model, lik, train, precision)
        hmc_cfg = HmcConfig(seed=seed, **{**DESK_HMC, **(hmc_overrides or {})})
        inits = _jittered_inits(post, hmc_cfg.n_chains, RngStream(seed, _S_HMC_INIT))
        t0 = time.perf_counter()
        chains = hmc_sample(lp, glp, inits, hmc_cfg)
        extras["hmc_seconds"] = time.perf_counter() - t0
        extras["hmc_rhat_max"] = float(gelman_rubin(chains).max())
        extras["hmc_accept_rates"] = chains.accept_rates.tolist()
        hmc_pool = chains.pooled()

    base_draws = post.sample(n_pred_samples, RngStream(seed, _S_PRED))

    for method in methods:
        meta = {"n_samples": n_pred_samples, "seed": seed}
        if method == "map":
            pm = mc_predictive(post.mean[None, :], model, lik, test.X)
            pm.method = "map"
            meta["n_samples"] = 1
        elif method == "map-temp":
            # temperature needs labels the deployed weights never trained on:
            # refit on train-minus-validation, tune T on the held-out slice
            tr_fit, val = train_val_split(train, 0.125, RngStream(seed, _S_SPLIT + 1))
            theta_fit, _ = fit_map(model, lik, tr_fit, precision, map_config)
            t_star = temperature_scale(model.forward(theta_fit, val.X), val.y)
            probs = softmax(model.forward(theta_fit, test.X) / t_star)
            pm = PredictiveMatrix(probs, method="map-temp", n_samples=1)
            meta.update(temperature=t_star, n_samples=1)
        elif method == "la":
            pm = mc_predictive(base_draws, model, lik, test.X)
            param_samples["la"] = post.sample(600, RngStream(seed, _S_MMD))
        elif method == "vb":
            vb_cfg = RefineConfig(
                seed=seed, n_layers=1, **{**DESK_VB, **(vb_overrides or {})}
            )
            t0 = time.perf_counter()
            vb_post = meanfield_vb(model, lik, train, precision, vb_cfg)
            meta["fit_seconds"] = time.perf_counter() - t0
            vb_draws = vb_post.sample(n_pred_samples, RngStream(seed, _S_VB_PRED))
            pm = mc_predictive(vb_draws, model, lik, test.X)
            pm.method = "vb"
            param_samples["vb"] = vb_post.sample(600, RngStream(seed, _S_MMD + 1))
        elif method == "hmc":
            pm = mc_predictive(hmc_pool, model, lik, test.X)
            pm.method = "hmc"
            meta["n_samples"] = hmc_pool.shape[0]
        else:
            ell = int(_REFINE_METHOD.match(method).group(1))
            ref_cfg = RefineConfig(
                seed=seed, n_layers=ell, **{**DESK_REFINE, **(refine_overrides or {})}
            )
            t0 = time.perf_counter()
            rp, trace = refine(post, model, lik, train, precision, ref_cfg)
            meta["fit_seconds"] = time.perf_counter() - t0
            meta["elbo_gain"] = float(max(trace.eval_elbo) - trace.eval_elbo[0])
            draws, _ = flow_forward(rp.flow, base_draws)
            pm = mc_predictive(draws, model, lik, test.X)
            pm.method = method
            stream = RngStream(seed, _S_MMD + 2 + ell)
            mmd_draws, _ = flow_forward(rp.flow, post.sample(600, stream))
            param_samples[method] = mmd_draws

        mmd_value = None
        if hmc_pool is not None:
            if method == "hmc":
                half = chains.n_chains // 2
                if half >= 1:
                    a = chains.samples[:half].reshape(-1, chains.dim)
                    b = chains.samples[half:].reshape(-1, chains.dim)
                    mmd_value = mmd(a, b)
            elif method in param_samples:
                mmd_value = mmd(param_samples[method], hmc_pool)
        reports.append(
            MetricsReport.from_predictions(
                method, pm, test.y, mmd_to_reference=mmd_value, **meta
            )
        )

    return {"reports": reports, "extras": extras, "precision": precision}


def run_ablate_flow(
    train: Dataset,
    test: Dataset,
    lengths: list[int],
    bases: list[str],
    precision: float = 1.0,
    n_pred_samples: int = 20,
    seed: int = 0,
    refine_overrides: dict | None = None,
) -> list[dict]:
    """NLL and wall-clock of refinement per (base distribution, flow length)."""
    model = LinearModel(train.p, train.n_classes)
    lik = Likelihood("categorical")
    post, _ = fit_laplace(
        model, lik, train, precision, MapConfig(**{**DESK_MAP.__dict__, "seed": seed})
    )
    rows = []
    for base_name in bases:
        if base_name == "la":
            base = post
        elif base_name == "standard-normal":
            base = GaussianPosterior(
                mean=np.zeros(model.dim),
                cov=np.eye(model.dim),
                chol=np.eye(model.dim),
                prior_precision=precision,
                provenance="manual",
            )
        else:
            raise ValueError(f"unknown base {base_name!r}")
        for ell in lengths:
            cfg = RefineConfig(
                seed=seed, n_layers=ell, **{**DESK_REFINE, **(refine_overrides or {})}
            )
            t0 = time.perf_counter()
            rp, trace = refine(base, model, lik, train, precision, cfg)
            seconds = time.perf_counter() - t0
            draws, _ = flow_forward(rp.flow, base.sample(n_pred_samples, RngStream(seed, _S_PRED)))
            pm = mc_predictive(draws, model, lik, test.X)
            rows.append(
                {
                    "base": base_name,
                    "flow_length": ell,
                    "nll": nll(pm, test.y),
                    "seconds": seconds,
                    "elbo_best": float(max(trace.eval_elbo)),
                    "seed": seed,
                }
            )
    return rows


def run_ood(
    train: Dataset,
    test_in: Dataset,
    out_features: np.ndarray,
    methods: list[str],
    precision: float = 1.0,
    n_pred_samples: int = 20,
    seed: int = 0,
    refine_overrides: dict | None = None,
) -> list[dict]:
    """FPR95 per method from max-probability scores on in/out test sets."""
    out_features = np.atleast_2d(out_features)
    if out_features.shape[1] != train.p:
        raise ValueError(
            f"out-of-distribution features have {out_features.shape[1]} columns, "
            f"model expects {train.p}"
        )
    model = LinearModel(train.p, train.n_classes)
    lik = Likelihood("categorical")
    post, _ = fit_laplace(
        model, lik, train, precision, MapConfig(**{**DESK_MAP.__dict__, "seed": seed})
    )
    base_draws = post.sample(n_pred_samples, RngStream(seed, _S_PRED))
    rows = []
    for method in methods:
        if method == "map":
            draws = post.mean[None, :]
        elif method == "la":
            draws = base_draws
        elif _REFINE_METHOD.match(method):
            ell = int(_REFINE_METHOD.match(method).group(1))
            cfg = RefineConfig(
                seed=seed, n_layers=ell, **{**DESK_REFINE, **(refine_overrides or {})}
            )
            rp, _ = refine(post, model, lik, train, precision, cfg)
            draws, _ = flow_forward(rp.flow, base_draws)
        else:
            raise ValueError(f"method {method!r} is not supported for OOD scoring")
        scores_in = mc_predictive(draws, model, lik, test_in.X).confidence
        scores_out = mc_predictive(draws, model, lik, out_features).confidence
        rows.append(
            {"method": method, "fpr95": fpr95(scores_in, scores_out), "seed": seed}
        )
    return rows


# ------------------------------------------------- MC vs analytic routes

MLP_REGRESSION_WIDTHS = [1, 20, 1]
MLP_CLASSIFIER_WIDTHS = [2, 10, 10, 2]


def _fit_mlp_map(net, lik, data, precision, seed, epochs=8000, lr=0.05):
    """Adam phase plus an L-BFGS polish: the exact-Hessian Laplace build needs
    a true local maximum, and first-order steps alone stall above the
    curvature floor on these tiny tanh nets."""
    from scipy.optimize import minimize

    from .laplace import fit_map, hessian_log_joint, laplace_posterior

    cfg = MapConfig(max_epochs=epochs, lr=lr, grad_tol=1e-6, seed=seed)
    theta0 = net.init_params(RngStream(seed, _S_MAP).generator)
    theta, info = fit_map(net, lik, data, precision, cfg, theta0=theta0)

    def objective(t):
        return (
            -log_joint(net, lik, t, data, precision),
            -grad_log_joint(net, lik, t, data, precision),
        )

    polish = minimize(objective, theta, jac=True, method="L-BFGS-B",
                      options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-16})
    theta = polish.x
    info = dict(info)
    info["grad_norm"] = float(
        np.linalg.norm(grad_log_joint(net, lik, theta, data, precision))
    )
    info["converged"] = info["grad_norm"] < 1e-4
    lam_mat = hessian_log_joint(net, lik, theta, data, precision)
    return laplace_posterior(theta, lam_mat, precision), info


def run_mc_vs_analytic(
    seed: int = 0,
    grid2d: int = 40,
    n_mc_regression: int = 10_000,
    n_mc_grid: int = 2000,
    n_control: int = 100_000,
    precision: float = 0.5,
) -> dict:
    """Three arms: regression MC-vs-linearized, 2D MC-vs-MPA grids, and the
    linear-model control where both routes must agree."""
    out: dict = {}

    # regression arm: all-layer LA on the gappy curve
    reg_data = gen_toy_regression(RngStream(seed, 1))
    net = TinyMLP(MLP_REGRESSION_WIDTHS)
    lik_reg = Likelihood("gaussian", sigma_noise=0.3)
    reg_post, reg_info = _fit_mlp_map(net, lik_reg, reg_data, precision, seed)
    x_test = np.linspace(-5.0, 5.0, 200)[:, None]
    draws = reg_post.sample(n_mc_regression, RngStream(seed, _S_PRED))
    mc_mean, mc_var = mc_predictive_regression(draws, net, lik_reg, x_test)
    lin_mean = np.empty(len(x_test))
    lin_var = np.empty(len(x_test))
    for i, x in enumerate(x_test):
        og = linearized_output(reg_post, net, x)
        lin_mean[i] = og.mean[0]
        lin_var[i] = og.cov[0, 0] + lik_reg.sigma_noise**2
    out["regression"] = {
        "x": x_test[:, 0],
        "mc_mean": mc_mean,
        "mc_std": np.sqrt(mc_var),
        "lin_mean": lin_mean,
        "lin_std": np.sqrt(lin_var),
        "train_x": reg_data.X[:, 0],
        "train_y": reg_data.y,
        "map_info": reg_info,
        "disagreement_mean": float(np.mean(np.abs(mc_mean - lin_mean))),
        "disagreement_std": float(np.mean(np.abs(np.sqrt(mc_var) - np.sqrt(lin_var)))),
    }

    # classification arm: tanh net, MC vs MPA confidence over a 2D grid
    clf_data = gen_toy_logreg(RngStream(seed, 2))
    clf_y2 = clf_data.y
    clf2 = Dataset(clf_data.X, clf_y2, 2)
    net2 = TinyMLP(MLP_CLASSIFIER_WIDTHS)
    lik_cat = Likelihood("categorical")
    clf_post, clf_info = _fit_mlp_map(net2, lik_cat, clf2, precision, seed)
    axis = np.linspace(-4.0, 4.0, grid2d)
    mesh = np.stack(np.meshgrid(axis, axis, indexing="ij")).reshape(2, -1).T
    draws2 = clf_post.sample(n_mc_grid, RngStream(seed, _S_PRED + 1))
    pm_mc = mc_predictive(draws2, net2, lik_cat, mesh)
    mpa_rows = np.empty((mesh.shape[0], 2))
    for i, x in enumerate(mesh):
        og = linearized_output(clf_post, net2, x)
        mpa_rows[i] = mpa(og.mean, np.diag(og.cov))
    out["grid2d"] = {
        "axis": axis,
        "points": mesh,
        "mc_confidence": pm_mc.confidence,
        "mpa_confidence": mpa_rows.max(axis=1),
        "map_info": clf_info,
        "disagreement_mean": float(
            np.mean(np.abs(pm_mc.confidence - mpa_rows.max(axis=1)))
        ),
    }

    # linear control: the two sampling routes coincide in distribution
    lin_model = LinearModel(2, 1)
    lik_b = Likelihood("bernoulli")
    lin_post, _ = fit_laplace(
        lin_model, lik_b, clf_data, 1.0, MapConfig(max_epochs=3000, lr=0.05, grad_tol=1e-7, seed=seed)
    )
    x_ctrl = gen_toy_logreg(RngStream(seed + 1, 2)).X[:20]
    param_draws = lin_post.sample(n_control, RngStream(seed, _S_PRED + 2))
    pm_param = mc_predictive(param_draws, lin_model, lik_b, x_ctrl)
    outputs = [linearized_output(lin_post, lin_model, x) for x in x_ctrl]
    pm_lin = linearized_mc_predictive(
        outputs, lik_b, n_control, RngStream(seed, _S_PRED + 3)
    )
    p = pm_param.probs[:, 1]
    se = np.sqrt(2.0 * np.maximum(p * (1 - p), 1e-12) / n_control)
    diff = np.abs(p - pm_lin.probs[:, 1])
    out["linear_control"] = {
        "max_abs_diff": float(diff.max()),
        "max_diff_over_se": float(np.max(diff / (3.0 * se))),
        "n_samples": n_control,
        "agrees_within_3se": bool(np.all(diff <= 3.0 * se)),
    }
    return out
