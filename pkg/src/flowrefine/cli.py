"""Command-line entry point: one subcommand per experiment family.

Every run owns one output directory and always leaves a ``manifest.json``
there, marked ``ok`` or ``failed``, so partial outputs are detectable. All
JSON documents validate against the schema files shipped under
``flowrefine/schema/`` before they are written. A fixed ``--seed`` makes
every output byte-identical across runs, except for wall-clock fields.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__

RESULTS_FORMAT_VERSION = 1


def _cap_threads() -> None:
    value = os.environ.get("REFINE_NUM_THREADS")
    if not value:
        return
    try:
        limit = max(1, int(value))
    except ValueError:
        raise SystemExit(f"error: REFINE_NUM_THREADS={value!r} is not an integer")
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=limit)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(limit)


def _schema(name: str) -> dict:
    ref = resources.files("flowrefine").joinpath(f"schema/{name}")
    return json.loads(ref.read_text(encoding="utf-8"))


def _write_json(path: Path, doc: dict, schema_name: str) -> None:
    import jsonschema

    jsonschema.validate(doc, _schema(schema_name))
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_results(out: Path, subcommand: str, seed: int, results: dict) -> str:
    doc = {
        "format_version": RESULTS_FORMAT_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "results": results,
    }
    _write_json(out / "results.json", doc, "results.schema.json")
    return "results.json"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, float):
                    cells.append(f"{v:.17g}")
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def _write_surface_csv(path: Path, m_grid, s_grid, surface) -> None:
    rows = [
        (float(m), float(s), float(surface[i, j]))
        for i, m in enumerate(m_grid)
        for j, s in enumerate(s_grid)
    ]
    _write_csv(path, ["m", "s", "value"], rows)


def _load_dataset(spec: str, seed: int, role: str = "data"):
    from .experiments import make_desk_task
    from .data import gen_mixture_classes, gen_toy_logreg, load_features_csv
    from .rng import RngStream

    if spec == "mixture":
        return make_desk_task(seed)
    if spec == "toy-2d":
        from .data import train_val_split

        full = gen_toy_logreg(RngStream(seed, 1))
        return train_val_split(full, 0.2, RngStream(seed, 2))
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"{role} {spec!r} is neither a builtin nor a file")
    from .data import train_val_split
    from .rng import RngStream as _R

    full = load_features_csv(path)
    return train_val_split(full, 0.2, _R(seed, 2))


# ------------------------------------------------------------ subcommands


def cmd_mc_grid(args, out: Path) -> tuple[dict, list[str]]:
    from .experiments import run_mc_grid

    res = run_mc_grid(
        n_samples=args.s_samples,
        m_range=tuple(args.m_range),
        s_range=tuple(args.s_range),
        grid=args.grid,
        n_repeats=args.repeats,
        seed=args.seed,
    )
    grid = res["grid"]
    artifacts = []
    for name, surf in [
        ("mc_mean_error.csv", grid.mc_mean_error),
        ("mc_max_error.csv", grid.mc_max_error),
        ("probit_error.csv", grid.probit_error),
    ]:
        _write_surface_csv(out / name, grid.m_grid, grid.s_grid, surf)
        artifacts.append(name)
    return res["summary"], artifacts


def cmd_toy_2d(args, out: Path) -> tuple[dict, list[str]]:
    from .data import save_samples
    from .experiments import run_toy2d

    res = run_toy2d(flow_lengths=args.flow_lengths, seed=args.seed)
    artifacts = []
    for name, samples in res["samples"].items():
        prov = "hmc" if name == "hmc" else ("vb" if name == "vb" else ("la" if name == "la" else "refined"))
        fname = f"samples_{name}.bin"
        save_samples(out / fname, samples, prov, args.seed)
        artifacts.append(fname)
    _write_csv(
        out / "mmd.csv",
        ["method", "mmd_to_hmc"],
        sorted(res["mmd"].items()),
    )
    artifacts.append("mmd.csv")
    g1, g2 = res["kde_axes"]
    for name, grid in res["kde_grids"].items():
        fname = f"kde_{name}.csv"
        _write_surface_csv(out / fname, g1, g2, grid)
        artifacts.append(fname)
    results = {
        "mmd": {k: float(v) for k, v in res["mmd"].items()},
        "rhat_max": float(res["rhat"].max()),
        "accept_rates": [float(a) for a in res["accept_rates"]],
        "precision": res["precision"],
    }
    return results, artifacts


def cmd_refine(args, out: Path) -> tuple[dict, list[str]]:
    from .data import load_posterior, save_posterior
    from .laplace import MapConfig, fit_laplace
    from .models import Likelihood, LinearModel
    from .refine import RefineConfig, refine

    train, _ = _load_dataset(args.data, args.seed)
    model = LinearModel(train.p, train.n_classes)
    lik = Likelihood("categorical")
    if args.in_posterior:
        base = load_posterior(args.in_posterior)
        if base.dim != model.dim:
            raise ValueError(
                f"posterior dimension {base.dim} does not match model dimension {model.dim}"
            )
    else:
        base, _ = fit_laplace(
            model, lik, train, args.precision, MapConfig(seed=args.seed)
        )
    config = RefineConfig(
        epochs=args.epochs,
        lr=args.lr,
        n_layers=args.flow_length,
        seed=args.seed,
    )
    rp, trace = refine(base, model, lik, train, args.precision, config)
    save_posterior(out / "posterior.json", rp)
    results = {
        "posterior_file": "posterior.json",
        "elbo_trace": {
            "elbo": [float(v) for v in trace.elbo],
            "lr": [float(v) for v in trace.lr],
            "eval_elbo": [float(v) for v in trace.eval_elbo],
            "epoch_seconds": [float(v) for v in trace.epoch_seconds],
            "best_epoch": trace.best_epoch,
        },
    }
    return results, ["posterior.json"]


def cmd_compare(args, out: Path) -> tuple[dict, list[str]]:
    from .experiments import parse_methods, run_compare

    methods = parse_methods(args.methods)
    train, test = _load_dataset(args.data, args.seed)
    res = run_compare(
        train,
        test,
        methods,
        precision=args.precision,
        n_pred_samples=args.s_samples,
        seed=args.seed,
    )
    rows = [r.to_dict() for r in res["reports"]]
    _write_csv(
        out / "metrics.csv",
        ["method", "nll", "ece", "brier", "accuracy", "mmd_to_reference"],
        [
            (
                r["method"],
                r["nll"],
                r["ece"],
                r["brier"],
                r["accuracy"],
                r.get("mmd_to_reference", ""),
            )
            for r in rows
        ],
    )
    results = {"methods": rows, "precision": args.precision}
    for key in ("hmc_rhat_max", "hmc_accept_rates"):
        if key in res["extras"]:
            results[key] = res["extras"][key]
    return results, ["metrics.csv"]


def cmd_ablate_flow(args, out: Path) -> tuple[dict, list[str]]:
    from .experiments import run_ablate_flow

    train, test = _load_dataset(args.data, args.seed)
    rows = run_ablate_flow(
        train,
        test,
        lengths=args.lengths,
        bases=args.base,
        precision=args.precision,
        seed=args.seed,
    )
    _write_csv(
        out / "ablate.csv",
        ["base", "flow_length", "nll", "seconds"],
        [(r["base"], r["flow_length"], r["nll"], r["seconds"]) for r in rows],
    )
    return {"rows": rows}, ["ablate.csv"]


def cmd_ood(args, out: Path) -> tuple[dict, list[str]]:
    from .data import gen_mixture_classes
    from .experiments import parse_methods, run_ood
    from .rng import RngStream

    methods = parse_methods(args.methods)
    train, test_in = _load_dataset(args.in_data, args.seed, role="in-data")
    if args.out_data == "mixture-shifted":
        ood_set = gen_mixture_classes(
            train.n_classes, train.p, 2000, RngStream(args.seed + 7919, 9)
        )
        out_features = ood_set.X
    else:
        out_train, out_test = _load_dataset(args.out_data, args.seed, role="out-data")
        out_features = np.vstack([out_train.X, out_test.X])
    rows = run_ood(
        train,
        test_in,
        out_features,
        methods,
        precision=args.precision,
        n_pred_samples=args.s_samples,
        seed=args.seed,
    )
    _write_csv(
        out / "ood.csv",
        ["method", "fpr95"],
        [(r["method"], r["fpr95"]) for r in rows],
    )
    return {"rows": rows}, ["ood.csv"]


def cmd_mc_vs_analytic(args, out: Path) -> tuple[dict, list[str]]:
    from .experiments import run_mc_vs_analytic

    res = run_mc_vs_analytic(seed=args.seed, grid2d=args.grid2d)
    reg = res["regression"]
    _write_csv(
        out / "regression.csv",
        ["x", "mc_mean", "mc_std", "lin_mean", "lin_std"],
        zip(
            reg["x"].tolist(),
            reg["mc_mean"].tolist(),
            reg["mc_std"].tolist(),
            reg["lin_mean"].tolist(),
            reg["lin_std"].tolist(),
        ),
    )
    grid = res["grid2d"]
    _write_csv(
        out / "grid2d.csv",
        ["x1", "x2", "mc_confidence", "mpa_confidence"],
        zip(
            grid["points"][:, 0].tolist(),
            grid["points"][:, 1].tolist(),
            grid["mc_confidence"].tolist(),
            grid["mpa_confidence"].tolist(),
        ),
    )
    results = {
        "linear_control": res["linear_control"],
        "regression_disagreement": reg["disagreement_std"],
        "grid_disagreement": grid["disagreement_mean"],
    }
    return results, ["regression.csv", "grid2d.csv"]


# ----------------------------------------------------------------- driver


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowrefine",
        description="Posterior refinement experiments: Gaussian bases, radial flows, HMC gold standard.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("mc-grid", help="MC vs probit error surfaces for the logistic-Gaussian integral")
    p.add_argument("--s-samples", type=int, default=100)
    p.add_argument("--m-range", type=float, nargs=2, default=[-5.0, 5.0])
    p.add_argument("--s-range", type=float, nargs=2, default=[0.1, 10.0])
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--repeats", type=int, default=10)
    p.set_defaults(func=cmd_mc_grid)

    p = sub.add_parser("toy-2d", help="LA / VB / refined / HMC posteriors on the 2D logistic task")
    p.add_argument("--flow-lengths", type=_int_list, default=[5])
    p.set_defaults(func=cmd_toy_2d)

    p = sub.add_parser("refine", help="refine a Gaussian posterior with a radial flow")
    p.add_argument("--data", default="mixture")
    p.add_argument("--lambda", dest="precision", type=float, default=1.0)
    p.add_argument("--flow-length", type=int, default=5)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--in-posterior", default=None)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("compare", help="calibration metrics per method on one task")
    p.add_argument("--data", default="mixture")
    p.add_argument("--methods", default="map,map-temp,la,la-refine-5,hmc")
    p.add_argument("--lambda", dest="precision", type=float, default=1.0)
    p.add_argument("--s-samples", type=int, default=20)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate-flow", help="NLL and wall-clock vs flow length and base distribution")
    p.add_argument("--data", default="mixture")
    p.add_argument("--lengths", type=_int_list, default=[1, 5, 10, 20])
    p.add_argument("--base", type=lambda t: [x.strip() for x in t.split(",")], default=["la", "standard-normal"])
    p.add_argument("--lambda", dest="precision", type=float, default=1.0)
    p.set_defaults(func=cmd_ablate_flow)

    p = sub.add_parser("ood", help="FPR95 of max-probability scores on in vs out data")
    p.add_argument("--in-data", default="mixture")
    p.add_argument("--out-data", default="mixture-shifted")
    p.add_argument("--methods", default="map,la,la-refine-5")
    p.add_argument("--lambda", dest="precision", type=float, default=1.0)
    p.add_argument("--s-samples", type=int, default=20)
    p.set_defaults(func=cmd_ood)

    p = sub.add_parser("mc-vs-analytic", help="MC vs linearized/MPA predictive comparisons")
    p.add_argument("--grid2d", type=int, default=40)
    p.set_defaults(func=cmd_mc_vs_analytic)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
    return parser


def _write_manifest(
    out: Path,
    subcommand: str,
    seed: int,
    config: dict,
    artifacts: list[str],
    seconds: float,
    status: str,
    error: str | None = None,
) -> None:
    doc = {
        "format_version": RESULTS_FORMAT_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "artifacts": artifacts,
        "wall_clock_seconds": seconds,
        "library_version": __version__,
        "status": status,
    }
    if error is not None:
        doc["error"] = error
    _write_json(out / "manifest.json", doc, "manifest.schema.json")


def main(argv: list[str] | None = None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "subcommand", "out") and not callable(v)
    }
    t0 = time.perf_counter()
    try:
        results, artifacts = args.func(args, out)
        artifacts.append(_write_results(out, args.subcommand, args.seed, results))
        _write_manifest(
            out,
            args.subcommand,
            args.seed,
            config,
            artifacts + ["manifest.json"],
            time.perf_counter() - t0,
            "ok",
        )
        return 0
    except Exception as err:  # one-line machine-parsable failure
        _write_manifest(
            out,
            args.subcommand,
            args.seed,
            config,
            [],
            time.perf_counter() - t0,
            "failed",
            error=f"{type(err).__name__}: {err}",
        )
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
