"""CLI surface: manifests, determinism, failure paths, schema validation."""

import json
import subprocess
import sys

import numpy as np
import pytest

from flowrefine.cli import main


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def strip_wall_clock(doc):
    """Remove timing fields so byte-level comparisons ignore them."""
    if isinstance(doc, dict):
        return {
            k: strip_wall_clock(v)
            for k, v in doc.items()
            if k not in ("wall_clock_seconds", "epoch_seconds", "fit_seconds", "seconds")
        }
    if isinstance(doc, list):
        return [strip_wall_clock(v) for v in doc]
    return doc


class TestMcGridCommand:
    def test_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "run"
        code = main(
            ["mc-grid", "--grid", "6", "--repeats", "2", "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        manifest = read_json(out / "manifest.json")
        assert manifest["status"] == "ok"
        assert manifest["subcommand"] == "mc-grid"
        for name in manifest["artifacts"]:
            assert (out / name).exists()
        results = read_json(out / "results.json")
        assert results["results"]["max_probit_error"] < results["results"]["max_mc_error"]

    def test_seed_determinism_byte_for_byte(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["mc-grid", "--grid", "5", "--repeats", "2", "--seed", "11", "--out", str(out)]) == 0
        for name in ["mc_mean_error.csv", "mc_max_error.csv", "probit_error.csv"]:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        r1 = strip_wall_clock(read_json(out1 / "results.json"))
        r2 = strip_wall_clock(read_json(out2 / "results.json"))
        assert r1 == r2

    def test_invalid_range_fails_with_manifest(self, tmp_path, capsys):
        out = tmp_path / "bad"
        code = main(["mc-grid", "--m-range", "5", "-5", "--out", str(out)])
        assert code != 0
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "\n" not in err.strip()
        manifest = read_json(out / "manifest.json")
        assert manifest["status"] == "failed"
        assert "error" in manifest


class TestRefineCommand:
    def test_zero_epochs_matches_base_posterior(self, tmp_path):
        from flowrefine.data import load_posterior
        from flowrefine.flows import sample_refined
        from flowrefine.metrics import nll
        from flowrefine.predictive import mc_predictive
        from flowrefine.models import Likelihood, LinearModel
        from flowrefine.rng import RngStream
        from flowrefine.cli import _load_dataset

        out = tmp_path / "r0"
        code = main(
            ["refine", "--data", "toy-2d", "--epochs", "0", "--flow-length", "3",
             "--seed", "4", "--out", str(out)]
        )
        assert code == 0
        rp = load_posterior(out / "posterior.json")
        train, test = _load_dataset("toy-2d", 4)
        model = LinearModel(train.p, train.n_classes)
        lik = Likelihood("categorical")
        draws_ref, _ = sample_refined(rp, 20, RngStream(4, 123))
        draws_base = rp.base.sample(20, RngStream(4, 123))
        assert np.max(np.abs(draws_ref - draws_base)) < 1e-12
        pm_ref = mc_predictive(draws_ref, model, lik, test.X)
        pm_base = mc_predictive(draws_base, model, lik, test.X)
        assert abs(nll(pm_ref, test.y) - nll(pm_base, test.y)) < 1e-9

    def test_elbo_trace_written(self, tmp_path):
        out = tmp_path / "r1"
        code = main(
            ["refine", "--data", "toy-2d", "--epochs", "8", "--lr", "0.01",
             "--flow-length", "2", "--seed", "0", "--out", str(out)]
        )
        assert code == 0
        results = read_json(out / "results.json")
        trace = results["results"]["elbo_trace"]
        assert len(trace["elbo"]) == 8
        assert len(trace["eval_elbo"]) == 9  # init + one per epoch
        assert max(trace["eval_elbo"]) >= trace["eval_elbo"][0]

    def test_deterministic(self, tmp_path):
        docs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(
                ["refine", "--data", "toy-2d", "--epochs", "5", "--flow-length", "2",
                 "--seed", "9", "--out", str(out)]
            ) == 0
            docs.append(strip_wall_clock(read_json(out / "results.json")))
            docs.append((out / "posterior.json").read_bytes())
        assert docs[0] == docs[2]
        assert docs[1] == docs[3]


class TestCompareCommand:
    def test_unknown_method_rejected(self, tmp_path, capsys):
        out = tmp_path / "cmp"
        code = main(
            ["compare", "--data", "toy-2d", "--methods", "map,wizard", "--out", str(out)]
        )
        assert code != 0
        assert "wizard" in capsys.readouterr().err

    def test_toy_task_map_and_temp(self, tmp_path):
        out = tmp_path / "cmp2"
        code = main(
            ["compare", "--data", "toy-2d", "--methods", "map,map-temp,la",
             "--s-samples", "10", "--seed", "1", "--out", str(out)]
        )
        assert code == 0
        rows = read_json(out / "results.json")["results"]["methods"]
        by_method = {r["method"]: r for r in rows}
        assert set(by_method) == {"map", "map-temp", "la"}
        # no HMC requested: no MMD column anywhere
        assert all("mmd_to_reference" not in r for r in rows)
        assert (out / "metrics.csv").exists()


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "flowrefine.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        for sub in ["mc-grid", "toy-2d", "refine", "compare", "ablate-flow", "ood", "mc-vs-analytic"]:
            assert sub in proc.stdout

    def test_module_main_runs(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "flowrefine.cli", "mc-grid", "--grid", "4",
             "--repeats", "1", "--seed", "0", "--out", str(tmp_path / "o")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0


class TestSchemas:
    def test_outputs_validate(self, tmp_path):
        import jsonschema

        from flowrefine.cli import _schema

        out = tmp_path / "v"
        main(["mc-grid", "--grid", "4", "--repeats", "1", "--out", str(out)])
        jsonschema.validate(read_json(out / "results.json"), _schema("results.schema.json"))
        jsonschema.validate(read_json(out / "manifest.json"), _schema("manifest.schema.json"))

    def test_schema_rejects_malformed(self):
        import jsonschema

        from flowrefine.cli import _schema

        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate({"format_version": 1}, _schema("results.schema.json"))
