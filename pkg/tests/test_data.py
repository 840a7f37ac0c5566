"""Dataset generators and posterior/sample persistence."""

import numpy as np
import pytest

from flowrefine.data import (
    gen_mixture_classes,
    gen_toy_logreg,
    gen_toy_regression,
    load_features_csv,
    load_posterior,
    load_samples,
    save_features_csv,
    save_posterior,
    save_samples,
    train_val_split,
)
from flowrefine.flows import RadialFlowStack, RadialLayer, RefinedPosterior
from flowrefine.laplace import GaussianPosterior
from flowrefine.rng import RngStream


class TestToyLogreg:
    def test_size_and_balance(self):
        data = gen_toy_logreg(RngStream(0))
        assert data.n == 50
        assert data.p == 2 and data.n_classes == 2
        assert np.sum(data.y == 0) == 25 and np.sum(data.y == 1) == 25

    def test_deterministic(self):
        a = gen_toy_logreg(RngStream(4))
        b = gen_toy_logreg(RngStream(4))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_class_conditional_means(self):
        # average over many seeds: class means near +-[1.5, 1.5]
        means = []
        for s in range(40):
            d = gen_toy_logreg(RngStream(s, 5))
            means.append(d.X[d.y == 1].mean(axis=0))
        avg = np.mean(means, axis=0)
        se = np.std(means, axis=0, ddof=1) / np.sqrt(40)
        assert np.all(np.abs(avg - 1.5) < 3 * se + 0.05)


class TestToyRegression:
    def test_shape(self):
        d = gen_toy_regression(RngStream(1), n=60)
        assert d.n == 60 and d.p == 1 and d.n_classes == 0

    def test_gap_is_empty(self):
        for s in range(5):
            d = gen_toy_regression(RngStream(s, 3))
            x = d.X[:, 0]
            assert not np.any((x > -1.0) & (x < 1.0))
            assert np.all((x >= -4.0) & (x <= 4.0))

    def test_noise_scale(self):
        residuals = []
        for s in range(40):
            d = gen_toy_regression(RngStream(s, 4), n=200)
            x = d.X[:, 0]
            residuals.append(d.y - np.sin(2 * x) * np.exp(-0.1 * x**2))
        std = np.std(np.concatenate(residuals))
        assert abs(std - 0.3) < 0.01


class TestMixtureClasses:
    def test_balanced_labels(self):
        d = gen_mixture_classes(10, 64, 10_000, RngStream(0, 1))
        counts = np.bincount(d.y, minlength=10)
        assert counts.max() - counts.min() <= 1

    def test_reference_config_accepted(self):
        # the documented large configuration parses at desk scale
        d = gen_mixture_classes(10, 4096, 1000, RngStream(0, 2))
        assert d.p == 4096 and d.n == 1000

    def test_deterministic(self):
        a = gen_mixture_classes(3, 8, 90, RngStream(9, 3))
        b = gen_mixture_classes(3, 8, 90, RngStream(9, 3))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_rejects_more_classes_than_features(self):
        with pytest.raises(ValueError):
            gen_mixture_classes(5, 3, 100, RngStream(0))

    def test_map_separability(self):
        # downstream oracle: a linear classifier must exceed 90% accuracy
        from flowrefine.laplace import MapConfig, fit_map
        from flowrefine.metrics import accuracy
        from flowrefine.models import Likelihood, LinearModel
        from flowrefine.predictive import mc_predictive

        full = gen_mixture_classes(10, 64, 10_000, RngStream(0, 1))
        train, test = train_val_split(full, 0.2, RngStream(0, 2))
        model = LinearModel(64, 10)
        theta, _ = fit_map(model, Likelihood("categorical"), train, 1.0,
                           MapConfig(max_epochs=600, lr=0.05))
        pm = mc_predictive(theta[None], model, Likelihood("categorical"), test.X)
        assert accuracy(pm, test.y) > 0.9


class TestSplit:
    def test_sizes(self):
        d = gen_toy_logreg(RngStream(0))
        train, val = train_val_split(d, 0.2, RngStream(1))
        assert train.n == 40 and val.n == 10

    def test_disjoint_and_complete(self):
        d = gen_toy_logreg(RngStream(0))
        train, val = train_val_split(d, 0.3, RngStream(2))
        stacked = np.vstack([train.X, val.X])
        assert stacked.shape == d.X.shape
        assert len(np.unique(stacked, axis=0)) == d.n


class TestFeaturesCsv:
    def test_roundtrip(self, tmp_path, rng):
        d = gen_mixture_classes(3, 4, 30, RngStream(1, 1))
        path = tmp_path / "features.csv"
        save_features_csv(path, d)
        back = load_features_csv(path)
        assert np.array_equal(back.X, d.X)
        assert np.array_equal(back.y, d.y)
        assert back.n_classes == 3

    def test_hand_fixture(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("f0,f1,label\n1.5,-2.0,0\n0.25,3.5,1\n-1.0,0.5,1\n")
        d = load_features_csv(path)
        assert np.array_equal(d.X, [[1.5, -2.0], [0.25, 3.5], [-1.0, 0.5]])
        assert np.array_equal(d.y, [0, 1, 1])

    def test_nan_cell_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,label\n1.0,0\nnan,1\n")
        with pytest.raises(ValueError, match="bad.csv:3"):
            load_features_csv(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("f0,f1,label\n1.0,0\n")
        with pytest.raises(ValueError, match="short.csv:2"):
            load_features_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("a,b,label\n1,2,0\n")
        with pytest.raises(ValueError, match="header"):
            load_features_csv(path)


class TestPosteriorPersistence:
    def test_gaussian_bit_exact_roundtrip(self, tmp_path, rng):
        a = rng.standard_normal((4, 4))
        post = GaussianPosterior(
            mean=rng.standard_normal(4), cov=a @ a.T + np.eye(4),
            prior_precision=3.7, provenance="laplace",
        )
        path = tmp_path / "post.json"
        save_posterior(path, post)
        back = load_posterior(path)
        assert isinstance(back, GaussianPosterior)
        assert back.mean.tobytes() == post.mean.tobytes()
        assert np.max(np.abs(back.cov - post.cov)) < 1e-12
        assert back.prior_precision == post.prior_precision
        assert back.provenance == "laplace"

    def test_refined_roundtrip_preserves_raw_parameters(self, tmp_path, rng):
        base = GaussianPosterior(mean=rng.standard_normal(2), cov=np.eye(2))
        stack = RadialFlowStack(
            [RadialLayer(rng.standard_normal(2), float(rng.normal()), float(rng.normal()))
             for _ in range(3)]
        )
        rp = RefinedPosterior(base, stack)
        path = tmp_path / "refined.json"
        save_posterior(path, rp)
        back = load_posterior(path)
        assert isinstance(back, RefinedPosterior)
        assert back.flow.raw_parameters().tobytes() == stack.raw_parameters().tobytes()
        assert back.base.mean.tobytes() == base.mean.tobytes()

    def test_refuses_future_version(self, tmp_path):
        post = GaussianPosterior(mean=np.zeros(1), cov=np.eye(1))
        path = tmp_path / "v.json"
        save_posterior(path, post)
        doc = path.read_text().replace('"format_version": 1', '"format_version": 99')
        path.write_text(doc)
        with pytest.raises(ValueError, match="format_version"):
            load_posterior(path)


class TestSamplesPersistence:
    def test_binary_roundtrip_exact(self, tmp_path, rng):
        s = rng.standard_normal((17, 3))
        path = tmp_path / "samples.bin"
        save_samples(path, s, "hmc", seed=42)
        back, info = load_samples(path)
        assert back.tobytes() == s.tobytes()
        assert info == {"provenance": "hmc", "seed": 42}

    def test_csv_roundtrip_tolerance(self, tmp_path, rng):
        s = rng.standard_normal((8, 2))
        path = tmp_path / "samples.csv"
        save_samples(path, s, "la", seed=7, csv=True)
        back, info = load_samples(path)
        assert np.max(np.abs(back - s)) < 1e-12
        assert info["provenance"] == "la"

    def test_row_count_checked(self, tmp_path, rng):
        s = rng.standard_normal((5, 2))
        path = tmp_path / "trunc.bin"
        save_samples(path, s, "vb", seed=0)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])  # drop one row
        with pytest.raises(ValueError, match="expected"):
            load_samples(path)

    def test_unknown_provenance_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_samples(tmp_path / "x.bin", np.zeros((2, 2)), "mystery", seed=0)
