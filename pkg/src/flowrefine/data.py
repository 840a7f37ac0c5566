"""Synthetic dataset generators and persistence for posteriors and samples.

Generators mirror the toy setups of the experiments: a bimodal 2D logistic
regression task, a gappy 1D regression curve, and a mixture-of-Gaussians
classification benchmark whose mode count equals the class count. External
feature embeddings arrive through a plain CSV with columns
``f0,...,f{P-1},label``.

Persisted artifacts carry a ``format_version`` and loading refuses anything
newer than it knows. Posterior JSON keeps the mean and flow parameters with
full decimal round-trip precision; sample sets default to a compact binary
layout (32-byte header + little-endian float64 rows) with a CSV fallback.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .flows import RadialFlowStack, RadialLayer, RefinedPosterior
from .laplace import GaussianPosterior
from .models import Dataset, REGRESSION
from .rng import RngStream

__all__ = [
    "gen_toy_logreg",
    "gen_toy_regression",
    "gen_mixture_classes",
    "load_features_csv",
    "save_features_csv",
    "save_posterior",
    "load_posterior",
    "save_samples",
    "load_samples",
    "train_val_split",
]

FORMAT_VERSION = 1
_SAMPLES_MAGIC = b"FRSM"
# magic(4) version(u32) d(u32) n(u32) provenance(u32) seed(u64) pad(4) = 32 bytes
_HEADER_STRUCT = struct.Struct("<4sIIIIQ4x")
_PROVENANCE_CODES = {"la": 0, "refined": 1, "hmc": 2, "vb": 3, "manual": 4}
_PROVENANCE_NAMES = {v: k for k, v in _PROVENANCE_CODES.items()}


def gen_toy_logreg(rng: RngStream) -> Dataset:
    """Bimodal binary task: 25 points per class from N(+-[1.5, 1.5], 0.8^2 I)."""
    g = rng.generator
    center = np.array([1.5, 1.5])
    x_neg = -center + 0.8 * g.standard_normal((25, 2))
    x_pos = center + 0.8 * g.standard_normal((25, 2))
    X = np.vstack([x_neg, x_pos])
    y = np.concatenate([np.zeros(25, dtype=int), np.ones(25, dtype=int)])
    perm = g.permutation(50)
    return Dataset(X[perm], y[perm], n_classes=2)


def gen_toy_regression(rng: RngStream, n: int = 60) -> Dataset:
    """1D curve y = sin(2x) exp(-0.1 x^2) + 0.3 eps with no inputs in (-1, 1).

    The gap produces the in-between uncertainty that separates MC and
    linearized predictives on the all-layer toy model.
    """
    g = rng.generator
    # sample uniformly over [-4,-1] u [1,4] by stretching a single uniform
    u = g.uniform(0.0, 6.0, n)
    x = np.where(u < 3.0, -4.0 + u, 1.0 + (u - 3.0))
    noise = g.standard_normal(n)
    y = np.sin(2.0 * x) * np.exp(-0.1 * x**2) + 0.3 * noise
    return Dataset(x[:, None], y, n_classes=REGRESSION)


def gen_mixture_classes(
    n_classes: int, n_features: int, n_total: int, rng: RngStream, scale: float = 4.0
) -> Dataset:
    """Mixture of unit-covariance Gaussians, one mode per class.

    Mode centers are `scale` times an orthonormal frame (random rotation of
    the axes), so all pairwise center distances equal scale * sqrt(2) and the
    task difficulty is controlled by a single knob.
    """
    if n_classes > n_features:
        raise ValueError("need n_features >= n_classes for an orthonormal frame")
    g = rng.generator
    frame, _ = np.linalg.qr(g.standard_normal((n_features, n_classes)))
    centers = scale * frame.T  # (C, P)
    counts = np.full(n_classes, n_total // n_classes)
    counts[: n_total % n_classes] += 1
    X = np.empty((n_total, n_features))
    y = np.empty(n_total, dtype=int)
    pos = 0
    for c in range(n_classes):
        X[pos : pos + counts[c]] = centers[c] + g.standard_normal(
            (counts[c], n_features)
        )
        y[pos : pos + counts[c]] = c
        pos += counts[c]
    perm = g.permutation(n_total)
    return Dataset(X[perm], y[perm], n_classes=n_classes)


def train_val_split(data: Dataset, val_fraction: float, rng: RngStream):
    """Deterministic shuffled split; classification keeps the class count."""
    n_val = int(round(data.n * val_fraction))
    if not 0 < n_val < data.n:
        raise ValueError("split leaves an empty side")
    perm = rng.permutation(data.n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (
        Dataset(data.X[train_idx], data.y[train_idx], data.n_classes),
        Dataset(data.X[val_idx], data.y[val_idx], data.n_classes),
    )


def load_features_csv(path) -> Dataset:
    """Parse a `f0,...,f{P-1},label` CSV into a classification Dataset."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        columns = header.split(",")
        if len(columns) < 2 or columns[-1] != "label":
            raise ValueError(f"{path}: header must be f0,...,f{{P-1}},label")
        p = len(columns) - 1
        expected = [f"f{i}" for i in range(p)] + ["label"]
        if columns != expected:
            raise ValueError(f"{path}: unexpected header {header!r}")
        feats, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != p + 1:
                raise ValueError(f"{path}:{lineno}: expected {p + 1} cells, got {len(cells)}")
            try:
                row = [float(c) for c in cells[:-1]]
                label = int(cells[-1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed number") from None
            if not all(np.isfinite(row)):
                raise ValueError(f"{path}:{lineno}: non-finite feature value")
            if label < 0:
                raise ValueError(f"{path}:{lineno}: negative label")
            feats.append(row)
            labels.append(label)
    if not feats:
        raise ValueError(f"{path}: no data rows")
    y = np.array(labels, dtype=int)
    return Dataset(np.array(feats), y, n_classes=int(y.max()) + 1)


def save_features_csv(path, data: Dataset) -> None:
    path = Path(path)
    header = ",".join([f"f{i}" for i in range(data.p)] + ["label"])
    with path.open("w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i in range(data.n):
            cells = [repr(float(v)) for v in data.X[i]] + [str(int(data.y[i]))]
            fh.write(",".join(cells) + "\n")


def _posterior_payload(post) -> dict:
    if isinstance(post, RefinedPosterior):
        base = post.base
        flow = [
            {
                "z0": [float(v) for v in layer.z0],
                "raw_alpha": float(layer.raw_alpha),
                "raw_beta": float(layer.raw_beta),
            }
            for layer in post.flow.layers
        ]
        kind = "refined"
    else:
        base = post
        flow = []
        kind = "gaussian"
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "d": base.dim,
        "mean": [float(v) for v in base.mean],
        "covariance": [float(v) for v in base.cov.ravel()],
        "flow": flow,
        "provenance": base.provenance,
        "prior_precision": float(base.prior_precision),
    }


def save_posterior(path, post) -> None:
    """Write a Gaussian or refined posterior as JSON.

    Floats go through `repr`, so the mean and flow parameters reload
    bit-identically.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(_posterior_payload(post), fh, indent=1)
        fh.write("\n")


def load_posterior(path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version is None or version > FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")
    d = int(doc["d"])
    mean = np.array(doc["mean"], dtype=np.float64)
    cov = np.array(doc["covariance"], dtype=np.float64).reshape(d, d)
    base = GaussianPosterior(
        mean=mean,
        cov=cov,
        prior_precision=float(doc["prior_precision"]),
        provenance=doc["provenance"],
    )
    if doc["kind"] == "gaussian":
        return base
    if doc["kind"] != "refined":
        raise ValueError(f"{path}: unknown posterior kind {doc['kind']!r}")
    layers = [
        RadialLayer(
            z0=np.array(spec["z0"], dtype=np.float64),
            raw_alpha=float(spec["raw_alpha"]),
            raw_beta=float(spec["raw_beta"]),
        )
        for spec in doc["flow"]
    ]
    return RefinedPosterior(base, RadialFlowStack(layers))


def save_samples(path, samples: np.ndarray, provenance: str, seed: int, csv: bool = False) -> None:
    """Persist an (S, d) sample matrix; binary by default, CSV on request."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if provenance not in _PROVENANCE_CODES:
        raise ValueError(f"unknown provenance {provenance!r}")
    path = Path(path)
    if csv:
        with path.open("w", encoding="utf-8") as fh:
            fh.write(f"# d={samples.shape[1]} n={samples.shape[0]} provenance={provenance} seed={seed}\n")
            np.savetxt(fh, samples, delimiter=",", fmt="%.17g")
        return
    header = _HEADER_STRUCT.pack(
        _SAMPLES_MAGIC,
        FORMAT_VERSION,
        samples.shape[1],
        samples.shape[0],
        _PROVENANCE_CODES[provenance],
        seed,
    )
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())


def load_samples(path):
    """Read a samples file (binary or CSV); returns (samples, info dict)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _SAMPLES_MAGIC:
        magic, version, d, n, prov, seed = _HEADER_STRUCT.unpack(
            raw[: _HEADER_STRUCT.size]
        )
        if version > FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format_version {version}")
        body = np.frombuffer(raw[_HEADER_STRUCT.size :], dtype="<f8")
        if body.size != n * d:
            raise ValueError(f"{path}: expected {n * d} values, found {body.size}")
        samples = body.reshape(n, d).astype(np.float64)
        info = {"provenance": _PROVENANCE_NAMES[prov], "seed": seed}
        return samples, info
    text = raw.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: not a samples file")
    info = {}
    for tok in lines[0].lstrip("# ").split():
        key, _, val = tok.partition("=")
        info[key] = val
    samples = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
    declared = int(info.get("n", len(samples)))
    if declared != len(samples):
        raise ValueError(f"{path}: header says {declared} rows, found {len(samples)}")
    return samples, {"provenance": info.get("provenance"), "seed": int(info.get("seed", 0))}
