"""Calibration, accuracy, distributional-distance, and OOD metrics.

Conventions fixed here (the literature leaves them open): ECE uses 15
equal-width bins on max-probability confidence; MMD is the unbiased
quadratic-time U-statistic with an RBF kernel, median-heuristic bandwidth,
and pooled standardization; the OOD score is the maximum predicted
probability, with FPR measured at the threshold that keeps 95% of
in-distribution points above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .models import log_softmax
from .predictive import PredictiveMatrix

__all__ = [
    "MetricsReport",
    "nll",
    "ece",
    "brier",
    "accuracy",
    "mmd",
    "fpr95",
    "temperature_scale",
]

PROB_FLOOR = 1e-12


def _probs(p) -> np.ndarray:
    if isinstance(p, PredictiveMatrix):
        return p.probs
    return np.asarray(p, dtype=np.float64)


def _check_labels(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise ValueError("one label per prediction row required")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError("label out of range")
    return labels


def nll(probs, labels) -> float:
    """Mean negative log-likelihood with a 1e-12 probability floor."""
    p = _probs(probs)
    labels = _check_labels(p, labels)
    picked = np.maximum(p[np.arange(len(labels)), labels], PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def ece(probs, labels, n_bins: int = 15) -> float:
    """Expected calibration error with equal-width confidence bins."""
    if n_bins < 1:
        raise ValueError("need at least one bin")
    p = _probs(probs)
    labels = _check_labels(p, labels)
    conf = p.max(axis=1)
    pred = p.argmax(axis=1)
    correct = (pred == labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # bin b covers (edges[b], edges[b+1]]; the first bin also includes 0
    idx = np.clip(np.digitize(conf, edges[1:-1], right=True), 0, n_bins - 1)
    total = 0.0
    n = len(labels)
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(correct[mask].mean() - conf[mask].mean())
        total += count / n * gap
    return float(total)


def brier(probs, labels) -> float:
    """Mean over examples of the squared error against the one-hot label,
    summed over classes."""
    p = _probs(probs)
    labels = _check_labels(p, labels)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def accuracy(probs, labels) -> float:
    p = _probs(probs)
    labels = _check_labels(p, labels)
    return float(np.mean(p.argmax(axis=1) == labels))


def mmd(x: np.ndarray, y: np.ndarray, clamp: bool = True) -> float:
    """Unbiased squared maximum mean discrepancy between two sample sets.

    Samples are standardized by the pooled mean/std, the RBF bandwidth is the
    median pairwise distance of the pooled standardized samples, and the
    U-statistic drops diagonal terms. The unbiased estimate can dip below
    zero for close distributions; reports clamp it at 0 (pass clamp=False
    for the raw value).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("need at least two samples per set")
    if x.shape[1] != y.shape[1]:
        raise ValueError("sample sets must share a dimension")
    pooled = np.vstack([x, y])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std == 0] = 1.0
    xs = (x - mean) / std
    ys = (y - mean) / std
    bandwidth = float(np.median(pdist(np.vstack([xs, ys]))))
    if bandwidth == 0:
        bandwidth = 1.0
    gamma = 1.0 / (2.0 * bandwidth**2)

    m, n = xs.shape[0], ys.shape[0]
    kxx = np.exp(-gamma * cdist(xs, xs, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(ys, ys, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(xs, ys, "sqeuclidean"))
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    term_xy = 2.0 * kxy.mean()
    value = term_x + term_y - term_xy
    if clamp:
        return float(max(value, 0.0))
    return float(value)


def fpr95(scores_in: np.ndarray, scores_out: np.ndarray) -> float:
    """False-positive rate at the 95% true-positive threshold.

    Higher score means more in-distribution. The threshold is the 5th
    percentile of the in-distribution scores (linear interpolation), so at
    least 95% of them stay above it.
    """
    scores_in = np.asarray(scores_in, dtype=np.float64)
    scores_out = np.asarray(scores_out, dtype=np.float64)
    if scores_in.size == 0 or scores_out.size == 0:
        raise ValueError("score sets must be non-empty")
    threshold = np.percentile(scores_in, 5.0)
    return float(np.mean(scores_out >= threshold))


def temperature_scale(
    logits: np.ndarray,
    labels: np.ndarray,
    t_min: float = 0.05,
    t_max: float = 20.0,
    tol: float = 1e-4,
) -> float:
    """Temperature minimizing validation NLL of softmax(logits / T).

    Golden-section search on [t_min, t_max]; the NLL is unimodal in T for
    fixed logits, so the bracket never needs restarting.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("validation set must be non-empty")

    rows = np.arange(len(labels))

    def objective(t: float) -> float:
        return float(-np.mean(log_softmax(logits / t)[rows, labels]))

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = t_min, t_max
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    return float(0.5 * (a + b))


@dataclass
class MetricsReport:
    """Bundle of calibration/OOD numbers for one method on one dataset."""

    method: str
    nll: float
    ece: float
    brier: float
    accuracy: float
    mmd_to_reference: float | None = None
    fpr95: float | None = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(
        cls, method: str, probs, labels, mmd_to_reference=None, fpr95_value=None, **meta
    ) -> "MetricsReport":
        return cls(
            method=method,
            nll=nll(probs, labels),
            ece=ece(probs, labels),
            brier=brier(probs, labels),
            accuracy=accuracy(probs, labels),
            mmd_to_reference=mmd_to_reference,
            fpr95=fpr95_value,
            metadata=meta,
        )

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "nll": self.nll,
            "ece": self.ece,
            "brier": self.brier,
            "accuracy": self.accuracy,
        }
        if self.mmd_to_reference is not None:
            out["mmd_to_reference"] = self.mmd_to_reference
        if self.fpr95 is not None:
            out["fpr95"] = self.fpr95
        if self.metadata:
            out["metadata"] = self.metadata
        return out
