"""Classification, calibration and retrieval metrics.

Predictions are held column-wise in :class:`Predictions` (one row per
sample). Argmax ties always resolve to the lowest class index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, DomainError, MapError


@dataclass(frozen=True)
class Predictions:
    probs: np.ndarray
    labels: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if probs.ndim != 2 or probs.shape[0] != labels.size:
            raise DimensionError(f"probs {probs.shape} do not match {labels.size} labels")
        if (probs < 0).any() or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
            raise DomainError("probability rows must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            feats = feats.reshape(labels.size, -1)
            object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def predicted(self) -> np.ndarray:
        return self.probs.argmax(axis=1)  # first maximum wins

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)


def topk_error(preds: Predictions, k: int) -> float:
    """Fraction of samples whose label is not among the k most probable classes."""
    if not 1 <= k <= preds.n_classes:
        raise DomainError(f"k must lie in [1, {preds.n_classes}], got {k}")
    if len(preds) == 0:
        raise DomainError("topk_error on an empty prediction set")
    # stable sort on -p ranks equal probabilities by ascending class index
    order = np.argsort(-preds.probs, axis=1, kind="stable")[:, :k]
    hit = (order == preds.labels[:, None]).any(axis=1)
    return float(1.0 - hit.mean())


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    count: int
    conf: float
    acc: float


@dataclass(frozen=True)
class CalibrationReport:
    n_bins: int
    bins: tuple[CalibrationBin, ...]
    n: int
    ece: float

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "n": self.n,
            "ece": self.ece,
            "bins": [
                {"bin_lo": b.lo, "bin_hi": b.hi, "count": b.count, "conf": b.conf, "acc": b.acc}
                for b in self.bins
            ],
        }


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def ece(preds: Predictions, n_bins: int = 20) -> CalibrationReport:
    """Expected calibration error over equal-width confidence bins.

    Bin m covers ((m-1)/M, m/M]; confidence 0 falls into the first bin.
    Empty bins report conf = acc = 0 and contribute nothing.
    """
    if n_bins < 1:
        raise DomainError(f"need at least one bin, got {n_bins}")
    n = len(preds)
    if n == 0:
        raise DomainError("ece on an empty prediction set")
    edges = bin_edges(n_bins)
    conf = preds.confidence
    correct = (preds.predicted == preds.labels).astype(np.float64)
    which = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)

    bins = []
    total = 0.0
    for m in range(n_bins):
        members = which == m
        count = int(members.sum())
        if count:
            c = float(conf[members].mean())
            a = float(correct[members].mean())
            total += (count / n) * abs(a - c)
        else:
            c = a = 0.0
        bins.append(CalibrationBin(float(edges[m]), float(edges[m + 1]), count, c, a))
    return CalibrationReport(n_bins, tuple(bins), n, total)


def _pairwise_sq_dists(features: np.ndarray, chunk: int = 512) -> np.ndarray:
    n = features.shape[0]
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        diff = features[start : start + chunk, None, :] - features[None, :, :]
        out[start : start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def recall_at_k(preds: Predictions, k: int = 1) -> float:
    """Percentage of samples with a same-label sample among their k nearest neighbours.

    Distances are Euclidean on ``preds.features``; the sample itself is
    excluded and equal distances rank by lower index.
    """
    if preds.features is None:
        raise DomainError("recall_at_k needs penultimate features")
    n = len(preds)
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    if n < k + 1:
        raise DomainError(f"recall_at_k needs at least {k + 1} samples, got {n}")
    d = _pairwise_sq_dists(preds.features)
    np.fill_diagonal(d, np.inf)
    neighbours = np.argsort(d, axis=1, kind="stable")[:, :k]
    hit = (preds.labels[neighbours] == preds.labels[:, None]).any(axis=1)
    return float(hit.mean() * 100.0)


@dataclass(frozen=True)
class HierarchyReport:
    confusion: np.ndarray
    accuracy: float

    @property
    def per_group_accuracy(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.confusion) / rows, np.nan)


def hierarchical_accuracy(
    pred_fine,
    true_fine,
    fine_to_coarse: Union[Mapping[int, int], Sequence[int]],
) -> HierarchyReport:
    """Coarse-group confusion matrix (rows true, columns predicted) via the fine label map."""
    pred_fine = np.asarray(pred_fine, dtype=np.int64).reshape(-1)
    true_fine = np.asarray(true_fine, dtype=np.int64).reshape(-1)
    if pred_fine.size != true_fine.size:
        raise DimensionError(f"{pred_fine.size} predictions for {true_fine.size} labels")
    if not isinstance(fine_to_coarse, Mapping):
        fine_to_coarse = dict(enumerate(fine_to_coarse))

    def lookup(fine: int) -> int:
        try:
            return int(fine_to_coarse[int(fine)])
        except KeyError:
            raise MapError(f"fine label {int(fine)} has no coarse group") from None

    pc = np.array([lookup(f) for f in pred_fine], dtype=np.int64)
    tc = np.array([lookup(f) for f in true_fine], dtype=np.int64)
    n_groups = int(max(fine_to_coarse.values())) + 1 if fine_to_coarse else 0
    confusion = np.zeros((n_groups, n_groups), dtype=np.int64)
    np.add.at(confusion, (tc, pc), 1)
    acc = float(np.trace(confusion) / pred_fine.size) if pred_fine.size else float("nan")
    return HierarchyReport(confusion, acc)


def misclassified_logprobs(preds: Predictions) -> np.ndarray:
    """Rows of (log p_predicted, log p_true) for every misclassified sample."""
    wrong = np.flatnonzero(preds.predicted != preds.labels)
    rows = preds.probs[wrong]
    with np.errstate(divide="ignore"):
        return np.column_stack(
            [np.log(rows[np.arange(wrong.size), preds.predicted[wrong]]), np.log(rows[np.arange(wrong.size), preds.labels[wrong]])]
        ).reshape(-1, 2)


# -- CSV writers ---------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics_csv(path, rows: Sequence[tuple[str, str, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "split", "value"])
        for metric, split, value in rows:
            w.writerow([metric, split, _fmt(value)])


def write_reliability_csv(path, report: CalibrationReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "conf", "acc"])
        for b in report.bins:
            w.writerow([_fmt(b.lo), _fmt(b.hi), b.count, _fmt(b.conf), _fmt(b.acc)])


def write_logprob_csv(path, rows: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["log_p_pred", "log_p_true"])
        for a, b in rows:
            w.writerow([_fmt(a), _fmt(b)])


def write_features_csv(path, features: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(features.shape[1])])
        for label, row in zip(labels, features):
            w.writerow([int(label)] + [_fmt(v) for v in row])
