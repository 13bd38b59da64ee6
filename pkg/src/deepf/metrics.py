"""Hard-decision evaluation metrics built from per-class confusion counts.

Zero-denominator convention: a class with no predicted tokens has precision 0,
a class with no true tokens has recall 0, and a class with ``tp == 0`` has
F_beta 0. Nothing here returns NaN.

``micro_f1`` follows the harmonic-mean-of-macro-averages definition: average
precision and recall over classes first, then combine them. That is not the
pooled-count micro-F1 of most libraries (for single-label data that one equals
accuracy).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


@dataclass
class ConfusionStats:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.tp)

    @property
    def total(self) -> int:
        return int(self.tp.sum() + self.fn.sum())

    @property
    def support(self) -> np.ndarray:
        """True token count per class (``tp + fn``)."""
        return self.tp + self.fn

    def __add__(self, other: "ConfusionStats") -> "ConfusionStats":
        if self.n_classes != other.n_classes:
            raise DataError("cannot merge confusion counts with different class counts")
        return ConfusionStats(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def permuted(self, perm: Sequence[int]) -> "ConfusionStats":
        perm = np.asarray(perm)
        return ConfusionStats(self.tp[perm], self.fp[perm], self.fn[perm])

    def to_dict(self) -> dict:
        return {"tp": self.tp.tolist(), "fp": self.fp.tolist(), "fn": self.fn.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionStats":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("tp", "fp", "fn")))


def predictions_from_scores(scores: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(np.asarray(scores), axis=1)


def confusion(predictions: Sequence[int], labels: Sequence[int], n_classes: int) -> ConfusionStats:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise DataError(f"predictions {predictions.shape} and labels {labels.shape} differ in length")
    for name, v in (("predictions", predictions), ("labels", labels)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise DataError(f"{name} must lie in [0, {n_classes})")
    hit = predictions == labels
    tp = np.bincount(labels[hit], minlength=n_classes)
    pred_count = np.bincount(predictions, minlength=n_classes)
    true_count = np.bincount(labels, minlength=n_classes)
    return ConfusionStats(tp=tp, fp=pred_count - tp, fn=true_count - tp)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_precision(stats: ConfusionStats) -> np.ndarray:
    return _safe_div(stats.tp, stats.tp + stats.fp)


def per_class_recall(stats: ConfusionStats) -> np.ndarray:
    return _safe_div(stats.tp, stats.tp + stats.fn)


def per_class_fbeta(stats: ConfusionStats, beta: float = 1.0) -> np.ndarray:
    b2 = beta * beta
    return _safe_div((1.0 + b2) * stats.tp, b2 * (stats.tp + stats.fn) + stats.tp + stats.fp)


def average_fbeta(stats: ConfusionStats, beta: float = 1.0) -> float:
    """Unweighted mean of the per-class F_beta over all configured classes."""
    return float(np.mean(per_class_fbeta(stats, beta)))


def fbeta_from_pr(precision: float, recall: float, beta: float = 1.0) -> float:
    b2 = beta * beta
    den = b2 * precision + recall
    return 0.0 if den <= 0 else (1.0 + b2) * precision * recall / den


def micro_f1(stats: ConfusionStats, beta: float = 1.0) -> float:
    return fbeta_from_pr(
        float(np.mean(per_class_precision(stats))), float(np.mean(per_class_recall(stats))), beta
    )


def coverage(stats: ConfusionStats) -> int:
    """Number of classes with non-zero recall."""
    return int(np.count_nonzero(stats.tp > 0))


def accuracy(stats: ConfusionStats) -> float:
    n = stats.total
    return 0.0 if n == 0 else float(stats.tp.sum()) / n


@dataclass
class MetricsReport:
    avg_precision: float
    avg_recall: float
    micro_f1_paper: float
    avg_fbeta: float
    beta: float
    accuracy: float
    coverage: int
    n_classes: int
    confusion: ConfusionStats = field(repr=False)

    # flat column order used by report files
    COLUMNS = ("beta", "avg_precision", "avg_recall", "micro_f1_paper", "avg_fbeta", "accuracy", "coverage")

    @classmethod
    def from_confusion(cls, stats: ConfusionStats, beta: float = 1.0) -> "MetricsReport":
        return cls(
            avg_precision=float(np.mean(per_class_precision(stats))),
            avg_recall=float(np.mean(per_class_recall(stats))),
            micro_f1_paper=micro_f1(stats, 1.0),
            avg_fbeta=average_fbeta(stats, beta),
            beta=float(beta),
            accuracy=accuracy(stats),
            coverage=coverage(stats),
            n_classes=stats.n_classes,
            confusion=stats,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.to_dict()
        return d

    def flat(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        """Rebuild a report from its stored confusion counts only."""
        return cls.from_confusion(ConfusionStats.from_dict(d["confusion"]), d["beta"])


def evaluate_predictions(
    predictions: Sequence[int], labels: Sequence[int], n_classes: int, betas: Iterable[float] = (1.0,)
) -> list[MetricsReport]:
    stats = confusion(predictions, labels, n_classes)
    return [MetricsReport.from_confusion(stats, b) for b in betas]
