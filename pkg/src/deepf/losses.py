"""Training objectives: cross-entropy and the soft-count F-beta loss.

Both return ``(loss, gradient)``. The F-beta loss gives its gradient with
respect to the softmax output ``q``; cross-entropy gives it with respect to the
pre-softmax logits (the usual ``(q - onehot) / B`` shortcut).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError

NORMALIZATIONS = ("max", "none", "temperature")
COUNT_SCOPES = ("batch", "global")


@dataclass(frozen=True)
class DeepFSpec:
    """Settings for :func:`deepf_loss`.

    ``class_counts`` is only read when ``count_scope == "global"``; with the
    default ``"batch"`` scope the per-class counts come from the batch labels.
    ``normalization`` selects how soft counts are formed: ``"max"`` divides each
    row by its largest entry, ``"none"`` uses ``q`` as is, and
    ``"temperature"`` re-sharpens ``q`` as ``softmax(logits / temperature)``.
    """

    beta: float = 1.0
    class_counts: tuple[int, ...] | None = None
    epsilon: float = 1e-12
    count_scope: str = "batch"
    normalization: str = "max"
    temperature: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.count_scope not in COUNT_SCOPES:
            raise ConfigurationError(f"count_scope must be one of {COUNT_SCOPES}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError(f"normalization must be one of {NORMALIZATIONS}")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be positive")
        if self.count_scope == "global":
            if self.class_counts is None:
                raise ConfigurationError("count_scope='global' requires class_counts")
            counts = np.asarray(self.class_counts)
            if np.any(counts <= 0):
                missing = np.flatnonzero(counts <= 0).tolist()
                raise ConfigurationError(
                    f"classes {missing} have no training tokens; drop them from K or use count_scope='batch'"
                )


@dataclass
class SoftCounts:
    tp: np.ndarray
    pred_mass: np.ndarray


def _check_labels(labels: np.ndarray, n_classes: int, n_rows: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise DataError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.int64)


def normalize_activations(q: np.ndarray) -> np.ndarray:
    """Scale each row so that its largest entry is exactly one."""
    q = np.asarray(q, dtype=np.float64)
    peak = q.max(axis=1, keepdims=True)
    if np.any(peak <= 0):
        raise FloatingPointError("cannot normalize a row without a positive entry")
    return q / peak


def soft_counts(q_norm: np.ndarray, labels: np.ndarray) -> SoftCounts:
    q_norm = np.asarray(q_norm, dtype=np.float64)
    labels = _check_labels(labels, q_norm.shape[1], q_norm.shape[0])
    onehot = np.zeros_like(q_norm)
    onehot[np.arange(len(labels)), labels] = 1.0
    return SoftCounts(tp=(onehot * q_norm).sum(axis=0), pred_mass=q_norm.sum(axis=0))


def _transform(q: np.ndarray, spec: DeepFSpec) -> np.ndarray:
    if spec.normalization == "max":
        return normalize_activations(q)
    if spec.normalization == "none":
        return q
    r = q ** (1.0 / spec.temperature)
    return r / r.sum(axis=1, keepdims=True)


def _transform_backward(q: np.ndarray, qt: np.ndarray, grad_qt: np.ndarray, spec: DeepFSpec) -> np.ndarray:
    if spec.normalization == "none":
        return grad_qt
    if spec.normalization == "max":
        # argmax is held fixed: q'_m == 1 carries no gradient, q'_k = q_k / q_m elsewhere
        rows = np.arange(len(q))
        m = np.argmax(q, axis=1)
        peak = q[rows, m]
        g = grad_qt.copy()
        g[rows, m] = 0.0
        grad_q = g / peak[:, None]
        grad_q[rows, m] = -np.sum(g * q, axis=1) / peak**2
        return grad_q
    a = 1.0 / spec.temperature
    inner = np.sum(grad_qt * qt, axis=1, keepdims=True)
    return a * qt / q * (grad_qt - inner)


def _class_counts(labels: np.ndarray, n_classes: int, spec: DeepFSpec) -> np.ndarray:
    if spec.count_scope == "global":
        counts = np.asarray(spec.class_counts, dtype=np.float64)
        if counts.shape != (n_classes,):
            raise ConfigurationError(f"class_counts has {counts.size} entries, expected {n_classes}")
        return counts
    return np.bincount(labels, minlength=n_classes).astype(np.float64)


def deepf_loss(q: np.ndarray, labels: np.ndarray, spec: DeepFSpec) -> tuple[float, np.ndarray]:
    """Negative soft average-F_beta and its gradient with respect to ``q``.

    loss = -(1/K) sum_k (1 + b^2) tp_k / (b^2 N_k + mass_k + eps)

    where ``tp_k`` and ``mass_k`` are the soft counts of the normalized
    activations. K is ``q.shape[1]``; classes absent from the batch still count
    towards the average and only contribute through their false-alarm mass.
    """
    q = np.asarray(q, dtype=np.float64)
    n_rows, n_classes = q.shape
    labels = _check_labels(labels, n_classes, n_rows)
    qt = _transform(q, spec)
    counts = soft_counts(qt, labels)
    b2 = spec.beta**2
    num = (1.0 + b2) * counts.tp
    den = b2 * _class_counts(labels, n_classes, spec) + counts.pred_mass + spec.epsilon
    loss = -float(np.sum(num / den)) / n_classes

    # dL/dq'_{n,k} = -(1/K) [ (1+b^2) [y_n = k] / den_k - num_k / den_k^2 ]
    onehot = np.zeros_like(q)
    onehot[np.arange(n_rows), labels] = 1.0
    grad_qt = -((1.0 + b2) * onehot / den - num / den**2) / n_classes
    return loss, _transform_backward(q, qt, grad_qt, spec)


def deepf_value(
    q: np.ndarray, labels: np.ndarray, spec: DeepFSpec, max_index: Sequence[int] | None = None
) -> float:
    """Loss value only, optionally with the normalizing index pinned per row.

    Pinning the index gives the smooth branch that the analytic gradient of
    :func:`deepf_loss` differentiates; finite-difference checks use it.
    """
    q = np.asarray(q, dtype=np.float64)
    if max_index is None or spec.normalization != "max":
        return deepf_loss(q, labels, spec)[0]
    labels = _check_labels(labels, q.shape[1], q.shape[0])
    qt = q / q[np.arange(len(q)), np.asarray(max_index)][:, None]
    counts = soft_counts(qt, labels)
    b2 = spec.beta**2
    den = b2 * _class_counts(labels, q.shape[1], spec) + counts.pred_mass + spec.epsilon
    return -float(np.sum((1.0 + b2) * counts.tp / den)) / q.shape[1]


def xent_loss(q: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood; gradient is with respect to the logits."""
    q = np.asarray(q, dtype=np.float64)
    n_rows, n_classes = q.shape
    labels = _check_labels(labels, n_classes, n_rows)
    rows = np.arange(n_rows)
    picked = np.maximum(q[rows, labels], np.finfo(np.float64).tiny)
    loss = -float(np.mean(np.log(picked)))
    grad = q.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / n_rows
