"""
engine/losses.py
----------------
Scalar losses with their gradients w.r.t. the prediction.

Every function returns (loss, grad) where grad has the prediction's shape
and already includes the batch-mean factor, so it can be fed straight into
backward() as the upstream gradient.
"""

import numpy as np
from scipy.special import logsumexp, softmax

from utils.errors import DimensionError


def _as_batch(arr: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=np.float64)
    return (arr[None, :], True) if arr.ndim == 1 else (arr, False)


def loss_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """
    Softmax cross-entropy against integer labels, averaged over the batch.

    Raises:
        DimensionError: On a label outside [0, num_classes) or a length mismatch.
    """
    z, squeeze = _as_batch(logits)
    labels = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    n_classes = z.shape[1]
    if labels.shape != (z.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {z.shape[0]} rows")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise DimensionError(f"label out of range [0, {n_classes})")
    rows = np.arange(z.shape[0])
    log_norm = logsumexp(z, axis=1)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = softmax(z, axis=1)
    grad[rows, labels] -= 1.0
    grad /= z.shape[0]
    return loss, (grad[0] if squeeze else grad)


def loss_soft_xent(logits: np.ndarray, target_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy against a target distribution per row (e.g. uniform noise)."""
    z, squeeze = _as_batch(logits)
    p, _ = _as_batch(target_probs)
    if p.shape != z.shape:
        raise DimensionError(f"target distribution {p.shape} != logits {z.shape}")
    log_q = z - logsumexp(z, axis=1, keepdims=True)
    loss = float(np.mean(-np.sum(p * log_q, axis=1)))
    grad = (softmax(z, axis=1) - p) / z.shape[0]
    return loss, (grad[0] if squeeze else grad)


def entropy(logits: np.ndarray) -> np.ndarray:
    """Per-row entropy (nats) of softmax(logits)."""
    z, _ = _as_batch(logits)
    log_q = z - logsumexp(z, axis=1, keepdims=True)
    return -np.sum(np.exp(log_q) * log_q, axis=1)


LOSSES = {
    "mse": loss_mse,
    "xent": loss_xent,
    "soft_xent": loss_soft_xent,
}
