"""Training losses; each returns (scalar value, gradient w.r.t. prediction)."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatch("pred %s vs target %s" % (pred.shape, target.shape))


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error over all elements."""
    _check_shapes(pred, target)
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements."""
    _check_shapes(pred, target)
    diff = pred - target
    return float((diff * diff).mean()), (2.0 / diff.size) * diff


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log softmax probability of the true class."""
    if logits.ndim != 2 or len(labels) != len(logits):
        raise ShapeMismatch("logits %s vs %d labels" % (logits.shape, len(labels)))
    if len(labels) and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeMismatch("label outside 0..%d" % (logits.shape[1] - 1))
    n = len(logits)
    p = softmax(logits)
    rows = np.arange(n)
    value = float(-np.log(np.maximum(p[rows, labels], 1e-30)).mean())
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return value, grad / n
