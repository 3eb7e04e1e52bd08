"""Loss functions returning ``(loss, gradient w.r.t. the first argument)``."""
from __future__ import annotations

import numpy as np

from .layers import NonFiniteError, ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, evaluated in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite logits")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    p = softmax(logits)
    rows = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(p[rows, labels], 1e-300))))
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


def mse(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every entry."""
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(np.square(d, dtype=np.float64))), (2.0 / d.size) * d
