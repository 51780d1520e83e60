"""SGD with momentum and weight decay, and the step learning-rate schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import NumericError


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
) -> None:
    """In-place update: g = grad + wd * p; v = momentum * v + g; p -= lr * v.

    Weight decay applies to every array, biases included. All gradients are
    checked before any parameter changes.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NumericError(f"sgd_step: gradient {i} has {bad} non-finite entries")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"sgd_step: shapes {p.shape}, {g.shape}, {v.shape} do not align")
        d = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += d
        p -= lr * v


def lr_at(epoch: int, lr0: float, drops: Sequence[int]) -> float:
    """``lr0`` divided by 10 for every drop epoch <= ``epoch`` (epochs count from 0)."""
    n = sum(1 for d in drops if d <= epoch)
    return lr0 / 10.0**n
