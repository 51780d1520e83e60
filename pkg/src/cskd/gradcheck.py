"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NumericError
from .tensor import Tensor, backward

Inputs = Union[Tensor, Sequence[Tensor]]


def _evaluate(f, inputs) -> float:
    value = f(*inputs)
    out = float(value.data.reshape(-1)[0])
    if not np.isfinite(out):
        raise NumericError(f"grad_check: objective evaluated to {out}")
    return out


def grad_check(
    f: Callable[..., Tensor],
    x: Inputs,
    h: float = 1e-5,
    skip: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> float:
    """Largest relative error between backward() gradients and central differences.

    ``f`` builds a scalar graph from the inputs: ``f(x)`` for one tensor or
    ``f(*x)`` for a sequence. Relative error per entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``skip`` optionally maps an input array to a boolean mask of entries to
    leave unchecked, e.g. points within ``2h`` of a ReLU kink.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        if not np.all(np.isfinite(t.data)):
            raise NumericError("grad_check: input contains non-finite values")
        t.data = np.ascontiguousarray(t.data)
        t.zero_grad()

    root = f(*inputs)
    if not np.isfinite(root.data).all():
        raise NumericError(f"grad_check: objective evaluated to {root.data}")
    backward(root)

    worst = 0.0
    for t in inputs:
        analytic = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        mask = np.zeros(t.shape, dtype=bool) if skip is None else np.asarray(skip(t.data), dtype=bool)
        flat = t.data.reshape(-1)  # view: edits below perturb t in place
        for i in range(flat.size):
            if mask.reshape(-1)[i]:
                continue
            orig = flat[i]
            flat[i] = orig + h
            up = _evaluate(f, inputs)
            flat[i] = orig - h
            down = _evaluate(f, inputs)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def near_kink(h: float = 1e-5) -> Callable[[np.ndarray], np.ndarray]:
    """Skip mask for ops with a kink at zero (ReLU)."""
    return lambda data: np.abs(data) < 2 * h
