"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def gradient_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be a deterministic closure over `inputs` returning a scalar Tensor.
    Relative error per coordinate: |a - n| / max(1, |a| + |n|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for t in inputs:
        t.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite objective in gradient_check")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            n = (f_plus - f_minus) / (2.0 * eps)
            ai = a.reshape(-1)[i]
            err = abs(ai - n) / max(1.0, abs(ai) + abs(n))
            worst = max(worst, err)
    return worst
