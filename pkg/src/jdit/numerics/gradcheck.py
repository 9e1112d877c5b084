"""Finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_abs_diff: float
    max_rel_diff: float
    passed: bool
    element_count: int


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-4,
    tolerance: float = 1e-3,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` against central differences.

    ``f`` must be deterministic (run models in eval mode). Inputs are perturbed
    in place by +/- ``epsilon`` and restored. Relative differences use the
    denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()

    out = f(*inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    max_abs = 0.0
    max_rel = 0.0
    count = 0
    with no_grad():
        for t, a_grad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            a_flat = a_grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + epsilon
                f_plus = f(*inputs).item()
                flat[i] = original - epsilon
                f_minus = f(*inputs).item()
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                a = a_flat[i]
                abs_diff = abs(a - numeric)
                rel_diff = abs_diff / max(abs(a), abs(numeric), 1e-8)
                max_abs = max(max_abs, abs_diff)
                max_rel = max(max_rel, rel_diff)
                count += 1

    return GradCheckReport(
        max_abs_diff=max_abs,
        max_rel_diff=max_rel,
        passed=max_rel <= tolerance,
        element_count=count,
    )
