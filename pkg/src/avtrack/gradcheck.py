"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, zero_grads


@dataclass
class GradReport:
    """Per-parameter worst relative error between analytic and numeric grads."""

    errors: dict[str, float]
    eps: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(f: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]],
               eps: float = 1e-5, tol: float = 1e-4) -> GradReport:
    """Compare backward() gradients of the scalar `f()` against central
    differences, entry by entry.

    `f` must be deterministic and must rebuild its graph on every call
    (each invocation reads the current parameter values).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    zero_grads(t for _, t in params)
    loss = f()
    backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in params}

    errors: dict[str, float] = {}
    with no_grad():  # finite differences only need forward values
        for name, t in params:
            flat = t.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                worst = max(worst, _rel_err(float(a_flat[i]), numeric))
            errors[name] = worst
    return GradReport(errors=errors, eps=eps, tol=tol)
