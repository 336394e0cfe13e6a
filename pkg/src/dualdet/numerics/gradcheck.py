"""Central finite-difference gradient checking.

Used both by the op-level tests and the acceptance suite. The comparison
metric is max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8),
i.e. an infinity-norm relative error that stays meaningful when some gradient
entries are legitimately zero.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_gradient(f, inputs: list[Tensor], h: float = 1e-6) -> list[np.ndarray]:
    """Central differences of a scalar-valued f with respect to each input."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def check_gradients(f, inputs: list[Tensor], h: float = 1e-6) -> float:
    """Run f, backprop, and compare against numeric_gradient.

    Returns the worst relative error over all inputs. Inputs must have
    requires_grad set; grads are reset before the analytic pass.
    """
    for t in inputs:
        t.grad = None
    out = f()
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]
    numeric = numeric_gradient(f, inputs, h=h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst
