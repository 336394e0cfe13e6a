"""Adam with bias correction plus a one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """Standard bias-corrected Adam; mutates params in place, returns state."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
    return state


class Adam:
    """Object wrapper used by the training loop."""

    def __init__(self, params: list[Tensor], beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.state = AdamState()
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay

    def step(self, lr: float, beta1: float = 0.9) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        if self.weight_decay:
            for p in self.params:
                p.data = p.data * (1.0 - lr * self.weight_decay)
        adam_step(self.params, grads, self.state, lr, beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict:
        out = {"adam.step": np.asarray([float(self.state.step)])}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.state.step = int(arrays["adam.step"][0])
        self.state.m = []
        self.state.v = []
        i = 0
        while f"adam.m.{i}" in arrays:
            self.state.m.append(np.array(arrays[f"adam.m.{i}"]))
            self.state.v.append(np.array(arrays[f"adam.v.{i}"]))
            i += 1
        if i and i != len(self.params):
            raise ValueError("optimizer state does not match parameter count")


def one_cycle(step: int, total_steps: int, max_lr: float = 1e-3,
              div_factor: float = 10.0, final_div: float = 100.0,
              pct_up: float = 0.3, beta1_max: float = 0.95,
              beta1_min: float = 0.85) -> tuple[float, float]:
    """Cosine one-cycle: lr ramps to max_lr then anneals; beta1 runs inverse."""
    if total_steps <= 1:
        return max_lr, beta1_min
    t = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    lo0 = max_lr / div_factor
    lo1 = max_lr / final_div
    if t < pct_up:
        u = t / pct_up
        lr = lo0 + (max_lr - lo0) * 0.5 * (1 - math.cos(math.pi * u))
        b1 = beta1_max + (beta1_min - beta1_max) * 0.5 * (1 - math.cos(math.pi * u))
    else:
        u = (t - pct_up) / (1 - pct_up)
        lr = lo1 + (max_lr - lo1) * 0.5 * (1 + math.cos(math.pi * u))
        b1 = beta1_min + (beta1_max - beta1_min) * 0.5 * (1 - math.cos(math.pi * u))
    return lr, b1
