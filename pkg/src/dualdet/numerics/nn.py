"""Minimal parameter-container layer on top of the Tensor core."""

from __future__ import annotations

import numpy as np

from ..rng import Rng
from .functional import conv2d, layer_norm, linear, relu
from .tensor import Tensor, default_dtype


class Module:
    """Tracks child modules and parameters through attribute assignment."""

    def __setattr__(self, name, value):
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise KeyError(f"parameter name mismatch: {sorted(missing)[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=default_dtype())
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: Rng | None = None,
                 zero_init: bool = False, bias: bool = True, bias_fill: float = 0.0):
        if zero_init:
            w = np.zeros((cin, cout))
        else:
            w = rng.normal((cin, cout), std=1.0 / np.sqrt(cin))
        self.w = param(w)
        self.b = param(np.full(cout, bias_fill)) if bias else None

    def forward(self, x):
        return linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, k: int, cin: int, cout: int, rng: Rng | None = None,
                 zero_init: bool = False, bias_fill: float = 0.0):
        if zero_init:
            w = np.zeros((k, k, cin, cout))
        else:
            w = rng.normal((k, k, cin, cout), std=1.0 / np.sqrt(k * k * cin))
        self.w = param(w)
        self.b = param(np.full(cout, bias_fill))

    def forward(self, x):
        return conv2d(x, self.w, self.b)


class MLP(Module):
    """linear -> relu -> linear; last layer optionally zero-initialized."""

    def __init__(self, cin: int, hidden: int, cout: int, rng: Rng,
                 zero_last: bool = False, last_bias_fill: float = 0.0):
        self.fc1 = Linear(cin, hidden, rng.split(1))
        self.fc2 = Linear(hidden, cout, rng.split(2), zero_init=zero_last,
                          bias_fill=last_bias_fill)

    def forward(self, x):
        return self.fc2(relu(self.fc1(x)))
