"""Reverse-mode autodiff over dense numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure. Ops build a DAG;
``backward`` on a scalar loss topologically sorts the graph and accumulates
gradients into every reachable tensor that requires them. Gradients accumulate
across calls until ``zero_grad`` / manual reset, which training relies on.

Default precision is float64; ``precision("float32")`` switches newly created
tensors (benchmarks only — tests and oracles stay in 64-bit).
"""

from __future__ import annotations

import contextlib

import numpy as np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_STRICT_FINITE = False


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for new tensors ('float32'/'float64')."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(name)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference / geometry precompute)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def strict_finite(on: bool = True):
    """Scan every op result for NaN/Inf (op-level tests; too slow for training)."""
    global _STRICT_FINITE
    old = _STRICT_FINITE
    _STRICT_FINITE = on
    try:
        yield
    finally:
        _STRICT_FINITE = old


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        if _STRICT_FINITE and not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor holds NaN/Inf")

    # -- graph plumbing -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        """Internal node constructor; drops the graph when grads are off."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        if _STRICT_FINITE and not np.all(np.isfinite(data)):
            raise NonFiniteError("op produced NaN/Inf")
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        # First contribution aliases g; later ones allocate fresh arrays, so a
        # buffer shared between several parents is never mutated in place.
        if self.grad is None:
            g = np.asarray(g)
            self.grad = g if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            acc = self.grad + g
            self.grad = (acc if acc.dtype == self.data.dtype
                         else acc.astype(self.data.dtype))

    def backward(self) -> None:
        """Reverse sweep from a scalar; grads accumulate until reset."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        topo: list[Tensor] = []
        state: dict[int, int] = {}  # 0 in-progress, 1 done
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            nid = id(node)
            if processed:
                state[nid] = 1
                topo.append(node)
                continue
            st = state.get(nid)
            if st == 1:
                continue
            if st == 0:
                raise RuntimeError("cycle in autodiff graph")
            state[nid] = 0
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and state.get(id(p)) != 1:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node._accum(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        # intermediate (non-leaf) grads were accumulated too; callers that only
        # care about leaves simply ignore them.

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- conveniences ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operators are wired up by functional.py to avoid an import cycle


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad
