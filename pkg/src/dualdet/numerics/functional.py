"""Differentiable primitives and the attention/normalization building blocks.

Every op returns a Tensor wired with a hand-derived backward closure; all of
them are validated against central finite differences in the test suite.
Backward closures return (parent, grad) pairs; broadcasting grads are summed
back via unbroadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, unbroadcast

__all__ = [
    "AttentionConfig", "add", "sub", "mul", "div", "neg", "pow_const", "exp",
    "log", "sqrt", "relu", "sigmoid", "tanh", "softplus", "absolute", "matmul",
    "tsum", "tmean", "reshape", "transpose", "concat", "stack", "getitem",
    "gather_rows", "gather_rc", "scatter_rc", "segment_max", "softmax",
    "softmax_axis", "masked_softmax", "layer_norm", "bilinear_sample",
    "bilinear_sample_many", "conv2d", "avgpool2", "linear", "masked_mha",
    "where_mask", "sinusoidal_encoding",
]


# -- elementwise arithmetic ----------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    def bw(g):
        return [(a, unbroadcast(g, a.data.shape)), (b, unbroadcast(g, b.data.shape))]
    return Tensor._make(out, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    def bw(g):
        return [(a, unbroadcast(g, a.data.shape)), (b, unbroadcast(-g, b.data.shape))]
    return Tensor._make(out, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    def bw(g):
        return [(a, unbroadcast(g * b.data, a.data.shape)),
                (b, unbroadcast(g * a.data, b.data.shape))]
    return Tensor._make(out, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    def bw(g):
        return [(a, unbroadcast(g / b.data, a.data.shape)),
                (b, unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))]
    return Tensor._make(out, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: [(a, -g)])


def pow_const(a, p: float):
    a = as_tensor(a)
    out = a.data ** p
    def bw(g):
        return [(a, g * p * a.data ** (p - 1))]
    return Tensor._make(out, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: [(a, g * out)])


def log(a):
    a = as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: [(a, g / a.data)])


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: [(a, g * 0.5 / out)])


def relu(a):
    a = as_tensor(a)
    keep = a.data > 0
    return Tensor._make(np.where(keep, a.data, 0.0), (a,), lambda g: [(a, g * keep)])


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor._make(out, (a,), lambda g: [(a, g * out * (1.0 - out))])


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: [(a, g * (1.0 - out * out))])


def softplus(a):
    """log(1 + exp(x)), computed stably; derivative is sigmoid."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    def bw(g):
        x = a.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return [(a, g * s)]
    return Tensor._make(out, (a,), bw)


def absolute(a):
    a = as_tensor(a)
    return Tensor._make(np.abs(a.data), (a,), lambda g: [(a, g * np.sign(a.data))])


# -- linear algebra -------------------------------------------------------

def matmul(a, b):
    """(..., n, k) @ (..., k, m) with broadcastable batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects ndim >= 2 on both sides")
    out = a.data @ b.data
    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return [(a, unbroadcast(ga, a.data.shape)), (b, unbroadcast(gb, b.data.shape))]
    return Tensor._make(out, (a, b), bw)


def linear(x, w, b=None):
    """x (..., Cin) @ w (Cin, Cout) + b."""
    x, w = as_tensor(x), as_tensor(w)
    lead = x.data.shape[:-1]
    flat = reshape(x, (-1, x.data.shape[-1]))
    out = matmul(flat, w)
    out = reshape(out, lead + (w.data.shape[-1],))
    if b is not None:
        out = add(out, b)
    return out


# -- reductions -----------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    def bw(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.data.shape).copy())]
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return [(a, np.broadcast_to(gg, a.data.shape).copy())]
    return Tensor._make(np.asarray(out), (a,), bw)


def tmean(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape ops --------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return Tensor._make(out, (a,), lambda g: [(a, g.reshape(a.data.shape))])


def transpose(a, axes):
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,),
                        lambda g: [(a, g.transpose(inv))])


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    def bw(g):
        parts = np.split(g, bounds, axis=axis)
        return list(zip(tensors, parts))
    return Tensor._make(out, tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    def bw(g):
        parts = np.split(g, len(tensors), axis=axis)
        return [(t, np.squeeze(p, axis=axis)) for t, p in zip(tensors, parts)]
    return Tensor._make(out, tuple(tensors), bw)


def getitem(a, key):
    a = as_tensor(a)
    out = a.data[key]
    def bw(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, key, g)
        return [(a, gx)]
    return Tensor._make(np.asarray(out), (a,), bw)


# -- indexing ---------------------------------------------------------------

def _scatter_add_rows(shape, flat_idx, g, dtype):
    """Dense scatter-add of g (P, block) rows into a zero array of `shape`."""
    block = int(np.prod(shape[1:], dtype=np.int64)) if len(shape) > 1 else 1
    n = shape[0] if len(shape) else 1
    flat = flat_idx[:, None] * block + np.arange(block)
    out = np.bincount(flat.ravel(), weights=g.reshape(-1), minlength=n * block)
    return out.reshape((n,) + tuple(shape[1:])).astype(dtype, copy=False)


def gather_rows(a, idx):
    """a[idx] along axis 0; scatter-add backward (idx may repeat)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]
    def bw(g):
        if idx.ndim == 1:
            return [(a, _scatter_add_rows(a.data.shape, idx, np.asarray(g),
                                          a.data.dtype))]
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return [(a, gx)]
    return Tensor._make(out, (a,), bw)


def gather_rc(a, rows, cols):
    """a (H, W, ...) indexed at integer (rows, cols) pairs."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = a.data[rows, cols]
    def bw(g):
        if rows.ndim == 1:
            h, w = a.data.shape[:2]
            flat = _scatter_add_rows((h * w,) + a.data.shape[2:],
                                     rows * w + cols, np.asarray(g),
                                     a.data.dtype)
            return [(a, flat.reshape(a.data.shape))]
        gx = np.zeros_like(a.data)
        np.add.at(gx, (rows, cols), g)
        return [(a, gx)]
    return Tensor._make(out, (a,), bw)


def scatter_rc(vals, rows, cols, hw):
    """Scatter-add rows of vals (P, C) into a zero (H, W, C) map."""
    vals = as_tensor(vals)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    h, w = hw
    out = np.zeros((h, w) + vals.data.shape[1:], dtype=vals.data.dtype)
    np.add.at(out, (rows, cols), vals.data)
    def bw(g):
        return [(vals, g[rows, cols])]
    return Tensor._make(out, (vals,), bw)


def segment_max(a, seg, num_segments: int):
    """Per-segment max over axis 0 of a (N, C).

    seg must be sorted ascending and every id in [0, num_segments) must occur
    (compacted nonempty segments). Gradient routes to the first row attaining
    each max, so ties are deterministic.
    """
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    n = a.data.shape[0]
    if seg.shape != (n,):
        raise ValueError("segment ids must be (N,)")
    if n == 0 or seg[0] != 0 or seg[-1] != num_segments - 1:
        raise ValueError("segments must be compacted and nonempty")
    starts = np.searchsorted(seg, np.arange(num_segments), side="left")
    out = np.maximum.reduceat(a.data, starts, axis=0)
    def bw(g):
        rows = np.arange(n)
        ismax = a.data == out[seg]
        cand = np.where(ismax, rows[:, None], n)
        first = np.minimum.reduceat(cand, starts, axis=0)
        route = rows[:, None] == first[seg]
        return [(a, g[seg] * route)]
    return Tensor._make(out, (a,), bw)


def where_mask(mask, a, b):
    """Elementwise select by a constant boolean mask (broadcastable)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)
    def bw(g):
        return [(a, unbroadcast(g * mask, a.data.shape)),
                (b, unbroadcast(g * ~mask, b.data.shape))]
    return Tensor._make(out, (a, b), bw)


# -- softmax family -----------------------------------------------------------

def softmax(v):
    """Softmax of a 1-D vector; errors on empty or non-finite input."""
    v = as_tensor(v)
    if v.data.ndim != 1 or v.data.size == 0:
        raise ValueError("softmax expects a nonempty vector")
    if not np.all(np.isfinite(v.data)):
        raise ValueError("softmax input must be finite")
    return softmax_axis(v, axis=-1)


def softmax_axis(a, axis: int = -1):
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return [(a, p * (g - dot))]
    return Tensor._make(p, (a,), bw)


def masked_softmax(a, mask):
    """Softmax over the last axis with masked positions given exactly 0 weight.

    Rows with no unmasked position come out as all zeros.
    """
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    x = np.where(mask, a.data, -np.inf)
    mx = x.max(axis=-1, keepdims=True)
    shift = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(x - shift), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    p = e / np.where(s > 0, s, 1.0)
    def bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return [(a, p * (g - dot))]
    return Tensor._make(p, (a,), bw)


# -- normalization ------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.data.shape[-1]
    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat
                        - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]
    return Tensor._make(out, (x, gamma, beta), bw)


# -- sampling -----------------------------------------------------------------

def _scatter_corner_grads(flat_size, corner_idx, corner_w, channels):
    """Accumulate per-corner weighted grads with one bincount (faster than add.at)."""
    idx = np.concatenate(corner_idx)
    w = np.concatenate(corner_w)
    flat = idx[:, None] * channels + np.arange(channels)
    out = np.bincount(flat.ravel(), weights=w.ravel(),
                      minlength=flat_size * channels)
    return out.reshape(flat_size, channels)


def bilinear_sample_many(m, rows, cols):
    """Sample m (H, W, C) at P continuous (row, col) points -> (P, C).

    Integer coordinates return the exact element; points outside
    [0, H-1] x [0, W-1] return zeros. Differentiable in the map and, when the
    coordinates are Tensors, in the coordinates too.
    """
    m = as_tensor(m)
    rows_t = rows if isinstance(rows, Tensor) else None
    cols_t = cols if isinstance(cols, Tensor) else None
    r = rows.data if rows_t is not None else np.asarray(rows, dtype=np.float64)
    c = cols.data if cols_t is not None else np.asarray(cols, dtype=np.float64)
    h, w = m.data.shape[:2]
    inb = (r >= 0) & (r <= h - 1) & (c >= 0) & (c <= w - 1)
    rcl = np.clip(r, 0, h - 1)
    ccl = np.clip(c, 0, w - 1)
    r0 = np.clip(np.floor(rcl), 0, max(h - 2, 0)).astype(np.int64)
    c0 = np.clip(np.floor(ccl), 0, max(w - 2, 0)).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rcl - r0)[:, None]
    fc = (ccl - c0)[:, None]
    v00, v01 = m.data[r0, c0], m.data[r0, c1]
    v10, v11 = m.data[r1, c0], m.data[r1, c1]
    keep = inb[:, None]
    out = ((1 - fr) * (1 - fc) * v00 + (1 - fr) * fc * v01
           + fr * (1 - fc) * v10 + fr * fc * v11) * keep

    parents = [m] + [t for t in (rows_t, cols_t) if t is not None]

    def bw(g):
        gk = g * keep
        grads = []
        nch = m.data.shape[-1]
        gm = _scatter_corner_grads(
            h * w,
            (r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1),
            ((1 - fr) * (1 - fc) * gk, (1 - fr) * fc * gk,
             fr * (1 - fc) * gk, fr * fc * gk),
            nch).reshape(m.data.shape)
        grads.append((m, gm))
        if rows_t is not None:
            dvdr = (v10 - v00) * (1 - fc) + (v11 - v01) * fc
            grads.append((rows_t, (gk * dvdr).sum(axis=-1)))
        if cols_t is not None:
            dvdc = (v01 - v00) * (1 - fr) + (v11 - v10) * fr
            grads.append((cols_t, (gk * dvdc).sum(axis=-1)))
        return grads

    return Tensor._make(out, tuple(parents), bw)


def bilinear_sample(m, point):
    """Single-point convenience wrapper; point is (row, col)."""
    u, v = point
    out = bilinear_sample_many(m, np.asarray([u], dtype=np.float64),
                               np.asarray([v], dtype=np.float64))
    return reshape(out, (as_tensor(m).data.shape[-1],))


def bilinear_sample_nd(m, bidx, rows, cols):
    """Sample a stack of maps m (B, H, W, C) at P points -> (P, C).

    bidx (P,) picks the map per point; rows/cols and edge semantics match
    bilinear_sample_many. bidx is a constant, coordinates may be Tensors.
    """
    m = as_tensor(m)
    bidx = np.asarray(bidx, dtype=np.int64)
    rows_t = rows if isinstance(rows, Tensor) else None
    cols_t = cols if isinstance(cols, Tensor) else None
    r = rows.data if rows_t is not None else np.asarray(rows, dtype=np.float64)
    c = cols.data if cols_t is not None else np.asarray(cols, dtype=np.float64)
    h, w = m.data.shape[1:3]
    inb = (r >= 0) & (r <= h - 1) & (c >= 0) & (c <= w - 1)
    rcl = np.clip(r, 0, h - 1)
    ccl = np.clip(c, 0, w - 1)
    r0 = np.clip(np.floor(rcl), 0, max(h - 2, 0)).astype(np.int64)
    c0 = np.clip(np.floor(ccl), 0, max(w - 2, 0)).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rcl - r0)[:, None]
    fc = (ccl - c0)[:, None]
    v00, v01 = m.data[bidx, r0, c0], m.data[bidx, r0, c1]
    v10, v11 = m.data[bidx, r1, c0], m.data[bidx, r1, c1]
    keep = inb[:, None]
    out = ((1 - fr) * (1 - fc) * v00 + (1 - fr) * fc * v01
           + fr * (1 - fc) * v10 + fr * fc * v11) * keep

    parents = [m] + [t for t in (rows_t, cols_t) if t is not None]

    def bw(g):
        gk = g * keep
        grads = []
        nch = m.data.shape[-1]
        base = bidx * (h * w)
        gm = _scatter_corner_grads(
            m.data.shape[0] * h * w,
            (base + r0 * w + c0, base + r0 * w + c1,
             base + r1 * w + c0, base + r1 * w + c1),
            ((1 - fr) * (1 - fc) * gk, (1 - fr) * fc * gk,
             fr * (1 - fc) * gk, fr * fc * gk),
            nch).reshape(m.data.shape)
        grads.append((m, gm))
        if rows_t is not None:
            dvdr = (v10 - v00) * (1 - fc) + (v11 - v01) * fc
            grads.append((rows_t, (gk * dvdr).sum(axis=-1)))
        if cols_t is not None:
            dvdc = (v01 - v00) * (1 - fr) + (v11 - v10) * fr
            grads.append((cols_t, (gk * dvdc).sum(axis=-1)))
        return grads

    return Tensor._make(out, tuple(parents), bw)


# -- convolution ---------------------------------------------------------------

def conv2d(x, w, b=None):
    """Stride-1 same-padding conv; x (H, W, Cin), w (K, K, Cin, Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    k = w.data.shape[0]
    if w.data.shape[1] != k or k % 2 != 1:
        raise ValueError("kernel must be square with odd size")
    h, wd, cin = x.data.shape
    cout = w.data.shape[-1]
    pad = k // 2
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    # win: (H, W, Cin, K, K) -> (H*W, K*K*Cin) matching w (K, K, Cin, Cout)
    patches = win.transpose(0, 1, 3, 4, 2).reshape(h * wd, k * k * cin)
    out = patches @ w.data.reshape(k * k * cin, cout)
    out = out.reshape(h, wd, cout)

    def bw(g):
        gf = g.reshape(h * wd, cout)
        gw = (patches.T @ gf).reshape(k, k, cin, cout)
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                gxp[ki:ki + h, kj:kj + wd] += g @ w.data[ki, kj].T
        gx = gxp[pad:pad + h, pad:pad + wd]
        return [(x, gx), (w, gw)]

    out_t = Tensor._make(out, (x, w), bw)
    if b is not None:
        out_t = add(out_t, b)
    return out_t


def avgpool2(x):
    """2x2 mean pool over the (-3, -2) axes, stride 2; odd edges dropped."""
    x = as_tensor(x)
    *lead, h, w, c = x.data.shape
    h2, w2 = h // 2, w // 2
    v = x.data[..., :h2 * 2, :w2 * 2, :].reshape(*lead, h2, 2, w2, 2, c)
    out = v.mean(axis=(-4, -2))
    def bw(g):
        gx = np.zeros_like(x.data)
        gx[..., :h2 * 2, :w2 * 2, :] = np.repeat(np.repeat(g, 2, axis=-3), 2,
                                                 axis=-2) * 0.25
        return [(x, gx)]
    return Tensor._make(out, (x,), bw)


# -- attention ------------------------------------------------------------------

@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    model_dim: int

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def masked_mha(q, k, v, mask, cfg: AttentionConfig):
    """Multi-head scaled dot-product attention over already-projected inputs.

    q (..., Lq, C), k/v (..., Lk, C), mask (..., Lq, Lk) boolean with True
    marking attendable keys. Masked keys get literally zero weight; a fully
    masked query row yields a zero output vector.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    lq, c = q.data.shape[-2], q.data.shape[-1]
    lk = k.data.shape[-2]
    if c != cfg.model_dim:
        raise ValueError("channel dim does not match AttentionConfig")
    nh, d = cfg.heads, cfg.head_dim
    lead = q.data.shape[:-2]

    def split_heads(t, length):
        t = reshape(t, lead + (length, nh, d))
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return transpose(t, axes)  # (..., nh, L, d)

    qh = split_heads(q, lq)
    kh = split_heads(k, lk)
    vh = split_heads(v, lk)
    logits = matmul(qh, transpose(kh, tuple(range(kh.data.ndim - 2)) + (kh.data.ndim - 1, kh.data.ndim - 2)))
    logits = mul(logits, 1.0 / np.sqrt(d))
    mask = np.asarray(mask, dtype=bool)
    mh = np.broadcast_to(np.expand_dims(mask, -3), logits.data.shape)
    weights = masked_softmax(logits, mh)
    out = matmul(weights, vh)  # (..., nh, Lq, d)
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    out = transpose(out, axes)
    return reshape(out, lead + (lq, c))


# -- constants ------------------------------------------------------------------

def sinusoidal_encoding(pos, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding, base 10000; pos is a float array (P,)."""
    if dim % 2 != 0:
        raise ValueError("encoding dim must be even")
    pos = np.asarray(pos, dtype=np.float64)
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) * 2.0 / dim)
    ang = pos[:, None] * freqs[None, :]
    out = np.empty(pos.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


# -- operator wiring ---------------------------------------------------------

def _install_operators():
    Tensor.__add__ = lambda self, o: add(self, o)
    Tensor.__radd__ = lambda self, o: add(o, self)
    Tensor.__sub__ = lambda self, o: sub(self, o)
    Tensor.__rsub__ = lambda self, o: sub(o, self)
    Tensor.__mul__ = lambda self, o: mul(self, o)
    Tensor.__rmul__ = lambda self, o: mul(o, self)
    Tensor.__truediv__ = lambda self, o: div(self, o)
    Tensor.__rtruediv__ = lambda self, o: div(o, self)
    Tensor.__neg__ = lambda self: neg(self)
    Tensor.__matmul__ = lambda self, o: matmul(self, o)
    Tensor.__pow__ = lambda self, p: pow_const(self, p)
    Tensor.__getitem__ = lambda self, key: getitem(self, key)
    Tensor.sum = lambda self, axis=None, keepdims=False: tsum(self, axis, keepdims)
    Tensor.mean = lambda self, axis=None, keepdims=False: tmean(self, axis, keepdims)
    Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


_install_operators()
