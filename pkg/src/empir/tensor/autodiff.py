"""Reverse-mode automatic differentiation over numpy arrays.

Every primitive records its parents and a closure mapping the upstream
gradient to per-parent gradients. ``backward`` walks the recorded nodes in
reverse topological order, visiting each exactly once.

Image tensors use NHWC layout; conv kernels are (kh, kw, in, out).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, attack bookkeeping)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name", "cache")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name
        self.cache: dict | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor, grad: np.ndarray | None = None) -> int:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the number of interior nodes visited (each is visited once).
    """
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad")
    if grad is None:
        if loss.size != 1:
            raise ValueError("backward on a non-scalar needs an explicit upstream gradient")
        grad = np.ones_like(loss.data)

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    visited = 0
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        visited += 1
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return visited


# ----------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a.dtype if isinstance(a, Tensor) else None)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), bw, "add")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), bw, "div")


def sum_(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _node(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis), np.asarray(1.0 / n, dtype=a.dtype))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes where the input lies inside the closed interval."""
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi)
    return _node(out, (a,), lambda g: (g * inside,), "clamp")


def abs_max(a: Tensor) -> Tensor:
    """max(|a|) over the whole tensor; subgradient goes to the first maximal entry."""
    flat = np.abs(a.data).ravel()
    idx = int(np.argmax(flat)) if flat.size else 0
    out = np.asarray(flat[idx], dtype=a.dtype)

    def bw(g):
        ga = np.zeros(a.size, dtype=a.dtype)
        ga[idx] = g * np.sign(a.data.ravel()[idx])
        return (ga.reshape(a.shape),)

    return _node(out, (a,), bw, "abs_max")


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    t = np.trunc(x)
    frac = x - t
    return t + np.where(frac >= 0.5, 1, 0).astype(x.dtype) - np.where(frac <= -0.5, 1, 0).astype(x.dtype)


def round_ste(a: Tensor) -> Tensor:
    """Round half away from zero with an identity (straight-through) gradient."""
    return _node(round_half_away(a.data), (a,), lambda g: (g,), "round_ste")


# ----------------------------------------------------------------------------
# linear algebra and layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), bw, "matmul")


def conv_output_geometry(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) using TensorFlow-style 'same'/'valid'."""
    if padding == "valid":
        if size < k:
            raise ValueError(f"kernel {k} larger than input extent {size} with valid padding")
        return (size - k) // stride + 1, 0, 0
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return out, total // 2, total - total // 2
    raise ValueError(f"unknown padding {padding!r}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    n, h, wd, c = x.shape
    kh, kw, cin, cout = w.shape
    if cin != c:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    ho, pt, pb = conv_output_geometry(h, kh, stride, padding)
    wo, pl, pr = conv_output_geometry(wd, kw, stride, padding)
    xp = x.data
    if pt or pb or pl or pr:
        xp = np.pad(xp, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad:
            # scatter one small matmul per kernel offset back onto the padded input
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    part = (g2 @ w.data[i, j].T).reshape(n, ho, wo, cin)
                    dxp[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride, :] += part
            gx = dxp[:, pt : pt + h, pl : pl + wd, :]
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw, "conv2d")


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g
        return (gx, gw, g.sum(axis=0)) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw, "dense")


def _pool_geometry(x: np.ndarray, ph: int, pw: int, stride: tuple[int, int]):
    _, h, w, _ = x.shape
    ho, _, _ = conv_output_geometry(h, ph, stride[0], "valid")
    wo, _, _ = conv_output_geometry(w, pw, stride[1], "valid")
    return ho, wo


def max_pool2d(x: Tensor, ph: int, pw: int, stride: tuple[int, int] | None = None) -> Tensor:
    """Max pooling, 'valid' extent. Ties route the gradient to the lowest linear index."""
    sh, sw = stride or (ph, pw)
    ho, wo = _pool_geometry(x.data, ph, pw, (sh, sw))

    def cell(a, i, j):
        return a[:, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw, :]

    best = cell(x.data, 0, 0)
    arg = np.zeros(best.shape, dtype=np.int16)
    for i in range(ph):
        for j in range(pw):
            if i == 0 and j == 0:
                continue
            c = cell(x.data, i, j)
            better = c > best  # strict: earlier cells win ties
            best = np.maximum(best, c)
            arg = np.where(better, np.int16(i * pw + j), arg)
    best = np.ascontiguousarray(best)

    def bw(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        for i in range(ph):
            for j in range(pw):
                cell(gx, i, j)[...] += np.where(arg == i * pw + j, g, 0)
        return (gx,)

    return _node(best, (x,), bw, "max_pool2d")


def avg_pool2d(x: Tensor, ph: int, pw: int, stride: tuple[int, int] | None = None) -> Tensor:
    sh, sw = stride or (ph, pw)
    ho, wo = _pool_geometry(x.data, ph, pw, (sh, sw))

    def cell(a, i, j):
        return a[:, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw, :]

    scale = np.asarray(1.0 / (ph * pw), dtype=x.dtype)
    acc = np.zeros(x.shape[:1] + (ho, wo) + x.shape[3:], dtype=x.dtype)
    for i in range(ph):
        for j in range(pw):
            acc += cell(x.data, i, j)
    out = acc * scale

    def bw(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        gs = g * scale
        for i in range(ph):
            for j in range(pw):
                cell(gx, i, j)[...] += gs
        return (gx,)

    return _node(out, (x,), bw, "avg_pool2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel (last axis) normalization. Updates running stats in place when training."""
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    m = x.size // x.shape[-1]

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        dxhat = g * gamma.data
        if training:
            gx = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            gx = dxhat * inv
        return gx.astype(x.dtype), gg, gb

    return _node(out.astype(x.dtype), (x, gamma, beta), bw, "batch_norm")


def softmax(z: Tensor) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    out = _node(p, (z,), bw, "softmax")
    # cross_entropy reads the logits back for a numerically stable fused path
    out.cache = {"logits": z}
    return out


def cross_entropy(probs: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Mean (or summed) negative log-probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, c = probs.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for a batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label index out of range [0, {c})")
    rows = np.abs(probs.data.sum(axis=-1) - 1)
    if rows.size and rows.max() > 1e-5:
        raise ValueError("probability rows must sum to 1 within 1e-5")
    scale = 1.0 / n if reduction == "mean" else 1.0
    idx = np.arange(n)

    if probs.op == "softmax" and probs.cache is not None:
        z = probs.cache["logits"]
        shifted = z.data - z.data.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1))
        nll = logz - shifted[idx, labels]
        out = np.asarray(nll.sum() * scale, dtype=z.dtype)

        def bw(g):
            gz = probs.data.copy()
            gz[idx, labels] -= 1
            return (gz * (g * scale),)

        return _node(out, (z,), bw, "cross_entropy")

    tiny = np.finfo(probs.dtype).tiny
    pt = np.maximum(probs.data[idx, labels], tiny)
    out = np.asarray(-np.log(pt).sum() * scale, dtype=probs.dtype)

    def bw_generic(g):
        gp = np.zeros_like(probs.data)
        gp[idx, labels] = -g * scale / pt
        return (gp,)

    return _node(out, (probs,), bw_generic, "cross_entropy")
