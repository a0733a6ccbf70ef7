"""Double-precision tensors with reverse-mode differentiation.

Only what a fully convolutional frame classifier needs: dilated 2-D
cross-correlation (time x frequency), pointwise (1x1 / full-frequency) layers,
bias, ReLU, frequency max-pooling, log-softmax and NLL, plus a handful of
reshaping and reduction helpers.

Activations are laid out ``[C, T, F]`` or batched ``[B, C, T, F]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ShapeError, WindowTooShortError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward: Optional[BackwardFn] = None,
                 op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def backward(self) -> None:
        backward(self)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -np.asarray(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _node(data, parents, backward_fn, op) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents),
                  _backward=backward_fn, op=op)


@dataclass
class ComputationRecord:
    """Nodes reachable from an output, inputs strictly before their consumers."""
    nodes: list = field(default_factory=list)

    @classmethod
    def of(cls, output: Tensor) -> "ComputationRecord":
        order: list = []
        seen: set = set()
        stack = [(output, False)]
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def is_topological(self) -> bool:
        pos = {id(n): i for i, n in enumerate(self.nodes)}
        return all(pos[id(p)] < pos[id(n)]
                   for n in self.nodes for p in n._parents if id(p) in pos)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    record = ComputationRecord.of(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(record.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# elementwise / structural -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _node(a.data * b.data, (a, b),
                 lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.data * k, (a,), lambda g: (g * k,), "scale")


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _node(np.array(a.data[index]), (a,), bw, "getitem")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


# network layers ------------------------------------------------------------

def _batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [C, T, F] or [B, C, T, F], got {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def conv2d(x: Tensor, kernel: Tensor, dilation_t: int = 1, stride_f: int = 1,
           pad_f: int = 0, use_numba: Optional[bool] = None) -> Tensor:
    """Cross-correlation over (time, frequency), no time padding, time stride 1.

    ``kernel`` is ``[C_out, C_in, k_t, k_f]``; taps are ``dilation_t`` frames
    apart in time. The output has ``T - (k_t - 1) * dilation_t`` frames.
    """
    x, squeeze = _batched(x)
    b, c, t, f = x.shape
    o, c_k, kt, kf = kernel.shape
    if c_k != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {c_k}")
    if dilation_t < 1 or stride_f < 1 or pad_f < 0:
        raise ValueError("conv2d: dilation_t, stride_f must be >= 1 and pad_f >= 0")
    span = (kt - 1) * dilation_t + 1
    if t < span:
        raise WindowTooShortError(t, span)
    fp = f + 2 * pad_f
    if fp < kf:
        raise ShapeError(f"conv2d: frequency extent {fp} smaller than kernel {kf}")
    t_out = t - span + 1
    f_out = (fp - kf) // stride_f + 1

    xd = x.data
    if pad_f:
        xd = np.pad(xd, ((0, 0), (0, 0), (0, 0), (pad_f, pad_f)))
    cols = _kernels.im2col(xd, kt, kf, dilation_t, stride_f, t_out, f_out, use_numba)
    w2 = kernel.data.reshape(o, -1)
    out = (cols @ w2.T).reshape(b, t_out, f_out, o).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = _kernels.col2im(g2 @ w2, (b, c, t, fp), kt, kf, dilation_t,
                                 stride_f, t_out, f_out, use_numba)
            if pad_f:
                gx = gx[..., pad_f:pad_f + f]
        return gx, gk

    y = _node(np.ascontiguousarray(out), (x, kernel), bw, "conv2d")
    return _unbatch(y, squeeze)


def pointwise(x: Tensor, weights: Tensor, collapse_freq: bool = False) -> Tensor:
    """Fully connected layer applied independently at every frame.

    Non-collapsing: ``weights`` is ``[C_out, C_in]`` (a 1x1 convolution).
    Collapsing: ``weights`` is ``[C_out, C_in * F]`` with input index
    ``c * F + f``, equivalent to a ``1 x F`` kernel; output has ``F = 1``.
    """
    x, squeeze = _batched(x)
    b, c, t, f = x.shape
    o = weights.shape[0]
    fc = f if collapse_freq else 1
    if weights.ndim != 2 or weights.shape[1] != c * fc:
        what = "frequency extent" if collapse_freq else "channel count"
        raise ShapeError(f"pointwise: {what} mismatch, weights {weights.shape} "
                         f"vs input {x.shape}")
    w3 = weights.data.reshape(o, c, fc)
    if collapse_freq:
        # [b, t, o] -> [b, o, t, 1]
        out = np.tensordot(x.data, w3, axes=([1, 3], [1, 2])).transpose(0, 2, 1)[..., None]
    else:
        out = np.tensordot(x.data, w3[:, :, 0], axes=([1], [1])).transpose(0, 3, 1, 2)

    def bw(g):
        if collapse_freq:
            g3 = g[..., 0]  # [b, o, t]
            gw = np.tensordot(g3, x.data, axes=([0, 2], [0, 2])).reshape(o, c * f)
            gx = np.tensordot(g3, w3, axes=([1], [0])).transpose(0, 2, 1, 3)
        else:
            gw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
            gx = np.tensordot(g, w3[:, :, 0], axes=([1], [0])).transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(gx) if x.requires_grad else None,
                gw if weights.requires_grad else None)

    y = _node(np.ascontiguousarray(out), (x, weights), bw, "pointwise")
    return _unbatch(y, squeeze)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias over (T, F) of a ``[C, T, F]`` or ``[B, C, T, F]`` tensor."""
    caxis = x.ndim - 3
    if x.ndim not in (3, 4) or bias.shape != (x.shape[caxis],):
        raise ShapeError(f"add_bias: bias {bias.shape} vs input {x.shape}")
    view = bias.data.reshape((-1, 1, 1))
    red = tuple(i for i in range(x.ndim) if i != caxis)
    return _node(x.data + view, (x, bias), lambda g: (g, g.sum(axis=red)), "bias")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def freq_pool(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling along frequency; trailing bins are dropped."""
    if size < 1:
        raise ValueError("freq_pool size must be >= 1")
    f = x.shape[-1]
    f_out = f // size
    if f_out < 1:
        raise ShapeError(f"freq_pool: {f} bins < pool size {size}")
    blocks = x.data[..., :f_out * size].reshape(x.shape[:-1] + (f_out, size))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[..., :f_out * size] = gb.reshape(x.shape[:-1] + (f_out * size,))
        return (gx,)

    return _node(out, (x,), bw, "freq_pool")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), bw, "log_softmax")


def nll(logprobs: Tensor, target) -> Tensor:
    """``-logprobs[..., target]``; ``target`` matches the leading shape."""
    s = logprobs.shape[-1]
    tgt = np.asarray(target, dtype=np.int64)
    if tgt.shape != logprobs.shape[:-1]:
        raise ShapeError(f"nll: targets {tgt.shape} vs log-probs {logprobs.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= s):
        raise ValueError(f"nll: target out of range [0, {s})")
    picked = np.take_along_axis(logprobs.data, tgt[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(logprobs.data)
        np.put_along_axis(full, tgt[..., None], -np.asarray(g)[..., None], axis=-1)
        return (full,)

    return _node(-picked, (logprobs,), bw, "nll")
