"""Dense tensors with reverse-mode gradients and a seedable dropout primitive.

Everything the classifier computes is built from the ops in this module:
matmul, add, mul, layer_norm, softmax, gelu, embedding_lookup, causal_mask,
cross_entropy, dropout, plus the shape plumbing (reshape/transpose/sum/mean/
select_positions) the attention stack needs. Each op records a closure for
the reverse pass; `Tensor.backward()` on a scalar loss fills `.grad` on every
reachable tensor that requires gradients.

Values are stored as numpy arrays in row-major order. Completed ops never
hold NaN/Inf: results are checked at construction and the causal mask uses a
large finite negative instead of -inf. Math runs in float64 by default; set
DROPBENCH_DTYPE=float32 (or call set_default_dtype) for faster, lower
precision model math. Gradient checking should stay in float64.
"""

from __future__ import annotations

import contextlib
import math
import os
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .rng import RngStream

MASK_VALUE = -1.0e9  # additive attention mask; finite so tensors never hold -inf
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_DTYPE = np.float32 if os.environ.get("DROPBENCH_DTYPE") == "float32" else np.float64
_GRAD_ENABLED = True


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    """Switch model math between float64 (default) and float32."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense real-valued array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor holds non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = _parents
        self._backward_fn = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph -----------------------------------------------------------

    def _accumulate(self, g: np.ndarray, fresh: bool = False) -> None:
        """Add one gradient contribution.

        fresh=True promises g is a newly allocated array owned by the
        caller (not a view of or alias to any other live gradient), so it
        can be adopted without a defensive copy.
        """
        if self.grad is None:
            if fresh and g.dtype == self.data.dtype and g.flags.writeable:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse pass from a scalar loss; fills .grad on requires_grad tensors."""
        if self.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not an op; divide by a scalar")
        return mul(self, _as_tensor(1.0 / scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    out = Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate(ga, fresh=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.shape)
            b._accumulate(gb, fresh=gb is not g)

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), fresh=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), fresh=True)

    return _make(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b; 2-d or batched with broadcastable leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape), fresh=True)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape), fresh=True)

    return _make(out_data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = x.data.transpose(axes)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inv))

    return _make(out_data, (x,), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(out_data, (x,), backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return tensor_sum(x, axis=axis, keepdims=keepdims) / count


# -- neural-net ops ----------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply affine.

    The epsilon sits inside the square root, so a constant row normalizes
    to zero and maps to the bias exactly.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std
    out_data = y * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * y, gain.shape), fresh=True)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
            bias._accumulate(gb, fresh=gb is not g)
        if x.requires_grad:
            gy = g * gain.data
            mean_gy = gy.mean(axis=-1, keepdims=True)
            mean_gy_y = (gy * y).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (gy - mean_gy - y * mean_gy_y), fresh=True)

    return _make(out_data, (x, gain, bias), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot), fresh=True)

    return _make(y, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            x._accumulate(g * (cdf + x.data * pdf), fresh=True)

    return _make(out_data, (x,), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer id; out shape = ids.shape + (dim,)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError("embedding id out of range")
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table._accumulate(gt, fresh=True)

    return _make(out_data, (table,), backward)


def causal_mask(seq_len: int) -> Tensor:
    """Additive mask: 0 at or below the diagonal, a large negative above.

    Finite by design; after softmax the masked weights underflow to exactly 0,
    so position i never attends to any j > i.
    """
    m = np.triu(np.full((seq_len, seq_len), MASK_VALUE, dtype=_DTYPE), k=1)
    return Tensor(m)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("cross_entropy expects logits of shape (batch, classes)")
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be a vector matching the batch size")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label id out of range")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(log_probs)
            probs[np.arange(n), labels] -= 1.0
            logits._accumulate(g * probs / n, fresh=True)

    return _make(np.asarray(loss), (logits,), backward)


def dropout(x: Tensor, rate: float, rng: RngStream, active: bool) -> Tensor:
    """Inverted dropout: zero each element with probability `rate`, scale
    survivors by 1/(1-rate), so the mask-expectation of the output equals x.

    Inactive mode and rate 0 are strict identities (the same tensor comes
    back), which is what the dropout-disabled configuration relies on.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not active or rate == 0.0:
        return x
    gen = rng.generator()
    keep = gen.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep.astype(x.data.dtype) * scale
    out_data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask, fresh=True)

    return _make(out_data, (x,), backward)


def select_positions(x: Tensor, positions: np.ndarray) -> Tensor:
    """Pick one sequence position per batch row: (B, T, D) -> (B, D)."""
    x = _as_tensor(x)
    positions = np.asarray(positions)
    if x.ndim != 3 or positions.shape != (x.shape[0],):
        raise ValueError("select_positions expects (B, T, D) and per-row positions")
    batch_idx = np.arange(x.shape[0])
    out_data = x.data[batch_idx, positions]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (batch_idx, positions), g)
            x._accumulate(gx, fresh=True)

    return _make(out_data, (x,), backward)
