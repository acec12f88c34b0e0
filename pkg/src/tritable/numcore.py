"""Minimal shape-checked float64 array kernel with reverse-mode differentiation.

Every operation builds a node in an implicit computation graph; calling
:func:`backward` on a scalar result accumulates gradients into every tensor
that contributed to it.  The op set is exactly what the model needs: linear
maps, Hadamard and pairwise products, ReLU, softmax, max-pooling, scaled
dot-product multi-head attention, embedding lookup, and summed cross-entropy.

All data is float64 and every op is deterministic; non-finite values are
rejected at construction time so numerical blow-ups surface at their source.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_serials = itertools.count()


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff.

    Gradients materialize lazily: ``grad`` is None until :func:`backward`
    (or :func:`zero_grads`) touches the tensor.
    """

    __slots__ = ("data", "grad", "_parents", "_backward", "_serial")

    def __init__(self, data, parents: tuple["Tensor", ...] = (),
                 backward: Callable[[], None] | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # One-pass blow-up guard: any NaN/Inf entry makes the sum non-finite.
        if not math.isfinite(float(arr.sum())):
            raise NumericError("tensor contains non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self._serial = next(_serials)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g)  # copy: grad must own its storage
        else:
            self.grad += g

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named leaf tensor whose gradient is consumed by the optimizer."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a trailing-suffix shape of ``a``
    (the bias-broadcast case), in which case its gradient sums over the
    leading axes."""
    if a.data.shape == b.data.shape:
        out = Tensor(a.data + b.data, (a, b))

        def _back() -> None:
            a.accumulate(out.grad)
            b.accumulate(out.grad)
    else:
        k = b.data.ndim
        _require(k <= a.data.ndim and a.data.shape[a.data.ndim - k:] == b.data.shape,
                 f"add: cannot broadcast {b.data.shape} onto {a.data.shape}")
        out = Tensor(a.data + b.data, (a, b))
        lead = tuple(range(a.data.ndim - k))

        def _back() -> None:
            a.accumulate(out.grad)
            b.accumulate(out.grad.sum(axis=lead))

    out._backward = _back
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of identically shaped tensors."""
    _require(a.data.shape == b.data.shape,
             f"hadamard: shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, (a, b))

    def _back() -> None:
        a.accumulate(out.grad * b.data)
        b.accumulate(out.grad * a.data)

    out._backward = _back
    return out


def pair_product(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs Hadamard product: out[i, j] = a[i] * b[j].

    Inputs are [n, d] and [m, d]; output is [n, m, d].  This is the cell
    feature of the table-filling step before the per-relation projection.
    """
    _require(a.data.ndim == 2 and b.data.ndim == 2
             and a.data.shape[1] == b.data.shape[1],
             f"pair_product: shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data[:, None, :] * b.data[None, :, :], (a, b))

    def _back() -> None:
        a.accumulate((out.grad * b.data[None, :, :]).sum(axis=1))
        b.accumulate((out.grad * a.data[:, None, :]).sum(axis=0))

    out._backward = _back
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map along the last axis: out[..., k] = sum_m x[..., m] w[m, k] + b[k]."""
    _require(w.data.ndim == 2, f"linear: weight must be 2-d, got {w.data.shape}")
    d_in, d_out = w.data.shape
    _require(x.data.ndim >= 1 and x.data.shape[-1] == d_in,
             f"linear: input {x.data.shape} does not match weight {w.data.shape}")
    _require(b.data.shape == (d_out,),
             f"linear: bias {b.data.shape} does not match weight {w.data.shape}")
    flat = x.data.reshape(-1, d_in)
    prod = flat @ w.data
    prod += b.data
    out = Tensor(prod.reshape(*x.data.shape[:-1], d_out), (x, w, b))

    def _back() -> None:
        g = out.grad.reshape(-1, d_out)
        x.accumulate((g @ w.data.T).reshape(x.data.shape))
        w.accumulate(flat.T @ g)
        b.accumulate(g.sum(axis=0))

    out._backward = _back
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2
             and a.data.shape[1] == b.data.shape[0],
             f"matmul: shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def _back() -> None:
        a.accumulate(out.grad @ b.data.T)
        b.accumulate(a.data.T @ out.grad)

    out._backward = _back
    return out


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly zero is zero."""
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), (x,))

    def _back() -> None:
        x.accumulate(out.grad * mask)

    out._backward = _back
    return out


def softmax_last(x: Tensor) -> Tensor:
    """Numerically stabilized softmax along the last axis."""
    _require(x.data.ndim >= 1 and x.data.shape[-1] >= 1,
             "softmax_last: needs a non-empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, (x,))

    def _back() -> None:
        inner = (out.grad * s).sum(axis=-1, keepdims=True)
        x.accumulate(s * (out.grad - inner))

    out._backward = _back
    return out


def maxpool_axis(x: Tensor, axis: int) -> Tensor:
    """Maximum over one axis (removed); gradient goes to the first argmax."""
    ndim = x.data.ndim
    if axis < 0:
        axis += ndim
    _require(0 <= axis < ndim, f"maxpool_axis: axis {axis} invalid for {x.data.shape}")
    idx = x.data.argmax(axis=axis)
    out = Tensor(x.data.max(axis=axis), (x,))

    def _back() -> None:
        g = x.ensure_grad()
        flat = np.zeros_like(x.data)
        np.put_along_axis(flat, np.expand_dims(idx, axis),
                          np.expand_dims(out.grad, axis), axis=axis)
        g += flat

    out._backward = _back
    return out


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    _require(len(parts) >= 1, "concat: need at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]

    def _back() -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(offset, offset + size)
            p.accumulate(out.grad[tuple(sl)])
            offset += size

    out._backward = _back
    return out


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    _require(0 <= start < stop <= x.data.shape[-1],
             f"slice_last: [{start}:{stop}] invalid for {x.data.shape}")
    out = Tensor(x.data[..., start:stop], (x,))

    def _back() -> None:
        x.ensure_grad()[..., start:stop] += out.grad

    out._backward = _back
    return out


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    inverse = tuple(np.argsort(perm))
    out = Tensor(np.transpose(x.data, perm), (x,))

    def _back() -> None:
        x.accumulate(np.transpose(out.grad, inverse))

    out._backward = _back
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))

    def _back() -> None:
        x.accumulate(out.grad.reshape(x.data.shape))

    out._backward = _back
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor, (x,))

    def _back() -> None:
        x.accumulate(out.grad * factor)

    out._backward = _back
    return out


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup (embedding gather); gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)
    _require(table.data.ndim == 2, f"take_rows: table must be 2-d, got {table.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"take_rows: id out of range for {table.data.shape[0]} rows")
    out = Tensor(table.data[ids], (table,))

    def _back() -> None:
        np.add.at(table.ensure_grad(), ids, out.grad)

    out._backward = _back
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  weights: np.ndarray | None = None) -> Tensor:
    """Summed negative log-likelihood of ``targets`` under per-cell softmax.

    ``logits`` is [..., C] and ``targets`` an integer array of the leading
    shape; the result is the SUM over all cells (not the mean).  Optional
    per-cell ``weights`` scale each cell's contribution.
    """
    targets = np.asarray(targets, dtype=np.int64)
    classes = logits.data.shape[-1]
    _require(targets.shape == logits.data.shape[:-1],
             f"cross_entropy: targets {targets.shape} vs logits {logits.data.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise ShapeError(f"cross_entropy: target index out of range for {classes} classes")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        _require(weights.shape == targets.shape,
                 f"cross_entropy: weights {weights.shape} vs targets {targets.shape}")

    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    logsumexp = np.log(np.exp(z).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(logits.data, targets[..., None], axis=-1)[..., 0]
    nll = logsumexp - picked
    if weights is not None:
        nll = nll * weights
    out = Tensor(nll.sum(), (logits,))

    def _back() -> None:
        soft = np.exp(z)
        soft /= soft.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(soft)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        g = soft - onehot
        if weights is not None:
            g = g * weights[..., None]
        logits.accumulate(g * out.grad)

    out._backward = _back
    return out


@dataclass
class AttentionParams:
    """Learnable projections for one multi-head attention block."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.wq, self.bq, self.wk, self.bk,
                self.wv, self.bv, self.wo, self.bo]


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         params: AttentionParams) -> Tensor:
    """Scaled dot-product attention over ``heads`` splits of the feature axis.

    Inputs are [n_q, d], [n_k, d], [n_k, d]; each head attends over its
    d/heads slice with scale 1/sqrt(d/heads), head outputs are concatenated
    and projected by ``wo``.  Self-attention is the q = k = v special case.
    """
    d = q.data.shape[-1]
    _require(q.data.ndim == 2 and k.data.ndim == 2 and v.data.ndim == 2,
             "attention: inputs must be 2-d [positions, features]")
    _require(k.data.shape == v.data.shape,
             f"attention: key/value shapes differ: {k.data.shape} vs {v.data.shape}")
    _require(k.data.shape[-1] == d,
             f"attention: query width {d} vs key width {k.data.shape[-1]}")
    if d % heads != 0:
        raise ShapeError(f"attention: width {d} not divisible by {heads} heads")
    dh = d // heads

    qp = linear(q, params.wq, params.bq)
    kp = linear(k, params.wk, params.bk)
    vp = linear(v, params.wv, params.bv)

    outputs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = (slice_last(t, lo, hi) for t in (qp, kp, vp))
        scores = scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
        outputs.append(matmul(softmax_last(scores), vh))
    merged = outputs[0] if heads == 1 else concat(outputs, axis=-1)
    return linear(merged, params.wo, params.bo)


def _ancestors(root: Tensor) -> list[Tensor]:
    seen = {id(root)}
    nodes = [root]
    stack = [root]
    while stack:
        for p in stack.pop()._parents:
            if id(p) not in seen:
                seen.add(id(p))
                nodes.append(p)
                stack.append(p)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every graph ancestor."""
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar, got shape {loss.data.shape}")
    nodes = _ancestors(loss)
    # Creation order is a topological order: ops only consume existing
    # tensors, so descending serials visit every child before its parents.
    nodes.sort(key=lambda t: t._serial, reverse=True)
    loss.accumulate(np.array(1.0))
    for node in nodes:
        if node._backward is not None:
            node._backward()


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def central_difference(f: Callable[[], float], array: np.ndarray,
                       index: tuple[int, ...], eps: float = 1e-5) -> float:
    """Two-sided finite-difference derivative of ``f`` w.r.t. one coordinate.

    Mutates ``array`` in place during evaluation and restores it afterwards;
    this is the independent oracle used to validate analytic gradients.
    """
    original = array[index]
    array[index] = original + eps
    up = f()
    array[index] = original - eps
    down = f()
    array[index] = original
    return (up - down) / (2.0 * eps)
