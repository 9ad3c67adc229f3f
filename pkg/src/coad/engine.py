"""Minimal dense-tensor layer with reverse-mode differentiation.

Arrays are numpy, forward ops run eagerly, and every differentiable op
executed inside a ``with Tape() as tape:`` block appends a backward closure to
that tape. ``backward(tape, loss)`` seeds the loss gradient and replays the
closures in reverse execution order, accumulating ``.grad`` on every tensor
that requires gradients. Outside a tape, ops run without recording, which is
the inference fast path.

The op suite is exactly what a small decoder-only transformer needs: matmul,
broadcasting add/multiply, scalar scale, masked softmax, layer norm, embedding
gather, seeded inverted dropout, tanh-approximated GELU, concat/slice/reshape/
transpose, reductions, and a fused weighted cross-entropy with an ignore id.
No other broadcasting or graph machinery is provided on purpose.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "EngineError",
    "Tensor",
    "Tape",
    "backward",
    "add",
    "mul",
    "scale",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "slice_",
    "sum_",
    "mean",
    "embedding",
    "layer_norm",
    "masked_softmax",
    "dropout",
    "gelu",
    "cross_entropy",
]

logger = logging.getLogger(__name__)


class EngineError(Exception):
    """Raised on shape mismatches, masked-out softmax rows, detached backward."""


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed differentiable ops for one backward pass."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._ops)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap op output; register the backward closure when a tape is active."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape

        def closure():
            if out.grad is None:  # this output never fed the loss
                return
            backward_fn(out.grad)

        tape._ops.append(closure)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of everything ``loss`` depends on through ``tape``."""
    if loss.data.size != 1:
        raise EngineError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise EngineError("loss is detached from this tape; it was not produced under it")
    loss.grad = np.ones_like(loss.data)
    for fn in reversed(tape._ops):
        fn()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise/broadcast addition; covers bias broadcasting."""
    try:
        data = a.data + b.data
    except ValueError:
        raise EngineError(f"add: incompatible shapes {a.shape} vs {b.shape}") from None

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make_result(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise EngineError(f"mul: incompatible shapes {a.shape} vs {b.shape}") from None

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make_result(data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)  # a numpy scalar here would silently promote float32 data

    def bwd(g):
        _accumulate(a, g * c)

    return _make_result(a.data * c, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes follow numpy rules."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise EngineError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise EngineError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise EngineError(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from None

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make_result(data, (a, b), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    return _make_result(a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = np.argsort(axes)

    def bwd(g):
        _accumulate(a, g.transpose(inverse))

    return _make_result(a.data.transpose(axes), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(start, stop)
            _accumulate(t, g[tuple(key)])

    return _make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def slice_(a: Tensor, key: tuple[slice, ...]) -> Tensor:
    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _make_result(a.data[key], (a,), bwd)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            expanded = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(expanded, a.shape).copy())

    return _make_result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise EngineError(
            f"embedding ids out of range [0, {table.shape[0]}): min={ids.min()}, max={ids.max()}"
        )

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accumulate(table, gt)

    return _make_result(table.data[ids], (table,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise EngineError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    data = xhat * gamma.data + beta.data

    def bwd(g):
        lead_axes = tuple(range(g.ndim - 1))
        _accumulate(gamma, (g * xhat).sum(axis=lead_axes))
        _accumulate(beta, g.sum(axis=lead_axes))
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(x, dx)

    return _make_result(data, (x, gamma, beta), bwd)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis with masked entries treated as -inf.

    ``mask`` is boolean (True = attend) and broadcasts against ``scores``.
    A row with no attendable entry is an error, never a silent NaN.
    """
    mask = np.asarray(mask, dtype=bool)
    full_mask = np.broadcast_to(mask, scores.shape)
    if not full_mask.any(axis=-1).all():
        bad = int((~full_mask.any(axis=-1)).sum())
        raise EngineError(f"masked_softmax: {bad} fully-masked row(s)")
    neg = np.where(full_mask, scores.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.exp(neg - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(scores, y * (g - inner))

    return _make_result(y, (scores,), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a per-call mask drawn from ``rng``.

    Call only on the training path; inference simply skips the op. Repeated
    positions get independent masks because the mask is drawn elementwise.
    """
    if not 0.0 <= rate < 1.0:
        raise EngineError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def bwd(g):
        _accumulate(x, g * keep)

    return _make_result(x.data * keep, (x,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    d = x.data
    u = _GELU_C * (d + _GELU_A * d * d * d)
    t = np.tanh(u)
    data = 0.5 * d * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * d * d)
        dydx = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du
        _accumulate(x, g * dydx)

    return _make_result(data, (x,), bwd)


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    weights: np.ndarray,
    ignore_id: int,
) -> Tensor:
    """Weighted mean of -log p(target) over positions whose target is not ignored.

    ``logits`` is (L, V) or (B, L, V); targets/weights match the leading axes.
    Within each sequence the loss is sum(w * nll) / sum(w) over the unignored
    positions; a batch averages those per-sequence values, counting a sequence
    with no unignored target as zero. Ignored positions contribute nothing to
    the value or the gradient.
    """
    squeeze = logits.data.ndim == 2
    ldata = logits.data[None] if squeeze else logits.data
    targets = np.asarray(targets).reshape(ldata.shape[:2])
    weights = np.asarray(weights, dtype=ldata.dtype).reshape(ldata.shape[:2])
    if ldata.ndim != 3:
        raise EngineError(f"cross_entropy expects (L, V) or (B, L, V) logits, got {logits.shape}")
    b, l, v = ldata.shape
    valid = targets != ignore_id
    if valid.any() and (targets[valid].min() < 0 or targets[valid].max() >= v):
        raise EngineError(f"cross_entropy: target ids outside [0, {v})")

    m = ldata.max(axis=-1, keepdims=True)
    shifted = ldata - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True)) + m
    safe_targets = np.where(valid, targets, 0)
    picked = np.take_along_axis(ldata, safe_targets[..., None], axis=-1)[..., 0]
    nll = (lse[..., 0] - picked) * valid

    w = weights * valid
    wsum = w.sum(axis=-1)
    empty = wsum == 0.0
    if empty.any():
        logger.debug("cross_entropy: %d sequence(s) with all targets ignored", int(empty.sum()))
    denom = np.where(empty, 1.0, wsum)
    per_seq = (w * nll).sum(axis=-1) / denom
    value = per_seq.mean(dtype=ldata.dtype)

    def bwd(g):
        soft = np.exp(ldata - lse)
        grad = soft.copy()
        np.put_along_axis(
            grad,
            safe_targets[..., None],
            np.take_along_axis(grad, safe_targets[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        coeff = (w / denom[:, None])[..., None] / b
        grad *= coeff
        grad *= valid[..., None]
        grad *= g
        _accumulate(logits, grad[0] if squeeze else grad)

    return _make_result(np.asarray(value, dtype=ldata.dtype), (logits,), bwd)
