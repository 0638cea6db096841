"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (gates, encoders, losses) is built from the primitive
catalog in this module.  Tensors wrap a numpy array plus an optional gradient;
each primitive records a backward closure over its parents, and
``Tensor.backward`` replays the closures in reverse topological order.

Conventions:
  * values are always float64; checkpoints cast to float32 at the edge.
  * only 0-D, 1-D and 2-D tensors appear in practice; ``matmul`` rejects more.
  * elementwise ops broadcast only over *leading* batch dimensions, i.e. the
    smaller shape must be a suffix of the larger one.  Anything else is a
    shape bug and raises instead of silently broadcasting.
  * a ``grad`` of None means "no gradient accumulated", which reads as zero.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes do not line up for an operation."""


class NumericsError(ArithmeticError):
    """Raised when an operation produces or receives non-finite values."""


def _as_f64(values) -> Array:
    return np.asarray(values, dtype=np.float64)


def _suffix_broadcast(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Return the output shape if one shape is a suffix of the other."""
    if a == b:
        return a
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeError(f"shapes {a} and {b} do not broadcast (suffix rule)")
    return big


def _reduce_to(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum out the leading axes a suffix-broadcast introduced."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values: Array = _as_f64(values)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def accumulate(self, grad: Array) -> None:
        if not self.requires_grad:
            return
        grad = _reduce_to(np.asarray(grad, dtype=np.float64), self.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad

    def backward(self) -> None:
        """Backpropagate from a scalar: fills ``grad`` on every ancestor."""
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.values))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; floats and ints are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(values: Array, parents: tuple[Tensor, ...],
          backward: Callable[[Tensor, Array], None]) -> Tensor:
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = lambda grad: backward(out, grad)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape)

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad)
        b.accumulate(grad)

    return _node(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape)

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad)
        b.accumulate(-grad)

    return _node(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape)

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad * b.values)
        b.accumulate(grad * a.values)

    return _node(a.values * b.values, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul supports 1-D and 2-D operands, got {a.shape} @ {b.shape}")
    a2 = a.values[None, :] if a.ndim == 1 else a.values
    b2 = b.values[:, None] if b.ndim == 1 else b.values
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out2 = a2 @ b2
    if a.ndim == 1 and b.ndim == 1:
        values = out2.reshape(())
    elif a.ndim == 1:
        values = out2.reshape(-1)
    elif b.ndim == 1:
        values = out2.reshape(-1)
    else:
        values = out2

    def backward(out: Tensor, grad: Array) -> None:
        g2 = np.asarray(grad, dtype=np.float64).reshape(a2.shape[0], b2.shape[1])
        ga = g2 @ b2.T
        gb = a2.T @ g2
        a.accumulate(ga.reshape(a.shape))
        b.accumulate(gb.reshape(b.shape))

    return _node(values, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad.T)

    return _node(a.values.T.copy(), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    values = np.tanh(a.values)

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad * (1.0 - out.values * out.values))

    return _node(values, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    values = np.empty_like(x)
    pos = x >= 0
    values[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    values[~pos] = ex / (1.0 + ex)

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad * out.values * (1.0 - out.values))

    return _node(values, (a,), backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        values = np.exp(a.values)
    if not np.all(np.isfinite(values)):
        raise NumericsError("exp overflowed to a non-finite value")

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad * out.values)

    return _node(values, (a,), backward)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.log(a.values)
    if not np.all(np.isfinite(values)):
        raise NumericsError("log of a non-positive value")

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad / a.values)

    return _node(values, (a,), backward)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.values >= floor

    def backward(out: Tensor, grad: Array) -> None:
        a.accumulate(grad * mask)

    return _node(np.maximum(a.values, floor), (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 1-D or 2-D tensor (1-D is a single row)."""
    if a.ndim not in (1, 2):
        raise ShapeError(f"softmax_rows needs a 1-D or 2-D tensor, got {a.shape}")
    x = a.values
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    values = ex / ex.sum(axis=-1, keepdims=True)

    def backward(out: Tensor, grad: Array) -> None:
        s = out.values
        dot = (grad * s).sum(axis=-1, keepdims=True)
        a.accumulate(s * (grad - dot))

    return _node(values, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and reshaping


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        values = a.values.sum()

        def backward(out: Tensor, grad: Array) -> None:
            a.accumulate(np.broadcast_to(grad, a.shape))

        return _node(np.asarray(values), (a,), backward)
    if a.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"axis sum needs a 2-D tensor and axis in (0, 1), got {a.shape}")
    values = a.values.sum(axis=axis)

    def backward_axis(out: Tensor, grad: Array) -> None:
        expanded = np.expand_dims(np.asarray(grad, dtype=np.float64), axis=axis)
        a.accumulate(np.broadcast_to(expanded, a.shape))

    return _node(values, (a,), backward_axis)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return mul(tsum(a, axis=axis), Tensor(1.0 / count))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    rows = [p.values[None, :] if p.ndim == 1 else p.values for p in parts]
    cols = {r.shape[1] for r in rows}
    if len(cols) != 1 or any(r.ndim != 2 for r in rows):
        raise ShapeError(f"concat_rows needs matching column counts, got {[p.shape for p in parts]}")
    values = np.vstack(rows)
    counts = [r.shape[0] for r in rows]

    def backward(out: Tensor, grad: Array) -> None:
        offset = 0
        for part, n in zip(parts, counts):
            chunk = grad[offset:offset + n]
            part.accumulate(chunk[0] if part.ndim == 1 else chunk)
            offset += n

    return _node(values, tuple(parts), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    if any(p.ndim != 2 for p in parts) or len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"concat_cols needs 2-D tensors with equal rows, got {[p.shape for p in parts]}")
    values = np.hstack([p.values for p in parts])
    widths = [p.shape[1] for p in parts]

    def backward(out: Tensor, grad: Array) -> None:
        offset = 0
        for part, w in zip(parts, widths):
            part.accumulate(grad[:, offset:offset + w])
            offset += w

    return _node(values, tuple(parts), backward)


def take_row(a: Tensor, index: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"take_row needs a 2-D tensor, got {a.shape}")
    if not 0 <= index < a.shape[0]:
        raise ShapeError(f"row {index} out of range for shape {a.shape}")

    def backward(out: Tensor, grad: Array) -> None:
        full = np.zeros_like(a.values)
        full[index] = grad
        a.accumulate(full)

    return _node(a.values[index].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# fused layers


def embedding_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding_rows needs a flat id list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"token id out of range 0..{table.shape[0] - 1}")

    def backward(out: Tensor, grad: Array) -> None:
        full = np.zeros_like(table.values)
        np.add.at(full, idx, grad)
        table.accumulate(full)

    return _node(table.values[idx].copy(), (table,), backward)


def embedding_mean(table: Tensor, ids: Sequence[Sequence[int]]) -> Tensor:
    """Mean of embedded tokens per example: (batch, seq) ids -> (batch, d)."""
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] == 0:
        raise ShapeError(f"embedding_mean needs (batch, seq) ids, got shape {idx.shape}")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ShapeError(f"token id out of range 0..{table.shape[0] - 1}")
    seq = idx.shape[1]
    values = table.values[idx].mean(axis=1)

    def backward(out: Tensor, grad: Array) -> None:
        full = np.zeros_like(table.values)
        per_token = np.repeat(grad / seq, seq, axis=0)
        np.add.at(full, idx.reshape(-1), per_token)
        table.accumulate(full)

    return _node(values, (table,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    if x.shape[-1] != gain.shape[-1] or gain.shape != bias.shape or gain.ndim != 1:
        raise ShapeError(f"layer_norm shapes: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mean = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv

    def backward(out: Tensor, grad: Array) -> None:
        if gain.requires_grad:
            gain.accumulate((grad * normed).sum(axis=tuple(range(grad.ndim - 1))))
        if bias.requires_grad:
            bias.accumulate(grad.sum(axis=tuple(range(grad.ndim - 1))))
        gx = grad * gain.values
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * normed).mean(axis=-1, keepdims=True)
        x.accumulate(inv * (gx - m1 - normed * m2))

    return _node(normed * gain.values + bias.values, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(out: Tensor, grad: Array) -> None:
        x.accumulate(grad * mask)

    return _node(x.values * mask, (x,), backward)


def grad_reverse(x: Tensor) -> Tensor:
    """Identity forward; backward flips the gradient sign."""

    def backward(out: Tensor, grad: Array) -> None:
        x.accumulate(-grad)

    return _node(x.values, (x,), backward)


# ---------------------------------------------------------------------------
# verification


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Array,
                            h: float = 1e-5) -> float:
    """Compare analytic and central-difference gradients of a scalar function.

    Returns the maximum relative error over coordinates, where each
    coordinate's error is |analytic - numeric| / max(1e-12, |numeric|).
    """
    base = _as_f64(x).copy()
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise ShapeError(f"finite_difference_check needs a scalar function, got {out.shape}")
    if not np.isfinite(out.values).all():
        raise NumericsError("function value is not finite")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = f(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - h
        down = f(Tensor(bumped.reshape(base.shape))).item()
        num_flat[i] = (up - down) / (2.0 * h)

    err = np.abs(analytic.reshape(-1) - num_flat)
    scale = np.maximum(1e-12, np.abs(num_flat))
    return float((err / scale).max()) if flat.size else 0.0
