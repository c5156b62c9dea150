"""Dense float64 tensors with reverse-mode automatic differentiation.

Tensors are immutable values once created. Gradients are recorded on an
explicit :class:`Tape` that lives for a single forward/backward cycle;
trainable parameters live outside the tape and only the optimizer (or a
checkpoint loader) may rebind ``Tensor.data`` between passes.

Masked attention logits use a large negative finite constant instead of
true minus infinity so that mask matrices stay closed under addition and
scaling. Anything at or below ``MASK_THRESHOLD`` is treated as masked and
receives an exactly-zero softmax weight.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateRowError,
    DimensionError,
    TapeError,
    ValidationError,
)

SENTINEL = -1e9
MASK_THRESHOLD = -1e8

_TLS = threading.local()


def _active() -> "Tape | None":
    return getattr(_TLS, "tape", None)


class Tensor:
    """A dense array of float64 values, optionally tracked on a tape."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self._tape: Tape | None = None
        self._node = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.data.shape)})"


class Tape:
    """Append-only record of one forward pass.

    Every node's parents precede it, so one reverse sweep propagates
    gradients and visits each node exactly once. A tape is consumed by its
    first backward pass; a second pass without a fresh forward is rejected.
    """

    __slots__ = ("_parents", "_backs", "_consumed")

    def __init__(self) -> None:
        self._parents: list[tuple[int, ...]] = []
        self._backs: list[Callable[[np.ndarray], tuple[np.ndarray, ...]] | None] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _active() is not None:
            raise TapeError("another tape is already active on this thread")
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TLS.tape = None

    def __len__(self) -> int:
        return len(self._parents)

    def watch(self, t: Tensor) -> int:
        """Give ``t`` a leaf node on this tape so gradients can reach it."""
        if t._tape is self:
            return t._node
        idx = len(self._parents)
        self._parents.append(())
        self._backs.append(None)
        t._tape = self
        t._node = idx
        return idx

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """d loss / d source for every source; zeros when disconnected."""
        if loss.size != 1:
            raise DimensionError(f"loss must be a scalar, got shape {loss.shape}")
        if self._consumed:
            raise TapeError("tape already consumed by a backward pass; rerun the forward pass")
        self._consumed = True
        grads: list[np.ndarray | None] = [None] * len(self._parents)
        if loss._tape is self and loss._node >= 0:
            grads[loss._node] = np.ones_like(loss.data)
            for i in range(loss._node, -1, -1):
                g = grads[i]
                back = self._backs[i]
                if g is None or back is None:
                    continue
                for p, pg in zip(self._parents[i], back(g)):
                    grads[p] = pg if grads[p] is None else grads[p] + pg
        out: list[np.ndarray] = []
        for s in sources:
            if s._tape is self and s._node >= 0 and grads[s._node] is not None:
                out.append(np.array(grads[s._node], copy=True))
            else:
                out.append(np.zeros_like(s.data))
        return out


def _record(out: Tensor, parents: tuple[Tensor, ...], back) -> Tensor:
    tape = _active()
    if tape is None:
        return out
    idxs = tuple(tape.watch(p) for p in parents)
    out._tape = tape
    out._node = len(tape._parents)
    tape._parents.append(idxs)
    tape._backs.append(back)
    return out


def _need_2d(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise DimensionError(f"{name} needs 2-D operands, got shape {t.shape}")


def _need_same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{name} shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# core operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m-by-k and a k-by-n tensor."""
    _need_2d("matmul", a, b)
    A, B = a.data, b.data
    if A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {A.shape} x {B.shape}")
    out = Tensor(A @ B)

    def back(g):
        return g @ B.T, A.T @ g

    return _record(out, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    _need_2d("transpose", x)
    out = Tensor(x.data.T.copy())

    def back(g):
        return (g.T,)

    return _record(out, (x,), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    _need_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def back(g):
        return g, g

    return _record(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _need_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def back(g):
        return g, -g

    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _need_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def back(g):
        return g * bd, g * ad

    return _record(out, (a, b), back)


def scale(x: Tensor, factor: float) -> Tensor:
    c = float(factor)
    out = Tensor(x.data * c)

    def back(g):
        return (g * c,)

    return _record(out, (x,), back)


def one_minus(x: Tensor) -> Tensor:
    out = Tensor(1.0 - x.data)

    def back(g):
        return (-g,)

    return _record(out, (x,), back)


def add_const(x: Tensor, const: np.ndarray) -> Tensor:
    """Add a fixed array (no gradient flows into the constant)."""
    c = np.asarray(const, dtype=np.float64)
    if c.shape != x.data.shape:
        raise DimensionError(f"add_const shape mismatch: {x.shape} vs {c.shape}")
    out = Tensor(x.data + c)

    def back(g):
        return (g,)

    return _record(out, (x,), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1-by-n bias row to every row of an m-by-n tensor."""
    _need_2d("add_bias", x, b)
    if b.data.shape != (1, x.data.shape[1]):
        raise DimensionError(f"add_bias expects bias (1, {x.data.shape[1]}), got {b.shape}")
    out = Tensor(x.data + b.data)

    def back(g):
        return g, g.sum(axis=0, keepdims=True)

    return _record(out, (x, b), back)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    out = Tensor(np.where(keep, x.data, 0.0))

    def back(g):
        return (g * keep,)

    return _record(out, (x,), back)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    out = Tensor(s)

    def back(g):
        return (g * s * (1.0 - s),)

    return _record(out, (x,), back)


def absolute(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))
    sign = np.sign(x.data)

    def back(g):
        return (g * sign,)

    return _record(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean and unit variance, then apply an affine map."""
    _need_2d("layer_norm", x, gain, bias)
    a = x.data
    n = a.shape[1]
    if gain.data.shape != (1, n) or bias.data.shape != (1, n):
        raise DimensionError(
            f"layer_norm affine params must be (1, {n}), got {gain.shape} and {bias.shape}"
        )
    gn = gain.data
    mu = a.mean(axis=1, keepdims=True)
    d = a - mu
    var = (d * d).mean(axis=1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = d * istd
    out = Tensor(xhat * gn + bias.data)

    def back(g):
        dxhat = g * gn
        dvar = (dxhat * d).sum(axis=1, keepdims=True) * (-0.5) * istd**3
        dmu = -(dxhat * istd).sum(axis=1, keepdims=True) + dvar * (-2.0 / n) * d.sum(
            axis=1, keepdims=True
        )
        dx = dxhat * istd + dvar * (2.0 / n) * d + dmu / n
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), back)


def concat_cols(*parts: Tensor) -> Tensor:
    """Stack tensors side by side along the column axis."""
    if not parts:
        raise DimensionError("concat_cols needs at least one tensor")
    _need_2d("concat_cols", *parts)
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.shape[0] != rows:
            raise DimensionError(
                f"concat_cols row mismatch: {parts[0].shape} vs {p.shape}"
            )
    widths = [p.data.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    edges = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(widths)))

    return _record(out, tuple(parts), back)


def concat_rows(*parts: Tensor) -> Tensor:
    """Stack tensors on top of each other along the row axis."""
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    _need_2d("concat_rows", *parts)
    cols = parts[0].data.shape[1]
    for p in parts:
        if p.data.shape[1] != cols:
            raise DimensionError(
                f"concat_rows column mismatch: {parts[0].shape} vs {p.shape}"
            )
    heights = [p.data.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    edges = np.cumsum([0] + heights)

    def back(g):
        return tuple(g[edges[i] : edges[i + 1], :] for i in range(len(heights)))

    return _record(out, tuple(parts), back)


def max_rows(x: Tensor) -> Tensor:
    """Columnwise maximum over rows; ties resolve to the first maximal row."""
    _need_2d("max_rows", x)
    a = x.data
    idx = a.argmax(axis=0)
    cols = np.arange(a.shape[1])
    out = Tensor(a[idx, cols][None, :])

    def back(g):
        z = np.zeros_like(a)
        z[idx, cols] = g[0]
        return (z,)

    return _record(out, (x,), back)


def sum_rows(x: Tensor) -> Tensor:
    """Columnwise sum over rows, keeping a single row."""
    _need_2d("sum_rows", x)
    a = x.data
    out = Tensor(a.sum(axis=0, keepdims=True))

    def back(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (x,), back)


def sum_all(x: Tensor) -> Tensor:
    a = x.data
    out = Tensor(a.sum())

    def back(g):
        return (np.full_like(a, float(g)),)

    return _record(out, (x,), back)


def mean_all(x: Tensor) -> Tensor:
    a = x.data
    out = Tensor(a.mean())

    def back(g):
        return (np.full_like(a, float(g) / a.size),)

    return _record(out, (x,), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax with max-subtraction; masked entries get exactly zero weight.

    An entry is masked when its logit is at or below ``MASK_THRESHOLD``. A row
    with every entry masked raises :class:`DegenerateRowError` instead of
    silently producing NaN.
    """
    _need_2d("softmax_rows", x)
    a = x.data
    masked = a <= MASK_THRESHOLD
    dead = masked.all(axis=1)
    if dead.any():
        raise DegenerateRowError(f"softmax row {int(np.argmax(dead))} is entirely masked")
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    e[masked] = 0.0
    w = e / e.sum(axis=1, keepdims=True)
    out = Tensor(w)

    def back(g):
        dot = (g * w).sum(axis=1, keepdims=True)
        return (w * (g - dot),)

    return _record(out, (x,), back)


def softmax_cols(x: Tensor) -> Tensor:
    """Softmax down each column (a distribution over rows per column)."""
    _need_2d("softmax_cols", x)
    a = x.data
    m = a.max(axis=0, keepdims=True)
    e = np.exp(a - m)
    w = e / e.sum(axis=0, keepdims=True)
    out = Tensor(w)

    def back(g):
        dot = (g * w).sum(axis=0, keepdims=True)
        return (w * (g - dot),)

    return _record(out, (x,), back)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a table by index; gradients scatter-add back."""
    _need_2d("take_rows", table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("take_rows needs a nonempty 1-D index sequence")
    rows = table.data.shape[0]
    bad = (idx < 0) | (idx >= rows)
    if bad.any():
        raise ValidationError(
            f"row id {int(idx[bad][0])} out of range for a table with {rows} rows"
        )
    out = Tensor(table.data[idx])

    def back(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx, g)
        return (z,)

    return _record(out, (table,), back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _need_2d("slice_rows", x)
    m = x.data.shape[0]
    if not (0 <= start < stop <= m):
        raise DimensionError(f"slice_rows range [{start}, {stop}) invalid for {m} rows")
    out = Tensor(x.data[start:stop].copy())

    def back(g):
        z = np.zeros_like(x.data)
        z[start:stop] = g
        return (z,)

    return _record(out, (x,), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when the rate is zero."""
    if rate <= 0:
        return x
    if not 0 < rate < 1:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = rng.random(x.data.shape) >= rate
    s = 1.0 / (1.0 - rate)
    out = Tensor(x.data * keep * s)

    def back(g):
        return (g * keep * s,)

    return _record(out, (x,), back)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    _need_2d("cross_entropy", logits)
    a = logits.data
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (a.shape[0],):
        raise DimensionError(f"cross_entropy needs {a.shape[0]} labels, got shape {y.shape}")
    if (y < 0).any() or (y >= a.shape[1]).any():
        raise ValidationError(f"label out of range for {a.shape[1]} classes")
    m = a.max(axis=1, keepdims=True)
    z = a - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    rows = np.arange(a.shape[0])
    out = Tensor((lse - a[rows, y]).mean())

    def back(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[rows, y] -= 1.0
        return (p * (float(g) / a.shape[0]),)

    return _record(out, (logits,), back)


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Fan-scaled uniform init for a rows-by-cols weight matrix."""
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
