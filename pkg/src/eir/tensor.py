"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape nothing is recorded, so
inference runs as plain numpy.

    with Tape() as tape:
        loss = cross_entropy(softmax(x @ w, axis=-1), y)
    backward(loss, tape)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

MAX_RANK = 4
CE_FLOOR = 1e-12

_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def is_recording() -> bool:
    return bool(_TAPES)


def _record(out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    result = Tensor(out)
    if _TAPES and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        _TAPES[-1].nodes.append(_Node(tuple(inputs), result, backward))
    return result


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``.grad`` on every tensor on ``tape`` that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` buffers, so leaf parameters
    must be zeroed between steps by the caller.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        if not _TAPES:
            raise ContractError("backward called with no tape")
        tape = _TAPES[-1]
    if not loss.requires_grad:
        raise ContractError("loss was not produced on a tape from differentiable inputs")
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is not None and inp.requires_grad:
                _accumulate(inp, gi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` along new or unit leading axes; gradients are summed back."""
    src = x.shape
    out = np.broadcast_to(x.data, tuple(shape)).copy()
    return _record(out, (x,), lambda g: (_unbroadcast(g, src),))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad @ bd, (a, b), grad_fn)


def transpose(x: Tensor, axes: Sequence[int] = ()) -> Tensor:
    axes = tuple(axes) if axes else tuple(range(x.ndim))[::-1]
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _record(x.data.reshape(tuple(shape)), (x,), lambda g: (g.reshape(src),))


def take(x: Tensor, indices: Sequence[int], axis: int) -> Tensor:
    """Select entries along ``axis``; gradients scatter back additively."""
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (gx,)

    return _record(np.take(x.data, idx, axis=ax), (x,), grad_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding index out of range for table of {table.shape[0]} rows")

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _record(table.data[ids], (table,), grad_fn)


# ---------------------------------------------------------------- elementwise


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Pointwise ``add``/``sub``/``mul``/``max`` over equal shapes.

    For ``max`` the gradient goes to the larger operand; on ties ``a`` wins.
    """
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind} needs equal shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if kind == "add":
        return _record(ad + bd, (a, b), lambda g: (g, g))
    if kind == "sub":
        return _record(ad - bd, (a, b), lambda g: (g, -g))
    if kind == "mul":
        return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    if kind == "max":
        take_a = ad >= bd
        return _record(np.where(take_a, ad, bd), (a, b), lambda g: (g * take_a, g * ~take_a))
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "max")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """``x + bias`` with a row-vector bias over the last axis."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias of shape {bias.shape} does not match last axis of {x.shape}")

    def grad_fn(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _record(x.data + bias.data, (x, bias), grad_fn)


def add_const(x: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable array (positional codes, attention masks)."""
    out = x.data + const
    if out.shape != x.shape:
        raise ShapeError(f"constant of shape {np.shape(const)} would change shape {x.shape}")
    return _record(out, (x,), lambda g: (g,))


def scale(x: Tensor, c: float) -> Tensor:
    return _record(x.data * c, (x,), lambda g: (g * c,))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth everywhere, which keeps gradient checks clean."""
    xd = x.data
    k = np.sqrt(2.0 / np.pi)
    inner = k * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def grad_fn(g):
        dinner = k * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _record(out, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _record(np.array([x.data.sum()]), (x,), lambda g: (np.full(shape, g[0]),))


def mean(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis (the axis is dropped)."""
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"axis {axis} out of range for rank {x.ndim}")
    ax = axis % x.ndim
    count = x.shape[ax]
    shape = x.shape

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, ax) / count, shape),)

    return _record(x.data.mean(axis=ax), (x,), grad_fn)


# ---------------------------------------------------------------- normalisation


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit population variance, then affine."""
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {width}"
        )
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        flat_g = g.reshape(-1, width)
        ggamma = (flat_g * xhat.reshape(-1, width)).sum(axis=0)
        gbeta = flat_g.sum(axis=0)
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), grad_fn)


# ---------------------------------------------------------------- losses


def cross_entropy(p: Tensor, y, weights: np.ndarray | None = None) -> Tensor:
    """``-sum_r w_r sum_j y_rj log p_rj`` with ``w_r = 1/rows`` by default.

    Rows are all leading axes. Probabilities below ``CE_FLOOR`` are clamped
    (and pass no gradient) so a zero at a true class never produces ``inf``.
    """
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if yd.shape != p.shape:
        raise ShapeError(f"cross_entropy shapes differ: p {p.shape}, y {yd.shape}")
    # rows are one-hot, or all zero for padding positions
    if not (np.isin(yd, (0.0, 1.0)).all() and (yd.sum(axis=-1) <= 1).all()):
        raise ContractError("cross_entropy labels must be one-hot rows")
    rows = p.size // p.shape[-1]
    w = np.full(p.shape[:-1], 1.0 / rows) if weights is None else np.asarray(weights, float)
    if w.shape != p.shape[:-1]:
        raise ShapeError(f"row weights {w.shape} do not match rows {p.shape[:-1]}")
    pd = p.data
    clamped = np.maximum(pd, CE_FLOOR)
    wy = w[..., None] * yd
    loss = -(wy * np.log(clamped)).sum()

    def grad_fn(g):
        return (g[0] * np.where(pd > CE_FLOOR, -wy / clamped, 0.0),)

    return _record(np.array([loss]), (p,), grad_fn)
