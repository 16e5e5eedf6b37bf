"""Transformer building blocks on top of :mod:`eir.tensor`.

Every block takes batch-first inputs ``(B, T, e)``. Parameters are plain
:class:`Tensor` attributes; :meth:`Module.named_parameters` walks them in
attribute-definition order, which fixes checkpoint layout.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

MASK_VALUE = -1e9
LN_EPS = 1e-5


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = init_uniform(rng, (fan_in, fan_out), fan_in)
        self.bias = init_uniform(rng, (fan_out,), fan_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return T.add_bias(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = LN_EPS):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator):
        self.inner = Linear(width, hidden, rng)
        self.outer = Linear(hidden, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.gelu(self.inner(x)))


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def key_padding_mask(lengths: np.ndarray, total: int) -> np.ndarray:
    """Additive mask ``(B, 1, 1, total)``: 0 for real keys, MASK_VALUE for padding."""
    valid = np.arange(total)[None, :] < np.asarray(lengths)[:, None]
    return np.where(valid, 0.0, MASK_VALUE)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_VALUE), k=1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention split over ``heads``.

    Query, key and value projections are bias-free. ``output=False`` drops the
    output projection so the concatenated heads are returned directly.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator, output: bool = True):
        if width % heads:
            raise ShapeError(f"width {width} is not divisible by {heads} heads")
        self.heads = heads
        self.d_k = width // heads
        self.w_q = init_uniform(rng, (width, width), width)
        self.w_k = init_uniform(rng, (width, width), width)
        self.w_v = init_uniform(rng, (width, width), width)
        self.out = Linear(width, width, rng) if output else None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.d_k).transpose(0, 2, 1, 3)

    def __call__(
        self,
        query: Tensor,
        source: Tensor,
        mask: np.ndarray | None = None,
        return_weights: bool = False,
    ):
        if query.shape[-1] != source.shape[-1]:
            raise ShapeError(f"attention widths differ: {query.shape} vs {source.shape}")
        b, t_q, width = query.shape
        q = self._split(query @ self.w_q)
        k = self._split(source @ self.w_k)
        v = self._split(source @ self.w_v)
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(self.d_k))
        if mask is not None:
            scores = T.add_const(scores, np.broadcast_to(mask, scores.shape))
        weights = T.softmax(scores, axis=-1)
        heads = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t_q, width)
        out = self.out(heads) if self.out is not None else heads
        return (out, weights) if return_weights else out


class EncoderLayer(Module):
    """Post-LN transformer encoder layer (self-attention + FFN)."""

    def __init__(self, width: int, heads: int, hidden: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(width, heads, rng)
        self.ln_attn = LayerNorm(width)
        self.ffn = FeedForward(width, hidden, rng)
        self.ln_ffn = LayerNorm(width)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = self.ln_attn(x + self.attn(x, x, mask))
        return self.ln_ffn(x + self.ffn(x))


class DecoderLayer(Module):
    """Post-LN decoder layer: causal self-attention, cross-attention, FFN."""

    def __init__(self, width: int, heads: int, hidden: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(width, heads, rng)
        self.ln_self = LayerNorm(width)
        self.cross_attn = MultiHeadAttention(width, heads, rng)
        self.ln_cross = LayerNorm(width)
        self.ffn = FeedForward(width, hidden, rng)
        self.ln_ffn = LayerNorm(width)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray) -> Tensor:
        x = self.ln_self(x + self.self_attn(x, x, self_mask))
        x = self.ln_cross(x + self.cross_attn(x, memory))
        return self.ln_ffn(x + self.ffn(x))


class TopicAttention(Module):
    """Pool a sequence into ``n`` rows: ``softmax(Q H^T) H`` with learned ``Q``."""

    def __init__(self, topics: int, width: int, rng: np.random.Generator):
        self.queries = init_uniform(rng, (topics, width), width)

    def __call__(self, h: Tensor, key_mask: np.ndarray | None = None, return_weights=False):
        scores = self.queries @ h.transpose(0, 2, 1)
        if key_mask is not None:
            scores = T.add_const(scores, np.broadcast_to(key_mask, scores.shape))
        weights = T.softmax(scores, axis=-1)
        out = weights @ h
        return (out, weights) if return_weights else out
