"""Modality encoders: multi-view images, clinical history, knowledge graph.

All encoders are batch-first and emit :class:`ModalSequence` values of
width ``e``. Images and text come out as ``n`` topic rows; the graph keeps
one row per node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .graph import check_adjacency
from .nn import (
    MASK_VALUE,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
    TopicAttention,
    init_uniform,
    key_padding_mask,
    sinusoidal_positions,
)
from .tensor import Tensor

MODALITIES = ("image", "text", "graph")


@dataclass
class ModalSequence:
    values: Tensor  # (B, T, e)
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.values.ndim != 3 or self.values.shape[1] < 1:
            raise ContractError(f"modal sequence must be (B, T>=1, e), got {self.values.shape}")

    @property
    def length(self) -> int:
        return self.values.shape[1]


def to_patches(views: np.ndarray, patch: int) -> np.ndarray:
    """(B, m, H, W) -> (B, m, P, patch*patch), patches in row-major grid order."""
    b, m, h, w = views.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")
    grid = views.reshape(b, m, h // patch, patch, w // patch, patch)
    return grid.transpose(0, 1, 2, 4, 3, 5).reshape(b, m, (h // patch) * (w // patch), patch * patch)


def view_max_pool(features: Tensor) -> Tensor:
    """Element-wise max over the view axis of (B, m, P, e)."""
    b, m, p, e = features.shape
    pooled = T.take(features, [0], axis=1)
    for j in range(1, m):
        pooled = T.maximum(pooled, T.take(features, [j], axis=1))
    return pooled.reshape(b, p, e)


class ImageEncoder(Module):
    """Patch embedding + transformer per view, view max-pool, topic attention."""

    def __init__(self, image_size, patch, width, heads, ffn, layers, topics, rng):
        if image_size % patch:
            raise ConfigError(f"image size {image_size} is not divisible by patch {patch}")
        self.patch = patch
        n_patches = (image_size // patch) ** 2
        self.embed_w = init_uniform(rng, (patch * patch, width), patch * patch)
        self.embed_b = init_uniform(rng, (width,), patch * patch)
        self.positions = init_uniform(rng, (n_patches, width), width)
        self.layers = [EncoderLayer(width, heads, ffn, rng) for _ in range(layers)]
        self.topics = TopicAttention(topics, width, rng)

    def patch_features(self, views: np.ndarray) -> Tensor:
        """Per-view patch features, (B, m, P, e)."""
        patches = to_patches(np.asarray(views, dtype=np.float64), self.patch)
        b, m, p, d = patches.shape
        x = T.add_bias(Tensor(patches.reshape(b * m, p, d)) @ self.embed_w, self.embed_b)
        x = x + T.broadcast_to(self.positions, x.shape)
        for layer in self.layers:
            x = layer(x)
        return x.reshape(b, m, p, x.shape[-1])

    def __call__(self, views: np.ndarray) -> ModalSequence:
        pooled = view_max_pool(self.patch_features(views))
        return ModalSequence(self.topics(pooled), "image")


class TextEncoder(Module):
    """Token embedding + sinusoidal positions + transformer, then topic attention."""

    def __init__(self, vocab_size, width, heads, ffn, layers, topics, rng):
        self.embed = init_uniform(rng, (vocab_size, width), width)
        self.layers = [EncoderLayer(width, heads, ffn, rng) for _ in range(layers)]
        self.topics = TopicAttention(topics, width, rng)

    def hidden_states(self, x: Tensor, lengths: np.ndarray) -> Tensor:
        x = T.add_const(x, sinusoidal_positions(x.shape[1], x.shape[2])[None])
        mask = key_padding_mask(lengths, x.shape[1])
        for layer in self.layers:
            x = layer(x, mask)
        return x

    def encode_embedded(self, x: Tensor, lengths: np.ndarray, return_weights=False):
        """Encode already-embedded tokens (B, l, e); shared with the interpreter."""
        h = self.hidden_states(x, lengths)
        mask = key_padding_mask(lengths, h.shape[1])[:, 0]
        return self.topics(h, mask, return_weights=return_weights)

    def __call__(self, tokens: np.ndarray, lengths: np.ndarray | None = None) -> ModalSequence:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2 or tokens.shape[1] == 0:
            raise ContractError("encode_text needs a non-empty (B, l) token batch")
        lengths = np.full(len(tokens), tokens.shape[1]) if lengths is None else np.asarray(lengths)
        if (lengths < 1).any():
            raise ContractError("encode_text: empty token sequence")
        return ModalSequence(self.encode_embedded(T.embedding(self.embed, tokens), lengths), "text")


def adjacency_mask(adjacency: np.ndarray) -> np.ndarray:
    """(B, N, N) bool -> additive (B, 1, N, N) attention mask."""
    return np.where(adjacency, 0.0, MASK_VALUE)[:, None]


class GraphEncoder(Module):
    """Masked graph self-attention with residual, then FFN + residual + LN."""

    def __init__(self, n_nodes, width, heads, ffn, rng):
        self.nodes = init_uniform(rng, (n_nodes, width), width)
        self.gsa = MultiHeadAttention(width, heads, rng)
        self.ffn = FeedForward(width, ffn, rng)
        self.ln = LayerNorm(width)

    def __call__(self, adjacency: np.ndarray, return_weights=False):
        adjacency = np.asarray(adjacency, dtype=bool)
        if adjacency.ndim == 2:
            adjacency = adjacency[None]
        for a in adjacency:
            check_adjacency(a)
        b, n, _ = adjacency.shape
        if n != self.nodes.shape[0]:
            raise ContractError(f"graph has {n} nodes, encoder expects {self.nodes.shape[0]}")
        f = T.broadcast_to(self.nodes, (b,) + self.nodes.shape)
        attended, weights = self.gsa(f, f, adjacency_mask(adjacency), return_weights=True)
        e_gsa = attended + f
        out = ModalSequence(self.ln(self.ffn(e_gsa) + e_gsa), "graph")
        return (out, weights) if return_weights else out
