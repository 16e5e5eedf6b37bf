"""Aggregation: cross-modal attention/transformer, entanglement, additive baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import ModalSequence
from .errors import ShapeError
from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention
from .tensor import Tensor


class CrossModalLayer(Module):
    def __init__(self, width: int, heads: int, ffn: int, rng: np.random.Generator):
        self.ln_target = LayerNorm(width)
        self.ln_source = LayerNorm(width)
        # heads are concatenated without an output projection
        self.attn = MultiHeadAttention(width, heads, rng, output=False)
        self.ln_ffn = LayerNorm(width)
        self.ffn = FeedForward(width, ffn, rng)


class CrossModalBlock(Module):
    """``layers`` stacked cross-modal attention + feed-forward layers."""

    def __init__(self, width: int, heads: int, ffn: int, layers: int, rng: np.random.Generator):
        self.width = width
        self.heads = heads
        self.layers = [CrossModalLayer(width, heads, ffn, rng) for _ in range(layers)]

    @property
    def depth(self) -> int:
        return len(self.layers)


def _values(seq) -> Tensor:
    return seq.values if isinstance(seq, ModalSequence) else seq


def cross_modal_attention(target, source, block: CrossModalBlock, layer: int, return_weights=False):
    """Queries from ``target``, keys/values from ``source``; output has the target's length."""
    tgt, src = _values(target), _values(source)
    if tgt.shape[-1] != block.width or src.shape[-1] != block.width:
        raise ShapeError(f"cross-modal widths {tgt.shape[-1]}/{src.shape[-1]} != {block.width}")
    return block.layers[layer].attn(tgt, src, return_weights=return_weights)


def cross_modal_transformer(
    target_init: ModalSequence, source: ModalSequence, block: CrossModalBlock, depth: int | None = None
) -> ModalSequence:
    """Reinforce ``target_init`` with the layer-0 ``source`` through ``depth`` layers.

    Each layer is pre-LN with residuals:
    ``h = s + CA(LN(s), LN(source))`` then ``s = h + FFN(LN(h))``.
    """
    depth = block.depth if depth is None else depth
    s = target_init.values
    src = source.values
    for i in range(depth):
        layer = block.layers[i]
        h = s + layer.attn(layer.ln_target(s), layer.ln_source(src))
        s = h + layer.ffn(layer.ln_ffn(h))
    return ModalSequence(s, target_init.modality)


@dataclass
class EnrichedRepresentation:
    values: Tensor  # (B, n, e)
    provenance: tuple[str, ...]


def entangle(s_it, s_ig, ln: LayerNorm) -> EnrichedRepresentation:
    """``LN(S_{i+t} + S_{i+g})``."""
    a, b = _values(s_it), _values(s_ig)
    if a.shape != b.shape:
        raise ShapeError(f"entangle shapes differ: {a.shape} vs {b.shape}")
    return EnrichedRepresentation(ln(a + b), ("image+text", "image+graph"))


def add_layernorm_fusion(s_v, s_t, s_g, ln: LayerNorm) -> EnrichedRepresentation:
    """Baseline fusion ``LN(s_v + s_t + s_g)``; ``s_t``/``s_g`` may be ``None``."""
    streams = [("image", s_v), ("text", s_t), ("graph", s_g)]
    present = [(name, _values(s)) for name, s in streams if s is not None]
    total = present[0][1]
    for name, value in present[1:]:
        if value.shape != total.shape:
            raise ShapeError(f"add fusion shapes differ: {total.shape} vs {value.shape} ({name})")
        total = total + value
    return EnrichedRepresentation(ln(total), tuple(name for name, _ in present))
