"""Decoding: state classifier, disease-embedding composition, report generator,
frozen interpreter, and the loss bundle."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import DecoderLayer, LayerNorm, Linear, Module, causal_mask, init_uniform, sinusoidal_positions
from .optim import Adam
from .tensor import Tape, Tensor


@dataclass
class LossBundle:
    L_C: float
    L_G: float
    L_I: float
    L_total: float

    def as_row(self) -> tuple[float, float, float, float]:
        return self.L_C, self.L_G, self.L_I, self.L_total


def check_one_hot(y: np.ndarray) -> None:
    y = np.asarray(y)
    if not (np.isin(y, (0, 1)).all() and (y.sum(axis=-1) == 1).all()):
        raise ContractError("label rows must be one-hot")


class Classifier(Module):
    """State matrix ``S`` (k x e) shared by classification and state embedding,
    plus topic-name embeddings (n x e)."""

    def __init__(self, topics: int, states: int, width: int, rng: np.random.Generator):
        self.states = init_uniform(rng, (states, width), width)
        self.topics = init_uniform(rng, (topics, width), width)


def classify(s_e: Tensor, states: Tensor, y: np.ndarray | None = None):
    """``p = softmax(S_e S^T)`` per topic, and ``L_C`` when labels are given."""
    if s_e.shape[-1] != states.shape[-1]:
        raise ShapeError(f"S_e width {s_e.shape[-1]} != state width {states.shape[-1]}")
    p = T.softmax(s_e @ states.transpose(1, 0), axis=-1)
    if y is None:
        return p, None
    y = np.asarray(y, dtype=np.float64)
    check_one_hot(y)
    return p, T.cross_entropy(p, y)


@dataclass
class DiseaseEmbedding:
    values: Tensor
    states: Tensor
    topics: Tensor
    enriched: Tensor


def compose_disease_embedding(
    p: Tensor, states: Tensor, topics: Tensor, s_e: Tensor, mode: str = "train"
) -> DiseaseEmbedding:
    """``S_d = S_states + S_topics + S_e``.

    ``train`` uses the expected state embedding ``p @ S``; ``infer`` uses the
    embedding of the arg-max state.
    """
    if mode == "train":
        s_states = p @ states
    elif mode == "infer":
        s_states = T.embedding(states, p.data.argmax(axis=-1))
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    s_topics = T.broadcast_to(topics, s_e.shape)
    return DiseaseEmbedding(s_states + s_topics + s_e, s_states, s_topics, s_e)


class Generator(Module):
    """Transformer decoder over the disease embedding rows."""

    def __init__(self, vocab_size, width, heads, ffn, layers, rng):
        self.embed = init_uniform(rng, (vocab_size, width), width)
        self.layers = [DecoderLayer(width, heads, ffn, rng) for _ in range(layers)]
        self.out = Linear(width, vocab_size, rng)

    def word_distributions(self, s_d: Tensor, inputs: np.ndarray) -> Tensor:
        """Next-token distributions (B, L, v) for decoder inputs (B, L)."""
        x = T.embedding(self.embed, inputs)
        length = x.shape[1]
        x = T.add_const(x, sinusoidal_positions(length, x.shape[2])[None])
        mask = causal_mask(length)
        for layer in self.layers:
            x = layer(x, s_d, mask)
        return T.softmax(self.out(x), axis=-1)


def target_weights(lengths: np.ndarray, total: int) -> np.ndarray:
    """Row weights averaging each sample's positions, then the batch."""
    lengths = np.asarray(lengths)
    valid = np.arange(total)[None, :] < lengths[:, None]
    return valid / lengths[:, None] / len(lengths)


def generate(
    s_d: Tensor,
    generator: Generator,
    target: np.ndarray | None = None,
    lengths: np.ndarray | None = None,
    mode: str = "teacher_forced",
    bos: int = 1,
    eos: int = 2,
    max_len: int = 48,
):
    """Teacher-forced scoring or greedy decoding.

    ``target`` (B, L) holds the report tokens followed by EOS, padded past
    ``lengths``. Teacher forcing returns ``(p_word, tokens, L_G)``; greedy
    returns ``(p_word, tokens, None)`` with tokens as lists cut before EOS.
    """
    if mode == "teacher_forced":
        if target is None:
            raise ContractError("teacher_forced generation needs a target")
        target = np.asarray(target, dtype=np.int64)
        b, length = target.shape
        lengths = np.full(b, length) if lengths is None else np.asarray(lengths)
        inputs = np.concatenate([np.full((b, 1), bos), target[:, :-1]], axis=1)
        p_word = generator.word_distributions(s_d, inputs)
        vocab = p_word.shape[-1]
        y_word = np.zeros((b, length, vocab))
        np.put_along_axis(y_word, np.minimum(target, vocab - 1)[..., None], 1.0, axis=-1)
        weights = target_weights(lengths, length)
        y_word *= weights[..., None] > 0
        loss = T.cross_entropy(p_word, y_word, weights)
        return p_word, target, loss
    if mode == "greedy":
        b = s_d.shape[0]
        seq = np.full((b, 1), bos, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        p_word = None
        for _ in range(max_len):
            p_word = generator.word_distributions(s_d, seq)
            nxt = p_word.data[:, -1].argmax(axis=-1)
            nxt = np.where(done, eos, nxt)
            seq = np.concatenate([seq, nxt[:, None]], axis=1)
            done |= nxt == eos
            if done.all():
                break
        tokens = []
        for row in seq[:, 1:]:
            ids = row.tolist()
            tokens.append(ids[: ids.index(eos)] if eos in ids else ids)
        return p_word, tokens, None
    raise ValueError(f"unknown generation mode {mode!r}")


class Interpreter(Module):
    """Frozen classifier over generated text.

    Soft word embeddings ``p_word @ E`` go through a copy of the text pathway
    (transformer + topic attention), the fusion LayerNorm and the state matrix.
    Built as a snapshot, optionally fitted on ground-truth reports during a
    warm-up, then frozen: its arrays become read-only and never require grad.
    """

    def __init__(self, text_encoder, ln: LayerNorm, states: Tensor):
        self.text = copy.deepcopy(text_encoder)
        self.ln = copy.deepcopy(ln)
        self.states = Tensor(states.data.copy(), requires_grad=True)
        self.frozen = False

    def _classify(self, embedded: Tensor, lengths: np.ndarray, y: np.ndarray):
        pooled = self.text.encode_embedded(embedded, lengths)
        return classify(self.ln(pooled), self.states, y)

    def interpret(self, p_word: Tensor, lengths: np.ndarray, y: np.ndarray):
        """``(p_int, L_I)`` from per-position word distributions."""
        return self._classify(p_word @ self.text.embed, lengths, y)

    def interpret_tokens(self, tokens: np.ndarray, lengths: np.ndarray, y: np.ndarray):
        """Same classifier on the hard embedding of a token batch."""
        return self._classify(T.embedding(self.text.embed, tokens), lengths, y)

    def warmup(self, tokens, lengths, ys, steps: int, rng: np.random.Generator,
               batch_size: int = 16, lr: float = 3e-3) -> list[float]:
        if self.frozen:
            raise ContractError("interpreter is frozen")
        params = self.trainable_parameters()
        opt = Adam(params, lr=lr)
        losses = []
        for _ in range(steps):
            idx = rng.choice(len(tokens), size=min(batch_size, len(tokens)), replace=False)
            opt.zero_grad()
            with Tape() as tape:
                _, loss = self.interpret_tokens(tokens[idx], lengths[idx], ys[idx])
            T.backward(loss, tape)
            opt.step()
            losses.append(loss.item())
        return losses

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
            p.data.setflags(write=False)
        self.frozen = True
