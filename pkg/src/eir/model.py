"""End-to-end model wiring per ablation arm, batching, and the training step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .decoder import (
    Classifier,
    Generator,
    Interpreter,
    LossBundle,
    classify,
    compose_disease_embedding,
    generate,
)
from .encoders import GraphEncoder, ImageEncoder, TextEncoder
from .errors import ContractError, NumericError
from .fusion import CrossModalBlock, add_layernorm_fusion, cross_modal_transformer, entangle
from .nn import LayerNorm, Module
from .optim import Adam
from .synthdata import BOS, EOS, PAD, Schema, SyntheticSample, WorldConfig
from .tensor import Tape, Tensor


@dataclass
class Batch:
    ids: list[int]
    views: np.ndarray  # (B, m, H, W)
    history: np.ndarray  # (B, Lh) token ids
    history_len: np.ndarray
    target: np.ndarray  # (B, Lr) report ids then EOS, padded
    target_len: np.ndarray
    y: np.ndarray  # (B, n, k)
    adjacency: np.ndarray  # (B, N, N) bool

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad, self.bos, self.eos = self.index[PAD], self.index[BOS], self.index[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: list[str]) -> list[int]:
        unk = self.index["<unk>"]
        return [self.index.get(w, unk) for w in words]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def _pad(rows: list[list[int]], value: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows])
    out = np.full((len(rows), max(lengths.max(), 1)), value, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out, lengths


def make_batch(samples: list[SyntheticSample], adjacency: list[np.ndarray], vocab: Vocabulary) -> Batch:
    history, history_len = _pad([vocab.encode(s.history) for s in samples], vocab.pad)
    target, target_len = _pad([vocab.encode(s.report) + [vocab.eos] for s in samples], vocab.pad)
    return Batch(
        ids=[s.id for s in samples],
        views=np.stack([s.views for s in samples]),
        history=history,
        history_len=history_len,
        target=target,
        target_len=target_len,
        y=np.stack([s.y for s in samples]).astype(np.float64),
        adjacency=np.stack(adjacency),
    )


@dataclass
class Forward:
    s_e: Tensor
    p: Tensor
    s_d: Tensor
    l_c: Tensor
    p_word: Tensor | None = None
    l_g: Tensor | None = None
    l_i: Tensor | None = None
    l_total: Tensor | None = None


class EIRModel(Module):
    """Encoders, fusion and decoding blocks for one ablation arm.

    Modules the arm does not use are never constructed, so they contribute
    no parameters.
    """

    def __init__(self, cfg: ModelConfig, world: WorldConfig, vocab: Vocabulary, seed: int = 0):
        rng = np.random.default_rng(seed)
        schema: Schema = world.topic_schema
        e, h, f, n = cfg.width, cfg.heads, cfg.ffn, schema.n_topics
        self.image = ImageEncoder(world.image_size, cfg.patch, e, h, f, cfg.image_layers, n, rng)
        if cfg.uses_text:
            self.text = TextEncoder(len(vocab), e, h, f, cfg.text_layers, n, rng)
        if cfg.uses_graph:
            self.graph = GraphEncoder(schema.n_nodes, e, h, f, rng)
        if cfg.uses_ct:
            self.ct_text = CrossModalBlock(e, h, f, cfg.ct_layers, rng)
            self.ct_graph = CrossModalBlock(e, h, f, cfg.ct_layers, rng)
        self.fuse_ln = LayerNorm(e)
        self.classifier = Classifier(n, cfg.states, e, rng)
        self.generator = Generator(len(vocab), e, h, f, cfg.decoder_layers, rng)
        if cfg.uses_interpreter:
            self.interpreter = Interpreter(self.text, self.fuse_ln, self.classifier.states)
        self.cfg = cfg
        self.world = world
        self.schema = schema
        self.vocab = vocab

    # ------------------------------------------------------------ forward

    def enriched(self, batch: Batch) -> Tensor:
        s_img = self.image(batch.views)
        s_txt = self.text(batch.history, batch.history_len) if self.cfg.uses_text else None
        s_graph = self.graph(batch.adjacency) if self.cfg.uses_graph else None
        if self.cfg.uses_ct:
            s_it = cross_modal_transformer(s_img, s_txt, self.ct_text)
            s_ig = cross_modal_transformer(s_img, s_graph, self.ct_graph)
            return entangle(s_it, s_ig, self.fuse_ln).values
        s_g = T.take(s_graph.values, self.schema.disease_nodes, axis=1) if s_graph else None
        return add_layernorm_fusion(s_img, s_txt, s_g, self.fuse_ln).values

    def forward(self, batch: Batch, mode: str = "train") -> Forward:
        s_e = self.enriched(batch)
        p, l_c = classify(s_e, self.classifier.states, batch.y)
        s_d = compose_disease_embedding(
            p, self.classifier.states, self.classifier.topics, s_e,
            "train" if mode == "train" else "infer",
        ).values
        out = Forward(s_e=s_e, p=p, s_d=s_d, l_c=l_c)
        out.p_word, _, out.l_g = generate(
            s_d, self.generator, batch.target, batch.target_len, "teacher_forced",
            self.vocab.bos, self.vocab.eos,
        )
        if self.cfg.uses_interpreter:
            _, out.l_i = self.interpreter.interpret(out.p_word, batch.target_len, batch.y)
            out.l_total = out.l_c + out.l_g + out.l_i
        else:
            out.l_total = out.l_c + out.l_g
        return out

    def losses(self, fwd: Forward) -> LossBundle:
        l_c, l_g = fwd.l_c.item(), fwd.l_g.item()
        l_i = fwd.l_i.item() if fwd.l_i is not None else 0.0
        return LossBundle(l_c, l_g, l_i, fwd.l_total.item())

    def predict(self, batch: Batch) -> tuple[np.ndarray, list[list[str]]]:
        """Arg-max state predictions (B, n) and greedy reports."""
        s_e = self.enriched(batch)
        p, _ = classify(s_e, self.classifier.states)
        s_d = compose_disease_embedding(
            p, self.classifier.states, self.classifier.topics, s_e, "infer"
        ).values
        _, tokens, _ = generate(
            s_d, self.generator, mode="greedy", bos=self.vocab.bos, eos=self.vocab.eos,
            max_len=self.cfg.max_report_len,
        )
        return p.data.argmax(axis=-1), [self.vocab.decode(t) for t in tokens]

    # ------------------------------------------------------------ interpreter

    def prepare_interpreter(self, samples: list[SyntheticSample], seed: int = 0) -> list[float]:
        """Fit the interpreter snapshot on ground-truth reports, then freeze it."""
        if not self.cfg.uses_interpreter:
            return []
        losses = []
        if self.cfg.interp_warmup and samples:
            tokens, lengths = _pad(
                [self.vocab.encode(s.report) + [self.vocab.eos] for s in samples], self.vocab.pad
            )
            ys = np.stack([s.y for s in samples]).astype(np.float64)
            rng = np.random.default_rng([seed, 7919])
            losses = self.interpreter.warmup(tokens, lengths, ys, self.cfg.interp_warmup, rng)
        self.interpreter.freeze()
        return losses

    # ------------------------------------------------------------ state

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.named_parameters()]

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            arr = np.array(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            writeable = p.data.flags.writeable
            p.data = arr
            p.data.setflags(write=writeable)
        if self.cfg.uses_interpreter:
            self.interpreter.freeze()


def training_step(batch: Batch, model: EIRModel, optimizer: Adam) -> LossBundle:
    """Forward, backward on ``L_total``, one Adam step. Non-finite losses abort the step."""
    optimizer.zero_grad()
    with Tape() as tape:
        fwd = model.forward(batch, "train")
    bundle = model.losses(fwd)
    if not np.isfinite(bundle.L_total):
        raise NumericError(f"non-finite loss on batch {batch.ids[:4]}...: {bundle}")
    T.backward(fwd.l_total, tape)
    for p in optimizer.params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in {p.name or 'a parameter'}")
    optimizer.step()
    return bundle
