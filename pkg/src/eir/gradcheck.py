"""Central finite-difference gradient checks, grouped by scope.

Each check compares the tape gradient of a scalar loss against
``(f(x + h) - f(x - h)) / 2h`` on a sample of coordinates per parameter
group and reports ``||analytic - numeric|| / max(||analytic||, ||numeric||, floor)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .decoder import Classifier, Generator, Interpreter, classify, compose_disease_embedding, generate
from .encoders import GraphEncoder, ImageEncoder, ModalSequence, TextEncoder
from .fusion import CrossModalBlock, cross_modal_transformer, entangle
from .nn import LayerNorm
from .synthdata import WorldConfig, generate_corpus
from .tensor import Tape, Tensor

SCOPES = ("ops", "encoders", "fusion", "decoder", "end2end")
STEP = 1e-5
THRESHOLD = 1e-4
NORM_FLOOR = 1e-5


@dataclass
class GroupResult:
    scope: str
    name: str
    rel_error: float
    coords: int

    def passed(self, threshold: float = THRESHOLD) -> bool:
        return self.rel_error < threshold


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = NORM_FLOOR) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    scope: str = "",
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    h: float = STEP,
) -> list[GroupResult]:
    """Compare tape gradients of ``loss_fn()`` with central differences per group."""
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    T.backward(loss, tape)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    results = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            up = loss_fn().item()
            flat[c] = orig - h
            down = loss_fn().item()
            flat[c] = orig
            numeric[j] = (up - down) / (2 * h)
        results.append(
            GroupResult(scope, name, relative_error(analytic[name].reshape(-1)[coords], numeric), len(coords))
        )
        p.grad = None
    return results


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def ops_suite(rng: np.random.Generator) -> list[GroupResult]:
    results = []

    def run(label, fn, leaves):
        results.extend(check_gradients(fn, {f"{label}:{k}": v for k, v in leaves.items()}, "ops"))

    for _ in range(2):
        r, s, t = rng.integers(1, 9, size=3)
        a, b = _leaf(rng, r, s), _leaf(rng, s, t)
        probe = rng.normal(size=(r, t))
        run("matmul", lambda: T.sum_all(T.mul(a @ b, Tensor(probe))), {"a": a, "b": b})

        rows, cols = rng.integers(1, 9, size=2)
        x = _leaf(rng, rows, cols)
        y = np.eye(cols)[rng.integers(0, cols, size=rows)]
        run("softmax_ce", lambda: T.cross_entropy(T.softmax(x, -1), y), {"x": x})
        probe_sm = rng.normal(size=(rows, cols))
        run("softmax_axis0", lambda: T.sum_all(T.mul(T.softmax(x, 0), Tensor(probe_sm))), {"x": x})

        width = int(rng.integers(2, 9))
        xl = _leaf(rng, rows, width)
        g, bt = _leaf(rng, width), _leaf(rng, width)
        probe_ln = rng.normal(size=(rows, width))
        run("layer_norm", lambda: T.sum_all(T.mul(T.layer_norm(xl, g, bt), Tensor(probe_ln))),
            {"x": xl, "gamma": g, "beta": bt})

        u, v = _leaf(rng, rows, cols), _leaf(rng, rows, cols)
        pr = rng.normal(size=(rows, cols))
        for kind in ("add", "sub", "mul", "max"):
            run(kind, lambda kind=kind: T.sum_all(T.mul(T.elementwise(u, v, kind), Tensor(pr))),
                {"a": u, "b": v})

    x3 = _leaf(rng, 2, 3, 4)
    bias = _leaf(rng, 4)
    table = _leaf(rng, 6, 4)
    ids = rng.integers(0, 6, size=(2, 3))
    probe3 = rng.normal(size=(2, 4, 3))

    def composite():
        z = T.add_bias(T.gelu(x3), bias) + T.embedding(table, ids)
        z = T.transpose(z, (0, 2, 1)).reshape(2, 4, 3)
        z = T.add(T.take(z, [0, 2, 1, 3], axis=1), T.broadcast_to(T.mean(z, 0), (2, 4, 3)))
        return T.sum_all(T.mul(z, Tensor(probe3)))

    run("composite", composite, {"x": x3, "bias": bias, "table": table})
    return results


def _small_world():
    world = WorldConfig(corpus_size=12, split=(50, 25, 25), seed=3)
    corpus = generate_corpus(world)
    return world, corpus


def encoders_suite(rng: np.random.Generator, cfg: ModelConfig | None = None) -> list[GroupResult]:
    from .model import Vocabulary, make_batch
    from .training import GraphStore

    cfg = cfg or ModelConfig()
    world, corpus = _small_world()
    samples = corpus.splits["train"][:2]
    vocab = Vocabulary(corpus.vocab)
    batch = make_batch(samples, GraphStore(corpus).adjacency(samples), vocab)
    n, e = world.topic_schema.n_topics, cfg.width
    image = ImageEncoder(world.image_size, cfg.patch, e, cfg.heads, cfg.ffn, cfg.image_layers, n, rng)
    text = TextEncoder(len(vocab), e, cfg.heads, cfg.ffn, max(cfg.text_layers, 1), n, rng)
    graph = GraphEncoder(world.topic_schema.n_nodes, e, cfg.heads, cfg.ffn, rng)
    results = []
    for label, module, fn in (
        ("image", image, lambda: image(batch.views).values),
        ("text", text, lambda: text(batch.history, batch.history_len).values),
        ("graph", graph, lambda: graph(batch.adjacency).values),
    ):
        probe = Tensor(rng.normal(size=fn().shape))
        params = {f"{label}.{k}": v for k, v in module.named_parameters()}
        results += check_gradients(lambda fn=fn, probe=probe: T.sum_all(T.mul(fn(), probe)),
                                   params, "encoders", max_coords=6, rng=rng)
    return results


def fusion_suite(rng: np.random.Generator, cfg: ModelConfig | None = None) -> list[GroupResult]:
    cfg = cfg or ModelConfig()
    e = cfg.width
    s_img = _leaf(rng, 1, 8, e)
    s_txt = _leaf(rng, 1, 8, e)
    s_graph = _leaf(rng, 1, 12, e)
    ct_t = CrossModalBlock(e, cfg.heads, cfg.ffn, cfg.ct_layers, rng)
    ct_g = CrossModalBlock(e, cfg.heads, cfg.ffn, cfg.ct_layers, rng)
    ln = LayerNorm(e)
    ln.gamma.data[:] = rng.uniform(0.5, 1.5, size=e)
    ln.beta.data[:] = rng.normal(scale=0.1, size=e)
    probe = Tensor(rng.normal(size=(1, 8, e)))

    def loss():
        a = cross_modal_transformer(ModalSequence(s_img, "image"), ModalSequence(s_txt, "text"), ct_t)
        b = cross_modal_transformer(ModalSequence(s_img, "image"), ModalSequence(s_graph, "graph"), ct_g)
        return T.sum_all(T.mul(entangle(a, b, ln).values, probe))

    params = {"S_img": s_img, "S_txt": s_txt, "S_graph": s_graph}
    params.update({f"ct_text.{k}": v for k, v in ct_t.named_parameters()})
    params.update({f"ct_graph.{k}": v for k, v in ct_g.named_parameters()})
    params.update({f"entangle_ln.{k}": v for k, v in ln.named_parameters()})
    return check_gradients(loss, params, "fusion", max_coords=6, rng=rng)


def decoder_suite(rng: np.random.Generator, cfg: ModelConfig | None = None) -> list[GroupResult]:
    from .model import Vocabulary, make_batch
    from .training import GraphStore

    cfg = cfg or ModelConfig()
    world, corpus = _small_world()
    samples = corpus.splits["train"][:2]
    vocab = Vocabulary(corpus.vocab)
    batch = make_batch(samples, GraphStore(corpus).adjacency(samples), vocab)
    n, e = world.topic_schema.n_topics, cfg.width
    s_e = _leaf(rng, 2, n, e)
    clf = Classifier(n, cfg.states, e, rng)
    gen = Generator(len(vocab), e, cfg.heads, cfg.ffn, cfg.decoder_layers, rng)
    text = TextEncoder(len(vocab), e, cfg.heads, cfg.ffn, max(cfg.text_layers, 1), n, rng)
    interp = Interpreter(text, LayerNorm(e), clf.states)
    interp.freeze()

    def loss():
        p, l_c = classify(s_e, clf.states, batch.y)
        s_d = compose_disease_embedding(p, clf.states, clf.topics, s_e, "train").values
        p_word, _, l_g = generate(s_d, gen, batch.target, batch.target_len, "teacher_forced",
                                  vocab.bos, vocab.eos)
        _, l_i = interp.interpret(p_word, batch.target_len, batch.y)
        return l_c + l_g + l_i

    params = {"S_e": s_e}
    params.update({f"classifier.{k}": v for k, v in clf.named_parameters()})
    params.update({f"generator.{k}": v for k, v in gen.named_parameters()})
    return check_gradients(loss, params, "decoder", max_coords=6, rng=rng)


def end2end_suite(rng: np.random.Generator, cfg: ModelConfig | None = None) -> list[GroupResult]:
    from .model import EIRModel, Vocabulary, make_batch
    from .training import GraphStore

    cfg = cfg or ModelConfig(interp_warmup=20)
    world, corpus = _small_world()
    samples = corpus.splits["train"][:1]
    vocab = Vocabulary(corpus.vocab)
    batch = make_batch(samples, GraphStore(corpus).adjacency(samples), vocab)
    model = EIRModel(cfg, world, vocab, seed=int(rng.integers(1 << 30)))
    model.prepare_interpreter(corpus.splits["train"])
    params = {k: v for k, v in model.named_parameters() if v.requires_grad}
    return check_gradients(lambda: model.forward(batch).l_total, params, "end2end",
                           max_coords=3, rng=rng)


SUITES = {
    "ops": ops_suite,
    "encoders": encoders_suite,
    "fusion": fusion_suite,
    "decoder": decoder_suite,
    "end2end": end2end_suite,
}


def run_scope(scope: str, seed: int = 0) -> list[GroupResult]:
    if scope not in SUITES:
        raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {', '.join(SCOPES)}")
    return SUITES[scope](np.random.default_rng(seed))
