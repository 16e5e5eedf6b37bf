"""Training loop, evaluation and the ablation runner."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .config import RunConfig, parse_config
from .errors import ContractError, NumericError
from .graph import KnowledgeGraph, build_graph, update_graph
from .metrics import ScoreReport, clinical_efficacy, corpus_bleu, score_reports
from .model import Batch, EIRModel, Vocabulary, make_batch, training_step
from .optim import Adam
from .retrieval import TfidfIndex
from .synthdata import Corpus, SyntheticSample, one_hot

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "L_C", "L_G", "L_I", "L_total", "val_BL-4")


class GraphStore:
    """Per-sample knowledge graphs from top-eta retrieval over the training reports."""

    def __init__(self, corpus: Corpus, eta: int | None = None):
        self.corpus = corpus
        self.eta = corpus.config.eta if eta is None else eta
        train = corpus.splits["train"]
        self.index = TfidfIndex([(s.id, s.report) for s in train])
        self.reports = {s.id: s.report for s in train}
        self.stats: Counter = Counter()
        self.graphs: dict[int, KnowledgeGraph] = {}
        self._retrieved: dict[int, list[list[str]]] = {}
        self._adjacency: dict[int, np.ndarray] = {}

    def retrieve(self, sample: SyntheticSample) -> list[list[str]]:
        hits = self.index.top(sample.report, self.eta, exclude_id=sample.id)
        return [self.reports[doc_id] for doc_id, _ in hits]

    def retrieved(self, sample: SyntheticSample) -> list[list[str]]:
        # the index is immutable, so one retrieval per sample suffices
        hits = self._retrieved.get(sample.id)
        if hits is None:
            hits = self._retrieved[sample.id] = self.retrieve(sample)
        return hits

    def graph(self, sample: SyntheticSample) -> KnowledgeGraph:
        g = self.graphs.get(sample.id)
        if g is None:
            g = self.graphs[sample.id] = build_graph(
                self.retrieved(sample), self.corpus.schema, self.stats
            )
        return g

    def refresh(self, sample: SyntheticSample) -> None:
        old = self.graph(sample)
        new = update_graph(old, self.retrieved(sample))
        if new != old:
            self.graphs[sample.id] = new
            self._adjacency.pop(sample.id, None)

    def adjacency(self, samples: list[SyntheticSample]) -> list[np.ndarray]:
        out = []
        for s in samples:
            a = self._adjacency.get(s.id)
            if a is None:
                a = self._adjacency[s.id] = self.graph(s).adjacency
            out.append(a)
        return out


def batches(samples: list[SyntheticSample], size: int, graphs: GraphStore, vocab: Vocabulary):
    for start in range(0, len(samples), size):
        chunk = samples[start : start + size]
        yield chunk, make_batch(chunk, graphs.adjacency(chunk), vocab)


def predict_split(model: EIRModel, samples, graphs: GraphStore, batch_size: int = 32):
    states, reports = [], []
    for _, batch in batches(samples, batch_size, graphs, model.vocab):
        s, r = model.predict(batch)
        states.extend(s)
        reports.extend(r)
    return states, reports


def evaluate(model: EIRModel, samples: list[SyntheticSample], graphs: GraphStore):
    """Greedy-decode ``samples`` and score them. Returns ``(ScoreReport, classifier PRF)``."""
    states, generated = predict_split(model, samples, graphs)
    report = score_reports(
        generated, [s.report for s in samples], [s.y for s in samples], model.schema,
        ids=[s.id for s in samples],
    )
    k = model.cfg.states
    classifier_prf = clinical_efficacy([one_hot(s, k) for s in states], [s.y for s in samples])
    return report, classifier_prf


@dataclass
class TrainResult:
    model: EIRModel
    curves: list[tuple] = field(default_factory=list)
    warmup_losses: list[float] = field(default_factory=list)
    aborted: str | None = None


def _limit(samples, n):
    return samples[:n] if n else samples


def train(
    cfg: RunConfig,
    corpus: Corpus,
    out_dir: str | Path | None = None,
    on_log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train one arm. Writes ``model.ckpt``/``model.meta``/``train.log``/``curves.tsv``
    into ``out_dir`` when given."""
    run = cfg.run
    vocab = Vocabulary(corpus.vocab)
    graphs = GraphStore(corpus)
    train_set = _limit(corpus.splits["train"], run.train_limit)
    val_set = _limit(corpus.splits["val"], run.eval_limit)
    if not train_set:
        raise ContractError("training split is empty")

    model = EIRModel(cfg.model, corpus.config, vocab, seed=run.seed)
    result = TrainResult(model)
    result.warmup_losses = model.prepare_interpreter(train_set, seed=run.seed)
    opt = Adam(model.trainable_parameters(), cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps)

    out = Path(out_dir) if out_dir is not None else None
    log_lines: list[str] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def emit(line: str) -> None:
        log_lines.append(line)
        if on_log is not None:
            on_log(line)

    def save_checkpoint() -> None:
        if out is not None:
            write_model(out, model, cfg, corpus)

    rng = np.random.default_rng([run.seed, 1])
    batch_size = min(run.batch_size, len(train_set))
    order: list[int] = []
    epoch = 0
    save_checkpoint()
    for step in range(1, run.steps + 1):
        if len(order) < batch_size:
            # new epoch: refresh each sample's graph with its current retrieval
            for s in train_set:
                graphs.refresh(s)
            order = list(rng.permutation(len(train_set)))
            epoch += 1
        idx, order = order[:batch_size], order[batch_size:]
        chunk = [train_set[i] for i in idx]
        batch = make_batch(chunk, graphs.adjacency(chunk), vocab)
        try:
            losses = training_step(batch, model, opt)
        except NumericError as exc:
            result.aborted = f"step {step}: {exc}"
            emit(f"abort step={step} reason={exc}")
            break
        val_bleu = None
        if run.eval_every and (step % run.eval_every == 0 or step == run.steps) and val_set:
            _, generated = predict_split(model, val_set, graphs)
            val_bleu = corpus_bleu(generated, [s.report for s in val_set], 4)
            save_checkpoint()
        result.curves.append((step, *losses.as_row(), val_bleu))
        if step % run.log_every == 0 or step == 1 or val_bleu is not None:
            emit(
                f"step={step} epoch={epoch} L_C={losses.L_C:.6f} L_G={losses.L_G:.6f} "
                f"L_I={losses.L_I:.6f} L_total={losses.L_total:.6f}"
                + (f" val_BL-4={val_bleu:.6f}" if val_bleu is not None else "")
            )
    if result.aborted is None:
        save_checkpoint()
    if out is not None:
        (out / "train.log").write_text("".join(line + "\n" for line in log_lines))
        (out / "curves.tsv").write_text(curves_tsv(result.curves))
    return result


def curves_tsv(curves) -> str:
    rows = ["\t".join(CURVE_COLUMNS)]
    for step, *vals in curves:
        rows.append("\t".join([str(step)] + ["" if v is None else repr(float(v)) for v in vals]))
    return "\n".join(rows) + "\n"


def read_curves(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    out = []
    for line in lines[1:]:
        cells = line.split("\t")
        out.append({h: (float(c) if c else None) for h, c in zip(header, cells)})
    return out


# ---------------------------------------------------------------- persistence


def write_model(out: Path, model: EIRModel, cfg: RunConfig, corpus: Corpus) -> None:
    checkpoint.save(out / "model.ckpt", model.state_items())
    meta = cfg.to_text() + f"vocab_hash={corpus.vocab_hash}\n"
    (out / "model.meta").write_text(meta)


def read_model(ckpt_path: str | Path, corpus: Corpus) -> tuple[EIRModel, RunConfig]:
    ckpt_path = Path(ckpt_path)
    meta_path = ckpt_path.with_suffix(".meta")
    meta = meta_path.read_text().splitlines()
    saved_hash = next(l.split("=", 1)[1] for l in meta if l.startswith("vocab_hash="))
    if saved_hash != corpus.vocab_hash:
        raise ContractError(
            f"vocabulary mismatch: checkpoint {saved_hash} vs dataset {corpus.vocab_hash}"
        )
    cfg = parse_config("\n".join(l for l in meta if not l.startswith("vocab_hash=")))
    model = EIRModel(cfg.model, corpus.config, Vocabulary(corpus.vocab), seed=cfg.run.seed)
    model.load_state(checkpoint.load(ckpt_path))
    return model, cfg


# ---------------------------------------------------------------- ablation

ABLATION_METRICS = ("BL-1", "BL-2", "BL-3", "BL-4", "RG-L", "CE-F1")


@dataclass
class AblationRow:
    arm: str
    seeds: tuple[int, ...]
    scores: list[dict[str, float]]

    def mean(self, key: str) -> float:
        return float(np.mean([s[key] for s in self.scores]))

    def spread(self, key: str) -> float:
        return float(np.std([s[key] for s in self.scores]))


def run_ablation(cfg: RunConfig, corpus: Corpus, out_dir: str | Path | None = None,
                 on_log: Callable[[str], None] | None = None) -> list[AblationRow]:
    if not cfg.run.arms:
        raise ContractError("ablation needs at least one arm")
    test_set = _limit(corpus.splits["test"], cfg.run.eval_limit)
    graphs = GraphStore(corpus)
    rows = []
    for arm in cfg.run.arms:
        scores = []
        for seed in cfg.run.seeds:
            run_cfg = cfg.replace("model", arm=arm).replace("run", seed=seed)
            sub = Path(out_dir) / f"{arm}_seed{seed}" if out_dir is not None else None
            result = train(run_cfg, corpus, sub)
            report, _ = evaluate(result.model, test_set, graphs)
            scores.append(report.corpus)
            if on_log is not None:
                on_log(f"arm={arm} seed={seed} " + " ".join(
                    f"{k}={report.corpus[k]:.4f}" for k in ABLATION_METRICS))
        rows.append(AblationRow(arm, tuple(cfg.run.seeds), scores))
    return rows


def ablation_tsv(rows: list[AblationRow]) -> str:
    cols = ["arm", "seeds"]
    for key in ABLATION_METRICS:
        cols += [f"{key}_mean", f"{key}_spread", f"{key}_per_seed"]
    lines = ["\t".join(cols)]
    for row in rows:
        cells = [row.arm, ",".join(map(str, row.seeds))]
        for key in ABLATION_METRICS:
            cells += [
                f"{row.mean(key):.6f}",
                f"{row.spread(key):.6f}",
                ",".join(f"{s[key]:.6f}" for s in row.scores),
            ]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
