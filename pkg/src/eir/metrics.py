"""Report-quality metrics: BLEU-1..4, ROUGE-L, clinical efficacy, rule labeler."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .synthdata import (
    HEDGE,
    LOCATES,
    NEGATION,
    NEGATIVE,
    POSITIVE,
    STATES,
    UNCERTAIN,
    UNMENTIONED,
    Schema,
)

BLEU_FLOOR = 1e-9
ROUGE_BETA = 1.2


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped matches, candidate n-gram total) at order ``n``."""
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    clipped = sum(min(c, ref[g]) for g, c in cand.items())
    return clipped, sum(cand.values())


def _order_precision(clipped: int, total: int, ref_total: int) -> float:
    if total == 0:
        # order longer than the candidate: neutral if the reference is just as short
        return 1.0 if ref_total == 0 else BLEU_FLOOR
    return clipped / total if clipped else BLEU_FLOOR


def _combine(precisions: list[float], cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 1.0 if ref_len == 0 else 0.0
    log_mean = sum(math.log(p) for p in precisions) / len(precisions)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_mean)


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights over orders 1..max_n."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    precisions = []
    for n in range(1, max_n + 1):
        clipped, total = clipped_counts(candidate, reference, n)
        precisions.append(_order_precision(clipped, total, max(len(reference) - n + 1, 0)))
    return _combine(precisions, len(candidate), len(reference))


def corpus_bleu(
    candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4
) -> float:
    """Corpus BLEU: n-gram counts and lengths are summed before the geometric mean."""
    if len(candidates) != len(references):
        raise ContractError("corpus_bleu needs one reference per candidate")
    precisions = []
    for n in range(1, max_n + 1):
        clipped = total = ref_total = 0
        for cand, ref in zip(candidates, references):
            c, t = clipped_counts(cand, ref, n)
            clipped += c
            total += t
            ref_total += max(len(ref) - n + 1, 0)
        precisions.append(_order_precision(clipped, total, ref_total))
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    return _combine(precisions, cand_len, ref_len)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = ROUGE_BETA) -> float:
    if not candidate or not reference:
        return 1.0 if not candidate and not reference else 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def label_report(report: Sequence[str], schema: Schema, stats: Counter | None = None) -> np.ndarray:
    """Invert the findings templates into an (n, k) one-hot state matrix.

    Sentences are split on ``"."``. Recognised forms are
    ``<organ> shows <disease>``, ``no <disease>`` and ``possible <disease>``;
    anything else increments ``stats["unrecognised"]`` and is ignored.
    Topics never mentioned stay ``unmentioned``.
    """
    states = np.full(schema.n_topics, UNMENTIONED)
    topic_of = {d: t for t, d in enumerate(schema.diseases)}
    sentence: list[str] = []
    recognised = 0
    for word in list(report) + ["."]:
        if word != ".":
            sentence.append(word)
            continue
        if not sentence:
            continue
        hit = None
        if len(sentence) == 2 and sentence[1] in topic_of:
            if sentence[0] == NEGATION:
                hit = (topic_of[sentence[1]], NEGATIVE)
            elif sentence[0] == HEDGE:
                hit = (topic_of[sentence[1]], UNCERTAIN)
        elif (
            len(sentence) == 3
            and sentence[1] == LOCATES
            and sentence[0] in schema.organs
            and sentence[2] in topic_of
        ):
            hit = (topic_of[sentence[2]], POSITIVE)
        if hit is None:
            if stats is not None:
                stats["unrecognised"] += 1
        else:
            states[hit[0]] = hit[1]
            recognised += 1
        sentence = []
    if stats is not None and report and not recognised:
        stats["malformed_reports"] += 1
    y = np.zeros((schema.n_topics, len(STATES)), dtype=np.int64)
    y[np.arange(schema.n_topics), states] = 1
    return y


def clinical_efficacy(
    pred_y: Sequence[np.ndarray], true_y: Sequence[np.ndarray]
) -> tuple[float, float, float]:
    """Micro precision/recall/F1 of the positive state over (sample, topic) pairs."""
    if len(pred_y) != len(true_y):
        raise ContractError(f"clinical_efficacy: {len(pred_y)} predictions vs {len(true_y)} labels")
    tp = fp = fn = 0
    for pred, true in zip(pred_y, true_y):
        p = np.asarray(pred).argmax(axis=-1) == POSITIVE
        t = np.asarray(true).argmax(axis=-1) == POSITIVE
        tp += int(np.sum(p & t))
        fp += int(np.sum(p & ~t))
        fn += int(np.sum(~p & t))
    return precision_recall_f1(tp, fp, fn)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


SCORE_KEYS = ("BL-1", "BL-2", "BL-3", "BL-4", "RG-L", "CE-P", "CE-R", "CE-F1")


@dataclass
class ScoreReport:
    corpus: dict[str, float]
    per_sample: list[dict] = field(default_factory=list)

    def to_text(self) -> str:
        return "".join(f"{k}={self.corpus[k]!r}\n" for k in SCORE_KEYS)

    def per_sample_tsv(self) -> str:
        cols = ["id", "BL-1", "BL-2", "BL-3", "BL-4", "RG-L", "generated", "reference"]
        rows = ["\t".join(cols)]
        for rec in self.per_sample:
            rows.append("\t".join(str(rec[c]) if c in ("id", "generated", "reference")
                                  else f"{rec[c]!r}" for c in cols))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScoreReport":
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, _, val = line.partition("=")
                values[key] = float(val)
        return cls(values)


def score_reports(
    generated: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    true_y: Sequence[np.ndarray],
    schema: Schema,
    ids: Sequence[int] | None = None,
) -> ScoreReport:
    """Score generated reports against references and their labels."""
    ids = list(ids) if ids is not None else list(range(len(generated)))
    corpus = {f"BL-{n}": corpus_bleu(generated, references, n) for n in range(1, 5)}
    per_sample = []
    rouge = []
    for sid, cand, ref in zip(ids, generated, references):
        rec = {"id": sid, "generated": " ".join(cand), "reference": " ".join(ref)}
        for n in range(1, 5):
            rec[f"BL-{n}"] = bleu(cand, ref, n)
        rec["RG-L"] = rouge_l(cand, ref)
        rouge.append(rec["RG-L"])
        per_sample.append(rec)
    corpus["RG-L"] = float(np.mean(rouge)) if rouge else 0.0
    pred_y = [label_report(g, schema) for g in generated]
    corpus["CE-P"], corpus["CE-R"], corpus["CE-F1"] = clinical_efficacy(pred_y, list(true_y))
    return ScoreReport(corpus, per_sample)
