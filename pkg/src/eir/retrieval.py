"""TF-IDF cosine retrieval over report unigrams."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np


class TfidfIndex:
    """Immutable index over ``(id, tokens)`` documents.

    Weights are raw term counts times smoothed idf ``ln((1 + N) / (1 + df)) + 1``,
    L2-normalised per document. Query terms unseen in the corpus are dropped.
    """

    def __init__(self, documents: Sequence[tuple[int, Sequence[str]]]):
        self.ids = [doc_id for doc_id, _ in documents]
        df: Counter = Counter()
        for _, tokens in documents:
            df.update(set(tokens))
        self.terms = {t: i for i, t in enumerate(sorted(df))}
        n_docs = len(documents)
        self.idf = np.array(
            [math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in sorted(df)], dtype=np.float64
        )
        self.matrix = np.zeros((n_docs, len(self.terms)))
        for row, (_, tokens) in enumerate(documents):
            self.matrix[row] = self.vectorize(tokens)

    def __len__(self) -> int:
        return len(self.ids)

    def vectorize(self, tokens: Sequence[str]) -> np.ndarray:
        vec = np.zeros(len(self.terms))
        for term, count in Counter(tokens).items():
            col = self.terms.get(term)
            if col is not None:
                vec[col] = count * self.idf[col]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def similarities(self, tokens: Sequence[str]) -> np.ndarray:
        return self.matrix @ self.vectorize(tokens)

    def top(self, tokens: Sequence[str], eta: int, exclude_id: int | None = None):
        """Up to ``eta`` ``(id, cosine)`` pairs, best first, ties broken by id."""
        sims = self.similarities(tokens)
        ranked = sorted(
            ((doc_id, float(s)) for doc_id, s in zip(self.ids, sims) if doc_id != exclude_id),
            key=lambda pair: (-pair[1], pair[0]),
        )
        return ranked[: max(eta, 0)]


def retrieve_top_eta(query, corpus: Sequence, eta: int, index: TfidfIndex | None = None):
    """The ``eta`` corpus samples whose reports are most similar to ``query``'s.

    ``query`` and corpus entries are :class:`~eir.synthdata.SyntheticSample`;
    the query's own id is never returned and ``eta`` is clamped to the corpus.
    """
    index = index or TfidfIndex([(s.id, s.report) for s in corpus])
    by_id = {s.id: s for s in corpus}
    return [by_id[doc_id] for doc_id, _ in index.top(query.report, eta, exclude_id=query.id)]
