"""Knowledge graph over the fixed entity schema, with retrieval-driven edges."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError
from .synthdata import HEDGE, LOCATES, NEGATION, Schema

RELATIONS = ("suggestive_of", "located_at", "modify")


@dataclass(frozen=True)
class TripletEdge:
    src: str
    dst: str
    relation: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")


@dataclass(frozen=True)
class KnowledgeGraph:
    """Node layout from a :class:`Schema` plus a typed, symmetric edge set.

    ``relations`` holds ``(src, dst, kind)`` node-index triples; ``adjacency``
    is the derived visibility mask (self, global row/column, every edge both ways).
    """

    schema: Schema
    relations: frozenset = field(default_factory=frozenset)

    @property
    def n_nodes(self) -> int:
        return self.schema.n_nodes

    @property
    def adjacency(self) -> np.ndarray:
        n = self.n_nodes
        a = np.eye(n, dtype=bool)
        a[0, :] = a[:, 0] = True
        for src, dst, _ in self.relations:
            a[src, dst] = a[dst, src] = True
        return a

    def has_edge(self, src: int, dst: int) -> bool:
        return bool(self.adjacency[src, dst])


def check_adjacency(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError("adjacency is not symmetric")
    if not a.diagonal().all():
        raise ContractError("adjacency diagonal must be all true")
    if not (a[0].all() and a[:, 0].all()):
        raise ContractError("global node must see every node")


def base_relations(schema: Schema) -> set[tuple[int, int, str]]:
    return {
        (schema.disease_node(t), schema.organ_node(o), "located_at")
        for t, o in enumerate(schema.disease_organ)
    }


def extract_triplets(report: Sequence[str], schema: Schema) -> list[TripletEdge]:
    """Triplets from one templated report.

    ``<organ> shows <disease>`` gives ``located_at``; ``no``/``possible`` give
    ``modify`` edges from the qualifier; every pair of diseases mentioned in
    the same report gives ``suggestive_of``.
    """
    triplets = []
    mentioned: list[str] = []
    sentence: list[str] = []
    for word in list(report) + ["."]:
        if word != ".":
            sentence.append(word)
            continue
        if len(sentence) == 3 and sentence[1] == LOCATES:
            triplets.append(TripletEdge(sentence[2], sentence[0], "located_at"))
            mentioned.append(sentence[2])
        elif len(sentence) == 2 and sentence[0] in (NEGATION, HEDGE):
            triplets.append(TripletEdge(sentence[0], sentence[1], "modify"))
            mentioned.append(sentence[1])
        sentence = []
    diseases = sorted(set(mentioned) & set(schema.diseases), key=schema.diseases.index)
    triplets += [TripletEdge(a, b, "suggestive_of") for a, b in combinations(diseases, 2)]
    return triplets


def triplets_to_relations(
    triplets: Iterable[TripletEdge], schema: Schema, stats: Counter | None = None
) -> set[tuple[int, int, str]]:
    node = {name: i for i, name in enumerate(schema.node_names)}
    out = set()
    for trip in triplets:
        if trip.src not in node or trip.dst not in node:
            if stats is not None:
                stats["skipped_triplets"] += 1
            continue
        out.add((node[trip.src], node[trip.dst], trip.relation))
    return out


def build_graph(
    retrieved: Sequence[Sequence[str]], schema: Schema, stats: Counter | None = None
) -> KnowledgeGraph:
    """Base schema edges plus edges derived from the retrieved reports."""
    relations = base_relations(schema)
    for report in retrieved:
        relations |= triplets_to_relations(extract_triplets(report, schema), schema, stats)
    return KnowledgeGraph(schema, frozenset(relations))


def update_graph(
    g: KnowledgeGraph, new_retrieval: Sequence[Sequence[str]], stats: Counter | None = None
) -> KnowledgeGraph:
    """Union ``g``'s edges with those derived from ``new_retrieval``."""
    fresh = build_graph(new_retrieval, g.schema, stats)
    return KnowledgeGraph(g.schema, g.relations | fresh.relations)
