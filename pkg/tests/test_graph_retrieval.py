from collections import Counter

import numpy as np
import pytest

from eir.errors import ContractError
from eir.graph import (
    KnowledgeGraph,
    TripletEdge,
    base_relations,
    build_graph,
    check_adjacency,
    extract_triplets,
    update_graph,
)
from eir.retrieval import TfidfIndex, retrieve_top_eta
from eir.synthdata import DESK_SCHEMA as S
from eir.synthdata import SyntheticSample


def sample(i, report):
    return SyntheticSample(i, np.zeros((8, 4), int), np.zeros((1, 16, 16)), ["indication"],
                           report.split())


def dz(t):
    return S.disease_node(t)


# ---------------------------------------------------------------- retrieval


def test_duplicate_report_ranks_first_with_cosine_one():
    docs = [(0, "lung shows edema .".split()), (1, "no nodule .".split()),
            (2, "lung shows edema .".split())]
    top = TfidfIndex(docs).top("lung shows edema .".split(), 2, exclude_id=0)
    assert top[0][0] == 2
    assert top[0][1] == pytest.approx(1.0, abs=1e-12)


def test_disjoint_vocabulary_scores_zero():
    index = TfidfIndex([(0, "alpha beta".split()), (1, "gamma".split())])
    assert index.similarities("gamma".split())[0] == 0.0


def test_eta_clamps_to_eligible_documents():
    corpus = [sample(i, "no edema .") for i in range(5)]
    assert len(retrieve_top_eta(corpus[0], corpus, 10)) == 4


def test_query_never_retrieves_itself():
    corpus = [sample(i, f"no {S.diseases[i]} .") for i in range(4)]
    assert all(s.id != 2 for s in retrieve_top_eta(corpus[2], corpus, 3))


def test_ties_break_by_id():
    corpus = [sample(i, "no edema .") for i in (5, 3, 9)]
    index = TfidfIndex([(s.id, s.report) for s in corpus])
    assert [i for i, _ in index.top("no edema .".split(), 3)] == [3, 5, 9]


def test_idf_weighting_hand_value():
    # N=2, "a" in both docs, "b" in one: idf_a = 1, idf_b = ln(3/2) + 1
    index = TfidfIndex([(0, ["a", "b"]), (1, ["a"])])
    idf_b = np.log(1.5) + 1
    np.testing.assert_allclose(index.matrix[0], np.array([1, idf_b]) / np.hypot(1, idf_b))


# ---------------------------------------------------------------- graph


def test_empty_retrieval_has_only_base_edges():
    g = build_graph([], S)
    assert g.relations == frozenset(base_relations(S))
    check_adjacency(g.adjacency)


def test_cooccurring_diseases_are_linked():
    report = f"lung shows {S.diseases[1]} . no {S.diseases[5]} .".split()
    a = build_graph([report], S).adjacency
    assert a[dz(1), dz(5)] and a[dz(5), dz(1)]
    assert not a[dz(1), dz(6)]


def test_qualifier_triplets_are_skipped_and_counted():
    stats = Counter()
    build_graph([f"no {S.diseases[0]} . possible {S.diseases[2]} .".split()], S, stats)
    assert stats["skipped_triplets"] == 2


def test_extract_triplets_kinds():
    trips = extract_triplets(f"lung shows {S.diseases[0]} . no {S.diseases[3]} .".split(), S)
    assert TripletEdge(S.diseases[0], "lung", "located_at") in trips
    assert TripletEdge("no", S.diseases[3], "modify") in trips
    assert TripletEdge(S.diseases[0], S.diseases[3], "suggestive_of") in trips


def test_update_with_present_edges_is_noop():
    report = f"no {S.diseases[1]} . no {S.diseases[2]} .".split()
    g = build_graph([report], S)
    assert update_graph(g, [report]) == g


def test_update_keeps_symmetry():
    g = build_graph([], S)
    g2 = update_graph(g, [f"no {S.diseases[3]} . no {S.diseases[5]} .".split()])
    a = g2.adjacency
    assert a[dz(3), dz(5)] and a[dz(5), dz(3)]
    np.testing.assert_array_equal(a, a.T)


def test_updates_commute():
    r1 = [f"no {S.diseases[0]} . no {S.diseases[4]} .".split()]
    r2 = [f"possible {S.diseases[2]} . no {S.diseases[7]} .".split()]
    g = build_graph([], S)
    assert update_graph(update_graph(g, r1), r2) == update_graph(update_graph(g, r2), r1)


def test_global_node_sees_everything():
    a = KnowledgeGraph(S).adjacency
    assert a[0].all() and a[:, 0].all()


def test_check_adjacency_rejects_asymmetry():
    a = KnowledgeGraph(S).adjacency.copy()
    a[3, 4] = True
    with pytest.raises(ContractError):
        check_adjacency(a)


def test_unknown_relation():
    with pytest.raises(ValueError):
        TripletEdge("a", "b", "causes")
