import filecmp
import json

import numpy as np
import pytest

from eir.errors import ConfigError
from eir.metrics import label_report
from eir.synthdata import (
    DESK_SCHEMA,
    POSITIVE,
    STATES,
    Schema,
    WorldConfig,
    generate_corpus,
    generate_sample,
    image_positive_oracle,
    read_corpus,
    write_corpus,
)


@pytest.mark.parametrize("size, counts", [(100, (80, 10, 10)), (200, (160, 20, 20)), (7, (5, 0, 2))])
def test_split_arithmetic(size, counts):
    c = WorldConfig(corpus_size=size).split_counts()
    assert (c["train"], c["val"], c["test"]) == counts


def test_generated_splits_have_exact_sizes():
    corpus = generate_corpus(WorldConfig(corpus_size=100))
    assert [len(corpus.splits[s]) for s in ("train", "val", "test")] == [80, 10, 10]
    ids = [s.id for split in corpus.splits.values() for s in split]
    assert ids == list(range(100))


def test_same_seed_byte_identical_files(tmp_path):
    cfg = WorldConfig(corpus_size=30, seed=5)
    write_corpus(generate_corpus(cfg), tmp_path / "a")
    write_corpus(generate_corpus(cfg), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert match == names and not mismatch and not errors


def test_different_seed_differs():
    a = generate_sample(WorldConfig(seed=0), 3)
    b = generate_sample(WorldConfig(seed=1), 3)
    assert not np.array_equal(a.views, b.views)


def test_label_round_trip_over_corpus(small_corpus):
    for split in small_corpus.splits.values():
        for s in split:
            np.testing.assert_array_equal(label_report(s.report, small_corpus.schema), s.y)


def test_write_refuses_existing_directory(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    with pytest.raises(FileExistsError):
        write_corpus(small_corpus, tmp_path)
    write_corpus(small_corpus, tmp_path, overwrite=True)


def test_read_back_equals_generated(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    back = read_corpus(tmp_path)
    assert back.config == small_corpus.config
    assert back.vocab_hash == small_corpus.vocab_hash
    for name, samples in small_corpus.splits.items():
        for a, b in zip(samples, back.splits[name]):
            assert a.id == b.id and a.report == b.report and a.history == b.history
            np.testing.assert_array_equal(a.y, b.y)
            np.testing.assert_array_equal(a.views, b.views)


def test_schema_file_lists_nodes(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    schema = json.loads((tmp_path / "graph_schema.json").read_text())
    assert len(schema["nodes"]) == 12
    assert schema["nodes"][0]["role"] == "global"


def test_views_dim_with_index():
    s = generate_sample(WorldConfig(views=3), 0)
    ratio = s.views[2].max() / s.views[0].max()
    assert ratio == pytest.approx(0.7, abs=1e-3)
    assert s.views.shape == (3, 16, 16)


def test_image_oracle_recovers_positives(small_corpus):
    for s in small_corpus.splits["train"]:
        np.testing.assert_array_equal(image_positive_oracle(s.views, small_corpus.config),
                                      s.states == POSITIVE)


def test_state_frequencies_roughly_follow_prior():
    corpus = generate_corpus(WorldConfig(corpus_size=300, seed=2))
    states = np.concatenate([s.states for s in corpus.splits["train"]])
    freq = np.bincount(states, minlength=len(STATES)) / len(states)
    np.testing.assert_allclose(freq, (0.5, 0.2, 0.1, 0.2), atol=0.05)


@pytest.mark.parametrize(
    "kwargs",
    [dict(schema="nope"), dict(views=0), dict(split=(50, 30, 30)), dict(noise=0.7),
     dict(image_size=15), dict(schema="production")],
)
def test_invalid_world_config(kwargs):
    with pytest.raises(ConfigError):
        WorldConfig(**kwargs)


def test_vocabulary_collision_rejected():
    with pytest.raises(ConfigError, match="collision"):
        Schema(("lung",), ("no",), (0,), ("fever",))
    with pytest.raises(ConfigError, match="collision"):
        Schema(("lung",), ("lung",), (0,), ("fever",))


def test_desk_and_production_node_counts():
    assert DESK_SCHEMA.n_nodes == 12
    assert WorldConfig(schema="production", image_size=20).topic_schema.n_nodes == 28
