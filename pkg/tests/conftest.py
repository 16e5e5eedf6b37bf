import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from eir.config import ModelConfig  # noqa: E402
from eir.synthdata import WorldConfig, generate_corpus  # noqa: E402


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(WorldConfig(corpus_size=40, seed=11))


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(width=16, heads=2, ffn=32, image_layers=1, ct_layers=1,
                       decoder_layers=1, interp_warmup=20)
