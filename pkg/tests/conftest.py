import numpy as np
import pytest

from canner.config import ModelConfig
from canner.corpus import build_vocab, gen_synthetic
from canner.model import Model


def tiny_config(**overrides) -> ModelConfig:
    """Desk-scale CAN config used across model-level tests."""
    base = dict(arch="can", d_ch=6, d_h=8, k=3, seed=3, epochs=2, batch_size=4)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_corpus():
    return gen_synthetic(seed=101, n=6)


@pytest.fixture
def tiny_model(tiny_corpus):
    labels = sorted({t for s in tiny_corpus for t in s.gold})
    config = tiny_config(label_set=labels)
    return Model(config, build_vocab(tiny_corpus), labels)


def rng(seed=0) -> np.random.Generator:
    return np.random.default_rng(seed)
