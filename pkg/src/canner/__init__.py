"""Character-level Chinese NER with convolutional local attention, a BiGRU
with global self-attention, and a linear-chain CRF decoder."""

from .config import ConfigError, ModelConfig
from .corpus import (
    DataFormatError,
    EvalReport,
    Sentence,
    Vocab,
    bio_to_bioes,
    bmes_from_words,
    build_vocab,
    extract_spans,
    gen_synthetic,
    parse_conll,
    score,
)
from .model import AttentionTrace, CheckpointError, Model, TrainResult, train
from .numerics import NumericsError, Parameter, adadelta_step, check_gradients

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "CheckpointError",
    "ConfigError",
    "DataFormatError",
    "EvalReport",
    "Model",
    "ModelConfig",
    "NumericsError",
    "Parameter",
    "Sentence",
    "TrainResult",
    "Vocab",
    "adadelta_step",
    "bio_to_bioes",
    "bmes_from_words",
    "build_vocab",
    "check_gradients",
    "extract_spans",
    "gen_synthetic",
    "parse_conll",
    "score",
    "train",
]
