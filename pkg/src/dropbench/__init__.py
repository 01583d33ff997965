"""Stochastic-inference robustness profiling for small transformer classifiers."""

from .autograd import Tensor, no_grad, set_default_dtype
from .data import DatasetSplit, Sample, gen_corpus, gen_memory, gen_reasoning, ingest, split, tokenize
from .model import Checkpoint, DropoutConfig, ModelConfig, PRESETS, build, forward, preset
from .rng import RngStream
from .training import TrainConfig, evaluate_plain, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "set_default_dtype",
    "DatasetSplit", "Sample", "gen_corpus", "gen_memory", "gen_reasoning",
    "ingest", "split", "tokenize",
    "Checkpoint", "DropoutConfig", "ModelConfig", "PRESETS", "build", "forward", "preset",
    "RngStream",
    "TrainConfig", "evaluate_plain", "train",
    "__version__",
]
