"""Few-sample neural network compression under class imbalance, rebalanced
with out-of-distribution auxiliary data.

Submodules:
    nn         minimal deterministic network engine (layers, losses, SGD)
    data       synthetic datasets, long-tail subsampling, OOD pool, file I/O
    rebalance  class priors, complementary label rates, auxiliary sets
    compress   channel importance, structural pruning, joint distillation
    finetune   regularized fine-tuning with early stopping
    bayes      discrete Bayes-classifier invariance oracle
    harness    config-driven experiments, variants, sweeps, reports
"""

from . import bayes, compress, data, finetune, harness, nn, rebalance
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    NumericError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "bayes",
    "compress",
    "data",
    "finetune",
    "harness",
    "nn",
    "rebalance",
    "CapacityError",
    "ConfigError",
    "DomainError",
    "NumericError",
    "ShapeError",
    "__version__",
]
