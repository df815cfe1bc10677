"""Trajectory tokenization toolkit: a flow-matching action tokenizer (FACT),
uniform-binning and DCT+BPE baselines, and a reconstruction-fidelity
evaluation harness.

Modules:
    tensor      dense arrays with a reverse-mode autodiff tape
    data        action chunks, normalization, splits, synthetic corpora
    model       encoder, sign quantizer, flow decoder, losses, reconstruction
    training    deterministic training loop, optimizer, checkpoints
    baselines   uniform binning and the DCT + BPE pipeline
    evaluate    reconstruction MSE records, sweeps, report emission
    cli         command-line pipeline (gen-data ... report)
"""

from .data import ActionChunk, CorpusSpec, Episode, NormStats
from .model import FactTokenizer, LatentCode, TokenizerConfig
from .training import TrainConfig, TrainState

__version__ = "0.1.0"

__all__ = [
    "ActionChunk",
    "CorpusSpec",
    "Episode",
    "FactTokenizer",
    "LatentCode",
    "NormStats",
    "TokenizerConfig",
    "TrainConfig",
    "TrainState",
    "__version__",
]
