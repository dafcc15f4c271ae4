"""Streaming multilingual Transformer-Transducer toolkit on a numpy autodiff core.

Modules: ``autodiff`` (tensors and reverse mode), ``masking`` (chunk attention
masks), ``model`` (encoder, branches, checkpoints), ``lattice`` (transducer
loss), ``decoding`` (streaming greedy and beam search), ``corpus`` (synthetic
language suites), ``metrics`` (WER, BLEU, latency), ``training`` (pooled
training, language expansion, evaluation) and ``cli``.
"""

from .masking import ChunkMaskSpec
from .model import FeatureSequence, ModelConfig, TransducerModel
from .decoding import DecodeConfig, beam_decode, greedy_stream_decode
from .training import ExpansionPlan, TrainConfig, evaluate, expand, train

__all__ = [
    "ChunkMaskSpec",
    "DecodeConfig",
    "ExpansionPlan",
    "FeatureSequence",
    "ModelConfig",
    "TrainConfig",
    "TransducerModel",
    "beam_decode",
    "evaluate",
    "expand",
    "greedy_stream_decode",
    "train",
]
