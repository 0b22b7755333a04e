"""Compression toolkit for a small encoder-decoder image captioner.

Gradual magnitude pruning, int8 quantization (post-training and
quantization-aware), BLEU scoring, and a sweep harness that compares
compressed variants against a float baseline.
"""

from .errors import (AccumulatorOverflowError, DivergenceError, DomainError, FormatError,
                     FrozenMaskError, ShapeError, VocabError)
from .kernels import BACKEND
from .metrics import corpus_bleu
from .nn import ModelGraph, TrainConfig, build_model, train
from .pruning import PruneMask, SparsitySchedule, prune_step, target_sparsity
from .quant import QuantParams, QuantizedTensor, dequantize, qmatmul, quantize

__version__ = "0.1.0"

__all__ = [
    "AccumulatorOverflowError", "BACKEND", "DivergenceError", "DomainError", "FormatError",
    "FrozenMaskError", "ModelGraph", "PruneMask", "QuantParams", "QuantizedTensor",
    "ShapeError", "SparsitySchedule", "TrainConfig", "VocabError", "build_model",
    "corpus_bleu", "dequantize", "prune_step", "qmatmul", "quantize", "target_sparsity",
    "train",
]
