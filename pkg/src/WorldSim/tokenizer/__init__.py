from .losses import TokenizerLossWeights, combine_tokenizer_losses, tokenizer_loss
from .training import TokenizerTrainingConfig, train_tokenizer
from .vq_tokenizer import (
    Codebook,
    TokenGrid,
    TokenizerConfig,
    VQTokenizer,
    bit_compression,
    codebook_usage,
    quantize,
    tokenize_frames,
    within_class_similarity,
)

__all__ = [
    "Codebook",
    "TokenGrid",
    "TokenizerConfig",
    "TokenizerLossWeights",
    "TokenizerTrainingConfig",
    "VQTokenizer",
    "bit_compression",
    "codebook_usage",
    "combine_tokenizer_losses",
    "quantize",
    "tokenize_frames",
    "tokenizer_loss",
    "train_tokenizer",
    "within_class_similarity",
]
