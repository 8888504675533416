"""
Effect of the semantic distillation term on the tokenizer.

Two tokenizers start from the same initial weights and train on the same batches;
only the distillation weight differs. The quantized features of held-out frames are
then compared by their mean within-class cosine similarity.
"""

import logging
from dataclasses import replace
from typing import NamedTuple, Optional, Sequence

import torch

from WorldSim.synthworld.world import Episode
from WorldSim.tokenizer.losses import TokenizerLossWeights
from WorldSim.tokenizer.training import (
    TokenizerTrainingConfig,
    collect_frames,
    train_tokenizer,
)
from WorldSim.tokenizer.vq_tokenizer import (
    TokenizerConfig,
    VQTokenizer,
    frames_to_tensor,
    within_class_similarity,
)
from WorldSim.utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class DistillationStudyResult(NamedTuple):
    with_distillation: float
    without_distillation: float

    @property
    def margin(self) -> float:
        return self.with_distillation - self.without_distillation


def quantized_similarity(tokenizer: VQTokenizer, frames, semantics) -> float:
    """Within-class cosine similarity of the quantized features of (N, H, W, 3) frames."""
    tokenizer.eval()
    with torch.no_grad():
        quantized = tokenizer.quantize(
            tokenizer.encode_features(frames_to_tensor(frames))
        ).quantized
    return within_class_similarity(
        quantized,
        torch.as_tensor(semantics, dtype=torch.long),
        tokenizer.config.downsample_factor,
        tokenizer.config.num_classes,
    )


def run_distillation_study(
    train_episodes: Sequence[Episode],
    validation_episodes: Sequence[Episode],
    model_config: TokenizerConfig,
    training: TokenizerTrainingConfig,
    weights: Optional[TokenizerLossWeights] = None,
    distill_weight: float = 0.1,
    seed: int = 0,
    show_progress: bool = False,
) -> DistillationStudyResult:
    """
    Train with `distill_weight` and with no distillation at an equal budget and
    report the within-class similarity of both on the validation frames.
    """
    if distill_weight <= 0:
        raise ValueError(f"distill_weight must be positive, got {distill_weight}")
    weights = TokenizerLossWeights() if weights is None else weights
    frames, semantics = collect_frames(train_episodes, training.frame_stride)
    validation_frames, validation_semantics = collect_frames(
        validation_episodes, training.frame_stride
    )
    similarities = {}
    for name, weight in (("with", distill_weight), ("without", 0.0)):
        torch.manual_seed(derive_seed(seed, "distillation_study", "init"))
        tokenizer = VQTokenizer(model_config)
        train_tokenizer(
            tokenizer,
            frames,
            semantics,
            replace(weights, distill=weight),
            training,
            derive_seed(seed, "distillation_study"),
            show_progress=show_progress,
        )
        similarities[name] = quantized_similarity(
            tokenizer, validation_frames, validation_semantics
        )
        logger.info(
            "Within-class similarity %s distillation: %s", name, similarities[name]
        )
    return DistillationStudyResult(similarities["with"], similarities["without"])
