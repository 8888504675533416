import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from ..metrics import MetricsLog
from ..utils.seeding import torch_generator
from ..utils.training import (
    OptimizerConfig,
    check_finite_loss,
    make_optimizer,
    optimizer_step,
)
from .losses import (
    PatchDiscriminator,
    TokenizerLossWeights,
    hinge_discriminator_loss,
    tokenizer_loss,
)
from .vq_tokenizer import VQTokenizer, frames_to_tensor

logger = logging.getLogger(__name__)


def _tokenizer_optimizer():
    return OptimizerConfig(
        lr=1e-4,
        final_lr_ratio=0.1,
        warmup_steps=50,
        weight_decay=0.01,
        betas=[0.5, 0.9],
        grad_clip=1.0,
    )


@dataclass
class TokenizerTrainingConfig:
    """
    :ivar steps: Optimizer steps.
    :ivar batch_size: Images per step.
    :ivar frame_stride: Use every n-th frame of each episode.
    :ivar log_every: Steps between metric rows.
    :ivar optimizer: AdamW and schedule settings.
    """

    steps: int = 2000
    batch_size: int = 16
    frame_stride: int = 4
    log_every: int = 50
    optimizer: OptimizerConfig = field(default_factory=_tokenizer_optimizer)

    def __post_init__(self):
        for name in ("steps", "batch_size", "frame_stride", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


class TokenizerTrainingResult(NamedTuple):
    steps: int
    losses: List[float]


def collect_frames(episodes: Sequence, frame_stride: int = 1):
    """Stack frames and semantic maps of all episodes, keeping every n-th frame."""
    if not episodes:
        raise ValueError("No episodes to collect frames from")
    frames = np.concatenate([e.frames.frames[::frame_stride] for e in episodes])
    semantics = np.concatenate([e.semantics[::frame_stride] for e in episodes])
    return frames, semantics


def reconstruction_l2(tokenizer: VQTokenizer, frames: np.ndarray) -> float:
    """Mean per-pixel squared error of encode-quantize-decode on (N, H, W, 3) frames."""
    tokenizer.eval()
    with torch.no_grad():
        images = frames_to_tensor(frames)
        reconstruction, _ = tokenizer(images)
        return float(torch.mean((reconstruction - images) ** 2))


def train_tokenizer(
    tokenizer: VQTokenizer,
    frames: np.ndarray,
    semantics: np.ndarray,
    weights: TokenizerLossWeights,
    config: TokenizerTrainingConfig,
    seed: int,
    metrics: Optional[MetricsLog] = None,
    show_progress: bool = True,
) -> TokenizerTrainingResult:
    """
    Train the tokenizer on (N, H, W, 3) frames with aligned (N, H, W) semantic maps.

    Batches are drawn with replacement from a generator derived from `seed`.
    """
    if frames.shape[0] != semantics.shape[0]:
        raise ValueError(
            f"Got {frames.shape[0]} frames but {semantics.shape[0]} semantic maps"
        )
    images = frames_to_tensor(frames)
    labels = torch.as_tensor(semantics, dtype=torch.long)
    generator = torch_generator(seed, "tokenizer", "batches")
    optimizer, scheduler = make_optimizer(
        tokenizer.parameters(), config.optimizer, config.steps
    )
    discriminator = None
    if weights.gan > 0:
        torch.manual_seed(seed)
        discriminator = PatchDiscriminator()
        disc_optimizer, disc_scheduler = make_optimizer(
            discriminator.parameters(), config.optimizer, config.steps
        )
    tokenizer.train()
    losses = []
    for step in tqdm(range(config.steps), desc="tokenizer", disable=not show_progress):
        index = torch.randint(images.shape[0], (config.batch_size,), generator=generator)
        batch, batch_semantics = images[index], labels[index]
        result = tokenizer_loss(tokenizer, batch, batch_semantics, weights, discriminator)
        loss_value = check_finite_loss(float(result.total.detach()), step, "Tokenizer")
        result.total.backward()
        optimizer_step(tokenizer, optimizer, scheduler, config.optimizer)
        if discriminator is not None:
            disc_optimizer.zero_grad(set_to_none=True)
            with torch.no_grad():
                fake = tokenizer(batch)[0]
            disc_loss = hinge_discriminator_loss(discriminator(batch), discriminator(fake))
            disc_loss.backward()
            optimizer_step(discriminator, disc_optimizer, disc_scheduler, config.optimizer)
        losses.append(loss_value)
        if metrics is not None and (step % config.log_every == 0 or step == config.steps - 1):
            metrics.log(step, "tokenizer/loss", loss_value)
            metrics.log_many(step, result.components, prefix="tokenizer/")
        logger.debug("Tokenizer step %s loss %s", step, loss_value)
    tokenizer.eval()
    logger.info("Trained tokenizer for %s steps, final loss %s", config.steps, losses[-1])
    return TokenizerTrainingResult(steps=config.steps, losses=losses)
