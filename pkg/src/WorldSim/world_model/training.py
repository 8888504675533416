import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from ..metrics import MetricsLog
from ..utils.seeding import derive_seed, numpy_generator, torch_generator
from ..utils.text import tokenize_caption
from ..utils.training import (
    OptimizerConfig,
    check_finite_loss,
    make_optimizer,
    optimizer_step,
)
from ..utils.validation import validate_ratios
from .model import ConditioningMode, WorldModel, world_model_loss
from .sequence import MultimodalSequence, SequenceLayout

logger = logging.getLogger(__name__)

MODE_ORDER = (
    ConditioningMode.UNCONDITIONED,
    ConditioningMode.ACTION_CONDITIONED,
    ConditioningMode.TEXT_CONDITIONED,
)


def _world_model_optimizer():
    return OptimizerConfig(
        lr=1e-4,
        final_lr_ratio=0.1,
        warmup_steps=100,
        weight_decay=0.1,
        betas=[0.9, 0.95],
        grad_clip=1.0,
    )


@dataclass
class WorldModelTrainingConfig:
    """
    :ivar steps: Optimizer steps.
    :ivar batch_size: Windows per step.
    :ivar subsample_factor: Temporal subsampling of the base-rate episodes.
    :ivar window_stride: Steps between the starts of consecutive training windows.
    :ivar conditioning_ratios: Probabilities of the (unconditioned, action-conditioned,
        text-conditioned) modes.
    :ivar log_every: Steps between metric rows.
    :ivar eval_every: Steps between validation evaluations.
    """

    steps: int = 2000
    batch_size: int = 8
    subsample_factor: int = 4
    window_stride: int = 1
    conditioning_ratios: List[float] = field(default_factory=lambda: [0.2, 0.4, 0.4])
    log_every: int = 50
    eval_every: int = 250
    optimizer: OptimizerConfig = field(default_factory=_world_model_optimizer)

    def __post_init__(self):
        for name in (
            "steps",
            "batch_size",
            "subsample_factor",
            "window_stride",
            "log_every",
            "eval_every",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.conditioning_ratios) != 3:
            raise ValueError(
                "conditioning_ratios must hold three values (unconditioned, "
                f"action-conditioned, text-conditioned), got {self.conditioning_ratios}"
            )
        validate_ratios("conditioning_ratios", self.conditioning_ratios)


@dataclass
class TokenizedEpisode:
    """
    An episode after tokenization.

    :ivar tokens: (T, h, w) codebook ids at the base rate.
    :ivar actions: (T, 2) speed and curvature.
    :ivar caption: The episode caption.
    :ivar rate: Frame rate of `tokens` in Hz.
    :ivar seed: Seed of the source episode.
    """

    tokens: np.ndarray
    actions: np.ndarray
    caption: str
    rate: float
    seed: int = 0


@dataclass
class WindowDataset:
    """Fixed-length training windows of T steps."""

    text_ids: np.ndarray
    image_tokens: np.ndarray
    actions: np.ndarray
    layout: SequenceLayout

    def __len__(self) -> int:
        return self.image_tokens.shape[0]

    def batch(self, index) -> MultimodalSequence:
        """Windows at `index` with all conditioning present."""
        image_tokens = torch.as_tensor(self.image_tokens[index])
        presence = torch.ones(image_tokens.shape[:2], dtype=torch.bool)
        return MultimodalSequence(
            text_ids=torch.as_tensor(self.text_ids[index]),
            image_tokens=image_tokens,
            actions=torch.as_tensor(self.actions[index]),
            text_present=presence,
            action_present=presence.clone(),
            layout=self.layout,
        )


def build_windows(
    episodes: Sequence[TokenizedEpisode],
    layout: SequenceLayout,
    subsample_factor: int = 4,
    stride: int = 1,
) -> WindowDataset:
    """Cut temporally subsampled episodes into windows of `layout.time_steps` steps."""
    if subsample_factor < 1:
        raise ValueError(f"subsample_factor must be >= 1, got {subsample_factor}")
    text, images, actions = [], [], []
    steps = layout.time_steps
    for episode in episodes:
        tokens = episode.tokens[::subsample_factor].reshape(-1, layout.image_tokens)
        episode_actions = np.asarray(episode.actions, dtype=np.float32)[::subsample_factor]
        caption_ids = tokenize_caption(episode.caption, layout.text_tokens)
        for start in range(0, tokens.shape[0] - steps + 1, stride):
            images.append(tokens[start : start + steps])
            actions.append(episode_actions[start : start + steps, : layout.action_tokens])
            text.append(np.tile(caption_ids, (steps, 1)).reshape(steps, layout.text_tokens))
    if not images:
        raise ValueError(
            f"No episode is long enough for a window of {steps} steps after "
            f"subsampling by {subsample_factor}"
        )
    return WindowDataset(
        text_ids=np.stack(text).astype(np.int64),
        image_tokens=np.stack(images).astype(np.int64),
        actions=np.stack(actions).astype(np.float32),
        layout=layout,
    )


def action_statistics(dataset: WindowDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-scalar mean and standard deviation of the dataset actions."""
    flat = dataset.actions.reshape(-1, dataset.actions.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 1e-6, std, 1.0)
    return mean, std


def apply_conditioning_dropout(
    batch: MultimodalSequence,
    ratios: Sequence[float] = (0.2, 0.4, 0.4),
    seed: int = 0,
) -> Tuple[MultimodalSequence, List[ConditioningMode]]:
    """
    Assign one conditioning mode per example.

    Unconditioned examples lose text and actions, action-conditioned examples lose the
    text and text-conditioned examples lose the actions. The assignment depends only on
    the batch size, the ratios and the seed.
    """
    if len(ratios) != 3:
        raise ValueError(f"ratios must hold three values, got {list(ratios)}")
    validate_ratios("conditioning ratios", ratios)
    probabilities = np.asarray(ratios, dtype=float)
    probabilities = probabilities / probabilities.sum()
    choices = numpy_generator(seed, "conditioning").choice(
        len(MODE_ORDER), size=batch.batch_size, p=probabilities
    )
    modes = [MODE_ORDER[choice] for choice in choices]
    keep_text = torch.tensor([m is ConditioningMode.TEXT_CONDITIONED for m in modes])
    keep_actions = torch.tensor([m is ConditioningMode.ACTION_CONDITIONED for m in modes])
    dropped = MultimodalSequence(
        text_ids=batch.text_ids,
        image_tokens=batch.image_tokens,
        actions=batch.actions,
        text_present=batch.text_present & keep_text[:, None],
        action_present=batch.action_present & keep_actions[:, None],
        layout=batch.layout,
    )
    return dropped, modes


def evaluate_loss(model: WorldModel, dataset: WindowDataset, batch_size: int = 16) -> float:
    """Cross-entropy in nats per image token with all conditioning present."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = dataset.batch(slice(start, start + batch_size))
            total += float(world_model_loss(model, batch)) * batch.batch_size
            count += batch.batch_size
    return total / count


class WorldModelTrainingResult(NamedTuple):
    steps: int
    losses: List[float]
    validation: List[Tuple[int, float]]
    """(step, validation cross-entropy) pairs."""


def train_world_model(
    model: WorldModel,
    dataset: WindowDataset,
    config: WorldModelTrainingConfig,
    seed: int,
    validation: Optional[WindowDataset] = None,
    metrics: Optional[MetricsLog] = None,
    metric_prefix: str = "world_model/",
    show_progress: bool = True,
) -> WorldModelTrainingResult:
    """
    Train the world model with conditioning dropout.

    Raises TrainingDivergedError when the loss becomes non-finite.
    """
    generator = torch_generator(seed, "world_model", "batches")
    optimizer, scheduler = make_optimizer(model.parameters(), config.optimizer, config.steps)
    losses, validation_losses = [], []
    for step in tqdm(range(config.steps), desc="world model", disable=not show_progress):
        model.train()
        index = torch.randint(len(dataset), (config.batch_size,), generator=generator)
        batch, _ = apply_conditioning_dropout(
            dataset.batch(index.numpy()),
            config.conditioning_ratios,
            derive_seed(seed, "world_model", "conditioning", step),
        )
        loss = world_model_loss(model, batch)
        loss_value = check_finite_loss(float(loss.detach()), step, "World model")
        loss.backward()
        optimizer_step(model, optimizer, scheduler, config.optimizer)
        losses.append(loss_value)
        last_step = step == config.steps - 1
        if metrics is not None and (step % config.log_every == 0 or last_step):
            metrics.log(step, metric_prefix + "loss", loss_value)
        if validation is not None and ((step + 1) % config.eval_every == 0 or last_step):
            validation_loss = evaluate_loss(model, validation)
            validation_losses.append((step, validation_loss))
            if metrics is not None:
                metrics.log(step, metric_prefix + "validation_loss", validation_loss)
            logger.info("World model step %s validation loss %s", step, validation_loss)
    model.eval()
    logger.info("Trained world model for %s steps, final loss %s", config.steps, losses[-1])
    return WorldModelTrainingResult(
        steps=config.steps, losses=losses, validation=validation_losses
    )
