import copy
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from ..metrics import MetricsLog
from ..utils.seeding import numpy_generator, torch_generator
from ..utils.training import (
    OptimizerConfig,
    check_finite_loss,
    make_optimizer,
    optimizer_step,
)
from ..utils.validation import validate_unit_interval
from .schedule import noise, v_target
from .tasks import (
    DecoderTaskMask,
    apply_token_mask,
    sample_task,
    task_family,
    token_dropout,
)
from .unet import VideoUNet, frames_to_model_space

logger = logging.getLogger(__name__)


def _decoder_optimizer():
    return OptimizerConfig(
        lr=5e-5,
        final_lr_ratio=0.02,
        warmup_steps=100,
        weight_decay=0.01,
        betas=[0.9, 0.99],
        grad_clip=1.0,
    )


@dataclass
class DecoderTrainingConfig:
    """
    :ivar steps: Optimizer steps.
    :ivar batch_size: Clips per step. All clips of a step share one task.
    :ivar frames: T', frames per training clip.
    :ivar subsample_factors: Temporal strides of the clips, drawn with equal probability.
    :ivar token_dropout: Probability of replacing a conditioning token by the null token.
    :ivar l1_weight: Weight of the mean absolute v residual.
    :ivar l2_weight: Weight of the mean squared v residual.
    :ivar ema_decay: Decay of the parameter moving average.
    :ivar log_every: Steps between metric rows.
    """

    steps: int = 2000
    batch_size: int = 4
    frames: int = 3
    subsample_factors: List[int] = field(default_factory=lambda: [4, 2, 1])
    token_dropout: float = 0.15
    l1_weight: float = 0.1
    l2_weight: float = 1.0
    ema_decay: float = 0.999
    log_every: int = 50
    optimizer: OptimizerConfig = field(default_factory=_decoder_optimizer)

    def __post_init__(self):
        for name in ("steps", "batch_size", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.frames < 3:
            raise ValueError(f"frames must be at least 3, got {self.frames}")
        if not self.subsample_factors or min(self.subsample_factors) < 1:
            raise ValueError(
                f"subsample_factors must be positive integers, got {self.subsample_factors}"
            )
        validate_unit_interval("token_dropout", self.token_dropout)
        if self.l1_weight < 0 or self.l2_weight < 0:
            raise ValueError(
                f"Loss weights must be >= 0, got l1 {self.l1_weight} and l2 {self.l2_weight}"
            )
        validate_unit_interval("ema_decay", self.ema_decay, closed_right=False)


@dataclass
class DiffusionBatch:
    """
    :ivar x: (B, T', 3, H, W) clean clip in model space.
    :ivar tokens: (B, T', h, w) conditioning tokens, frame-aligned with `x`.
    :ivar mask: The task mask shared by the batch.
    :ivar t: (B,) diffusion times in [0, 1].
    :ivar eps: Standard normal noise shaped like `x`.
    """

    x: torch.Tensor
    tokens: torch.Tensor
    mask: DecoderTaskMask
    t: torch.Tensor
    eps: torch.Tensor

    def __post_init__(self):
        batch, frames = self.x.shape[:2]
        if tuple(self.tokens.shape[:2]) != (batch, frames):
            raise ValueError(
                f"tokens cover {tuple(self.tokens.shape[:2])} frames, x covers "
                f"{(batch, frames)}"
            )
        if frames != self.mask.num_frames:
            raise ValueError(
                f"Clip has {frames} frames, the {self.mask.task.value} mask has "
                f"{self.mask.num_frames}"
            )
        if self.eps.shape != self.x.shape:
            raise ValueError(
                f"eps has shape {tuple(self.eps.shape)}, x has {tuple(self.x.shape)}"
            )
        if tuple(self.t.shape) != (batch,):
            raise ValueError(f"t has shape {tuple(self.t.shape)}, expected ({batch},)")
        if torch.any(self.t < 0) or torch.any(self.t > 1):
            raise ValueError("Diffusion times must lie in [0, 1]")


def masked_v_loss(
    prediction: torch.Tensor,
    target: torch.Tensor,
    frame_mask: torch.Tensor,
    l1_weight: float = 0.1,
    l2_weight: float = 1.0,
) -> torch.Tensor:
    """
    l1_weight * mean |r| + l2_weight * mean r**2 over the elements of denoised frames,
    with r = prediction - target. Context frames contribute nothing.
    """
    if prediction.shape != target.shape:
        raise ValueError(
            f"prediction {tuple(prediction.shape)} and target {tuple(target.shape)} differ"
        )
    weights = frame_mask.to(prediction.dtype)
    weights = weights.reshape(*weights.shape, *([1] * (prediction.ndim - weights.ndim)))
    weights = weights.expand_as(prediction)
    count = weights.sum()
    if count == 0:
        raise ValueError("The frame mask selects no frame to denoise")
    residual = prediction - target
    per_element = l1_weight * residual.abs() + l2_weight * residual**2
    return (per_element * weights).sum() / count


def decoder_inputs(model: VideoUNet, batch: DiffusionBatch):
    """Noised input clip, frame-mask tensor and masked tokens of a batch."""
    size = batch.x.shape[0]
    frame_mask = batch.mask.frame_tensor(size)
    x_t = noise(batch.x, batch.eps, batch.t, model.schedule)
    x_in = torch.where(frame_mask[..., None, None, None], x_t, batch.x)
    tokens = apply_token_mask(batch.tokens, batch.mask.token_tensor(size), model.null_id)
    return x_in, frame_mask, tokens


def decoder_loss(
    model: VideoUNet,
    batch: DiffusionBatch,
    l1_weight: float = 0.1,
    l2_weight: float = 1.0,
) -> torch.Tensor:
    """v-space denoising loss of `model` on `batch`, over denoised frames only."""
    x_in, frame_mask, tokens = decoder_inputs(model, batch)
    prediction = model(x_in, batch.t, tokens, frame_mask, temporal=batch.mask.temporal)
    target = v_target(batch.x, batch.eps, batch.t, model.schedule)
    return masked_v_loss(prediction, target, frame_mask, l1_weight, l2_weight)


def ema_update(
    shadow: Iterable[torch.Tensor], live: Iterable[torch.Tensor], decay: float
) -> None:
    """In place: shadow <- decay * shadow + (1 - decay) * live."""
    validate_unit_interval("decay", decay, closed_right=False)
    shadow, live = list(shadow), list(live)
    if len(shadow) != len(live):
        raise ValueError(f"Got {len(shadow)} shadow tensors for {len(live)} live tensors")
    with torch.no_grad():
        for index, (s, value) in enumerate(zip(shadow, live)):
            if s.shape != value.shape:
                raise ValueError(
                    f"Tensor {index} has shadow shape {tuple(s.shape)} but live shape "
                    f"{tuple(value.shape)}"
                )
            s.mul_(decay).add_(value, alpha=1.0 - decay)


class ExponentialMovingAverage:
    """A frozen copy of a model tracking a moving average of its parameters."""

    def __init__(self, model: torch.nn.Module, decay: float = 0.999):
        validate_unit_interval("decay", decay, closed_right=False)
        self.decay = decay
        self.shadow = copy.deepcopy(model).eval()
        self.shadow.requires_grad_(False)

    def update(self, model: torch.nn.Module) -> None:
        ema_update(self.shadow.parameters(), model.parameters(), self.decay)
        with torch.no_grad():
            for shadow_buffer, buffer in zip(self.shadow.buffers(), model.buffers()):
                shadow_buffer.copy_(buffer)


class DecoderEpisode(NamedTuple):
    frames: np.ndarray
    """(N, H, W, 3) pixels in [0, 1] at the base rate."""
    tokens: np.ndarray
    """(N, h, w) token ids of the same frames."""


def sample_clip_indices(
    num_frames: int, clip_frames: int, factors: Sequence[int], rng: np.random.Generator
) -> np.ndarray:
    """
    Frame indices of a clip of `clip_frames` frames with a stride drawn uniformly from
    the `factors` that fit into `num_frames`.
    """
    feasible = [f for f in factors if (clip_frames - 1) * f < num_frames]
    if not feasible:
        raise ValueError(
            f"An episode of {num_frames} frames is too short for a clip of {clip_frames} "
            f"frames at strides {list(factors)}"
        )
    factor = feasible[int(rng.integers(len(feasible)))]
    start = int(rng.integers(num_frames - (clip_frames - 1) * factor))
    return start + factor * np.arange(clip_frames)


class DecoderTrainingResult(NamedTuple):
    steps: int
    losses: List[float]
    ema: ExponentialMovingAverage
    task_counts: Dict[str, int]


def train_decoder(
    model: VideoUNet,
    episodes: Sequence[DecoderEpisode],
    config: DecoderTrainingConfig,
    seed: int,
    metrics: Optional[MetricsLog] = None,
    show_progress: bool = True,
) -> DecoderTrainingResult:
    """
    Train the decoder on randomly masked tasks and track an EMA of its parameters.

    Raises TrainingDivergedError when the loss becomes non-finite.
    """
    if not episodes:
        raise ValueError("No episodes to train the decoder on")
    if config.frames > model.config.max_frames:
        raise ValueError(
            f"Training clips of {config.frames} frames exceed the decoder's max_frames "
            f"{model.config.max_frames}"
        )
    rng = numpy_generator(seed, "decoder", "tasks")
    generator = torch_generator(seed, "decoder", "noise")
    optimizer, scheduler = make_optimizer(model.parameters(), config.optimizer, config.steps)
    ema = ExponentialMovingAverage(model, config.ema_decay)
    losses, task_counts = [], Counter()
    model.train()
    for step in tqdm(range(config.steps), desc="decoder", disable=not show_progress):
        mask = sample_task(rng, config.frames)
        task_counts[task_family(mask)] += 1
        clips, clip_tokens = [], []
        for _ in range(config.batch_size):
            episode = episodes[int(rng.integers(len(episodes)))]
            index = sample_clip_indices(
                len(episode.frames), mask.num_frames, config.subsample_factors, rng
            )
            clips.append(episode.frames[index])
            clip_tokens.append(episode.tokens[index])
        x = frames_to_model_space(np.stack(clips))
        tokens = token_dropout(
            torch.as_tensor(np.stack(clip_tokens), dtype=torch.long),
            config.token_dropout,
            model.null_id,
            generator,
        )
        batch = DiffusionBatch(
            x=x,
            tokens=tokens,
            mask=mask,
            t=torch.rand(config.batch_size, generator=generator),
            eps=torch.randn(x.shape, generator=generator),
        )
        loss = decoder_loss(model, batch, config.l1_weight, config.l2_weight)
        loss_value = check_finite_loss(float(loss.detach()), step, "Decoder")
        loss.backward()
        optimizer_step(model, optimizer, scheduler, config.optimizer)
        ema.update(model)
        losses.append(loss_value)
        if metrics is not None and (step % config.log_every == 0 or step == config.steps - 1):
            metrics.log(step, "decoder/loss", loss_value)
        logger.debug("Decoder step %s task %s loss %s", step, mask.task.value, loss_value)
    model.eval()
    logger.info("Trained decoder for %s steps, tasks %s", config.steps, dict(task_counts))
    return DecoderTrainingResult(
        steps=config.steps, losses=losses, ema=ema, task_counts=dict(task_counts)
    )

