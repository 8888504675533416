import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from ..utils.validation import validate_unit_interval

logger = logging.getLogger(__name__)


class DecoderTask(enum.Enum):
    IMAGE_GENERATION = "image_generation"
    VIDEO_GENERATION = "video_generation"
    AUTOREGRESSIVE_FORWARD = "autoregressive_forward"
    AUTOREGRESSIVE_BACKWARD = "autoregressive_backward"
    INTERPOLATION = "interpolation"


# Sampled with equal probability; the autoregressive family splits evenly by direction
TASK_FAMILIES = ("image", "video", "autoregressive", "interpolation")


@dataclass(frozen=True)
class DecoderTaskMask:
    """
    Which frames of a clip are denoised and which frames get their conditioning tokens.

    :ivar task: The training or decoding task.
    :ivar frame_mask: Per frame, True if the frame is denoised and False if it is a
        context frame given in pixels.
    :ivar token_mask: Per frame, True if the frame's tokens are provided.
    :ivar temporal: False disables the temporal layers.
    """

    task: DecoderTask
    frame_mask: Tuple[bool, ...]
    token_mask: Tuple[bool, ...]
    temporal: bool = True

    def __post_init__(self):
        if len(self.frame_mask) != len(self.token_mask):
            raise ValueError(
                f"frame_mask has {len(self.frame_mask)} frames but token_mask has "
                f"{len(self.token_mask)}"
            )
        if not any(self.frame_mask):
            raise ValueError(f"{self.task.value} mask has no frame to denoise")
        if self.task is DecoderTask.IMAGE_GENERATION and (
            self.num_frames != 1 or self.temporal
        ):
            raise ValueError("image_generation uses a single frame with temporal layers off")
        if self.task in (
            DecoderTask.AUTOREGRESSIVE_FORWARD,
            DecoderTask.AUTOREGRESSIVE_BACKWARD,
        ) and all(self.frame_mask):
            raise ValueError(f"{self.task.value} needs at least one context frame")
        if self.task is DecoderTask.INTERPOLATION and any(
            provided and denoised
            for provided, denoised in zip(self.token_mask, self.frame_mask)
        ):
            raise ValueError("interpolation must not provide tokens for denoised frames")

    @property
    def num_frames(self) -> int:
        return len(self.frame_mask)

    @property
    def context_indices(self) -> Tuple[int, ...]:
        return tuple(i for i, denoised in enumerate(self.frame_mask) if not denoised)

    @property
    def target_indices(self) -> Tuple[int, ...]:
        return tuple(i for i, denoised in enumerate(self.frame_mask) if denoised)

    def frame_tensor(self, batch_size: int) -> torch.Tensor:
        """(B, T') bool tensor of the frame mask."""
        return torch.tensor(self.frame_mask).expand(batch_size, -1)

    def token_tensor(self, batch_size: int) -> torch.Tensor:
        """(B, T') bool tensor of the token mask."""
        return torch.tensor(self.token_mask).expand(batch_size, -1)


def task_mask(
    task: DecoderTask, frames: int = 3, context_frames: Optional[int] = None
) -> DecoderTaskMask:
    """
    Build the mask of a task for a clip of `frames` frames.

    Autoregressive tasks use `context_frames` context frames (default min(2, frames - 1))
    at the start (forward) or the end (backward) of the clip and get tokens for the
    remaining frames. Interpolation uses the even frames as context and withholds all
    tokens.
    """
    if frames < 1:
        raise ValueError(f"frames must be positive, got {frames}")
    if task is DecoderTask.IMAGE_GENERATION:
        return DecoderTaskMask(task, (True,), (True,), temporal=False)
    if task is DecoderTask.VIDEO_GENERATION:
        return DecoderTaskMask(task, (True,) * frames, (True,) * frames)
    if task is DecoderTask.INTERPOLATION:
        if frames < 3 or frames % 2 == 0:
            raise ValueError(f"interpolation needs an odd clip of at least 3 frames, got {frames}")
        frame_mask = tuple(i % 2 == 1 for i in range(frames))
        return DecoderTaskMask(task, frame_mask, (False,) * frames)
    if frames < 2:
        raise ValueError(f"{task.value} needs at least 2 frames, got {frames}")
    context_frames = min(2, frames - 1) if context_frames is None else context_frames
    if not 1 <= context_frames < frames:
        raise ValueError(
            f"context_frames must be in [1, {frames - 1}], got {context_frames}"
        )
    if task is DecoderTask.AUTOREGRESSIVE_FORWARD:
        frame_mask = tuple(i >= context_frames for i in range(frames))
    else:
        frame_mask = tuple(i < frames - context_frames for i in range(frames))
    return DecoderTaskMask(task, frame_mask, frame_mask)


def sample_task(rng: np.random.Generator, frames: int = 3) -> DecoderTaskMask:
    """Draw a task family uniformly, then a direction for the autoregressive family."""
    family = TASK_FAMILIES[int(rng.integers(len(TASK_FAMILIES)))]
    if family == "image":
        return task_mask(DecoderTask.IMAGE_GENERATION)
    if family == "video":
        return task_mask(DecoderTask.VIDEO_GENERATION, frames)
    if family == "interpolation":
        return task_mask(DecoderTask.INTERPOLATION, frames)
    if rng.integers(2) == 0:
        return task_mask(DecoderTask.AUTOREGRESSIVE_FORWARD, frames)
    return task_mask(DecoderTask.AUTOREGRESSIVE_BACKWARD, frames)


def task_family(mask: DecoderTaskMask) -> str:
    if mask.task in (DecoderTask.AUTOREGRESSIVE_FORWARD, DecoderTask.AUTOREGRESSIVE_BACKWARD):
        return "autoregressive"
    return mask.task.value.split("_")[0]


def token_dropout(
    tokens: torch.Tensor,
    p: float,
    null_id: int,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Replace each token independently by `null_id` with probability `p`."""
    validate_unit_interval("p", p)
    drop = torch.rand(tokens.shape, generator=generator) < p
    return torch.where(drop, torch.full_like(tokens, null_id), tokens)


def apply_token_mask(
    tokens: torch.Tensor, token_mask: torch.Tensor, null_id: int
) -> torch.Tensor:
    """Null every token of the (B, T', h, w) frames whose (B, T') mask entry is False."""
    if tuple(token_mask.shape) != tuple(tokens.shape[:2]):
        raise ValueError(
            f"token_mask has shape {tuple(token_mask.shape)}, expected "
            f"{tuple(tokens.shape[:2])}"
        )
    keep = token_mask.to(torch.bool)[..., None, None]
    return torch.where(keep, tokens, torch.full_like(tokens, null_id))
