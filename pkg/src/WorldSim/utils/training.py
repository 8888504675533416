import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List

import torch

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    """
    AdamW settings with a linear warm-up followed by cosine decay.

    :ivar lr: Peak learning rate.
    :ivar final_lr_ratio: Final learning rate as a fraction of the peak.
    :ivar warmup_steps: Steps of linear warm-up.
    :ivar weight_decay: AdamW weight decay.
    :ivar betas: AdamW betas.
    :ivar grad_clip: Maximum gradient norm, 0 disables clipping.
    """

    lr: float = 1e-4
    final_lr_ratio: float = 0.1
    warmup_steps: int = 100
    weight_decay: float = 0.01
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.final_lr_ratio <= 1.0:
            raise ValueError(
                f"final_lr_ratio must be in [0, 1], got {self.final_lr_ratio}"
            )
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if len(self.betas) != 2 or not all(0.0 <= beta < 1.0 for beta in self.betas):
            raise ValueError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.grad_clip < 0:
            raise ValueError(f"grad_clip must be >= 0, got {self.grad_clip}")


def warmup_cosine_factor(
    step: int, warmup_steps: int, total_steps: int, final_lr_ratio: float
) -> float:
    """Multiplier of the peak learning rate at `step`."""
    if warmup_steps > 0 and step < warmup_steps:
        return float(step + 1) / float(warmup_steps)
    if total_steps <= warmup_steps:
        return final_lr_ratio
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
    return final_lr_ratio + cosine * (1.0 - final_lr_ratio)


def make_optimizer(
    parameters: Iterable[torch.nn.Parameter], config: OptimizerConfig, total_steps: int
):
    """
    Build the AdamW optimizer and its warm-up + cosine scheduler.

    :return: (optimizer, scheduler). Call ``scheduler.step()`` once per optimizer step.
    """
    optimizer = torch.optim.AdamW(
        parameters,
        lr=config.lr,
        betas=tuple(config.betas),
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: warmup_cosine_factor(
            step, config.warmup_steps, total_steps, config.final_lr_ratio
        ),
    )
    return optimizer, scheduler


def optimizer_step(model: torch.nn.Module, optimizer, scheduler, config: OptimizerConfig):
    """Clip gradients (when enabled), step the optimizer and the schedule."""
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    scheduler.step()
    optimizer.zero_grad(set_to_none=True)


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


def check_finite_loss(value: float, step: int, stage: str) -> float:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"{stage} loss diverged at step {step}: {value}")
    return value
