import logging
from typing import Optional

import numpy as np
import torch

from ..utils.validation import validate_unit_interval
from .schedule import ddim_step
from .tasks import DecoderTaskMask, apply_token_mask
from .unet import VideoUNet

logger = logging.getLogger(__name__)


def denoise(
    model: VideoUNet,
    x_t: torch.Tensor,
    t: float,
    tokens: torch.Tensor,
    frame_mask: torch.Tensor,
    temporal: bool = True,
) -> torch.Tensor:
    """v prediction for a whole batch at the scalar diffusion time `t`."""
    times = torch.full((x_t.shape[0],), float(t), dtype=x_t.dtype)
    return model(x_t, times, tokens, frame_mask, temporal=temporal)


def mixed_denoise(
    model: VideoUNet,
    x_t: torch.Tensor,
    t: float,
    tokens: torch.Tensor,
    frame_mask: torch.Tensor,
    weight: float = 0.5,
    mix_probability: float = 0.25,
    rng: Optional[np.random.Generator] = None,
    temporal: bool = True,
) -> torch.Tensor:
    """
    Video-mode v prediction, blended with probability `mix_probability` with the
    per-frame image-mode prediction as ``weight * image + (1 - weight) * video``.

    One uniform draw is taken from `rng` per call whether or not the blend triggers.
    """
    validate_unit_interval("weight", weight)
    validate_unit_interval("mix_probability", mix_probability)
    rng = np.random.default_rng(0) if rng is None else rng
    draw = rng.random()
    video = denoise(model, x_t, t, tokens, frame_mask, temporal=temporal)
    if draw >= mix_probability or weight == 0.0:
        return video
    image = denoise(model, x_t, t, tokens, frame_mask, temporal=False)
    return weight * image + (1.0 - weight) * video


def sample_clip(
    model: VideoUNet,
    tokens: torch.Tensor,
    mask: DecoderTaskMask,
    context: Optional[torch.Tensor] = None,
    steps: Optional[int] = None,
    generator: Optional[torch.Generator] = None,
    weight: float = 0.5,
    mix_probability: float = 0.25,
    rng: Optional[np.random.Generator] = None,
) -> torch.Tensor:
    """
    Run a deterministic DDIM chain from t = 1 to t = 0 for the denoised frames of a clip.

    Args:
        model (VideoUNet): The (EMA) decoder.
        tokens (torch.Tensor): (B, T', h, w) conditioning tokens. Frames whose token-mask
            bit is off are nulled.
        mask (DecoderTaskMask): Which frames are denoised and which get tokens.
        context (Optional[torch.Tensor]): (B, T', 3, H, W) model-space pixels. Values at
            context frames are used as-is and returned unchanged.
        steps (Optional[int]): DDIM steps, the decoder config default when None.
        generator (Optional[torch.Generator]): Generator of the initial noise.
        weight (float): Image-mode weight of the mixed denoiser.
        mix_probability (float): Probability of mixing per diffusion step.
        rng (Optional[np.random.Generator]): Generator of the mixing draws.

    Returns:
        torch.Tensor: (B, T', 3, H, W) model-space clip.
    """
    config = model.config
    steps = config.sampling_steps if steps is None else steps
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    batch, frames = tokens.shape[:2]
    if frames != mask.num_frames:
        raise ValueError(f"tokens cover {frames} frames, the mask has {mask.num_frames}")
    shape = (batch, frames, 3, config.height, config.width)
    if mask.context_indices and context is None:
        raise ValueError(f"{mask.task.value} needs context frames but none were given")
    base = torch.zeros(shape) if context is None else context.to(torch.float32)
    if tuple(base.shape) != shape:
        raise ValueError(f"context has shape {tuple(base.shape)}, expected {shape}")
    frame_mask = mask.frame_tensor(batch)
    keep = frame_mask[..., None, None, None]
    tokens = apply_token_mask(tokens, mask.token_tensor(batch), model.null_id)
    rng = np.random.default_rng(0) if rng is None else rng
    times = np.linspace(1.0, 0.0, steps + 1)
    model.eval()
    with torch.no_grad():
        x = torch.where(keep, torch.randn(shape, generator=generator), base)
        for t, t_next in zip(times[:-1], times[1:]):
            v = mixed_denoise(
                model,
                x,
                t,
                tokens,
                frame_mask,
                weight,
                mix_probability,
                rng,
                temporal=mask.temporal,
            )
            x = torch.where(keep, ddim_step(x, v, t, t_next, model.schedule), base)
    logger.debug("Sampled %s clips of %s frames in %s steps", batch, frames, steps)
    return x
