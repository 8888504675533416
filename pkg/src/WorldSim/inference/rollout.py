"""
Token-level rollouts of the world model.

Frames are generated one token at a time without a key/value cache: every draw runs a
full forward pass over the current window. Once the stream would exceed the context
window, whole time steps are evicted from the front.
"""

import logging
import warnings
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch

from ..utils.seeding import torch_generator
from ..utils.text import PAD_ID, tokenize_caption
from ..world_model import MultimodalSequence, WorldModel
from .sampling import (
    GuidanceSchedule,
    cfg_logits,
    guidance_scale,
    sample_token,
    top_k_filter,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerplexityProfile:
    """Per-token perplexity 1/p(token) of one frame, in generation order."""

    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 1.0 - 1e-9):
            raise ValueError("Perplexities must be >= 1")

    def __len__(self) -> int:
        return len(self.values)

    def max(self) -> float:
        return float(np.max(self.values))

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass
class RolloutConfig:
    """
    :ivar horizon: Frames to generate.
    :ivar k: Top-k cutoff, None for sampling from the full distribution, 1 for argmax.
    :ivar seed: Seed of the token draws.
    :ivar context: Single-example prefix of complete time steps, None for no context.
    :ivar positive_prompt: Caption given at every generated step, None for no text.
    :ivar negative_prompt: Caption of the unconditional branch, None for the null text.
    :ivar action_override: (horizon, 2) speed and curvature per generated step, None
        to leave the actions absent.
    :ivar guidance: Guidance schedule, None disables guidance.
    :ivar grid_shape: (h, w) of the returned token frames, None for flat frames.
    """

    horizon: int
    k: Optional[int] = 8
    seed: int = 0
    context: Optional[MultimodalSequence] = None
    positive_prompt: Optional[str] = None
    negative_prompt: Optional[str] = None
    action_override: Optional[np.ndarray] = None
    guidance: Optional[GuidanceSchedule] = None
    grid_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.action_override is not None:
            actions = self.action_override
            if hasattr(actions, "as_array"):
                actions = actions.as_array()
            actions = np.asarray(actions, dtype=np.float32)
            if actions.shape != (self.horizon, 2):
                raise ValueError(
                    f"action_override has shape {actions.shape}, expected ({self.horizon}, 2)"
                )
            self.action_override = actions
        if self.guidance is not None and self.guidance.horizon < self.horizon:
            raise ValueError(
                f"The guidance schedule spans {self.guidance.horizon} frames, the rollout "
                f"generates {self.horizon}"
            )
        if self.context is not None and self.context.batch_size != 1:
            raise ValueError(
                f"context must hold a single example, got {self.context.batch_size}"
            )


class WindowPlan(NamedTuple):
    starts: List[int]
    """Index of the oldest time step in the window of each generated frame."""
    evictions: int
    """Time steps evicted by the end of the rollout."""

    @property
    def first_eviction(self) -> Optional[int]:
        """Index of the first generated frame whose window evicts a step, if any."""
        for frame, start in enumerate(self.starts):
            if start > 0:
                return frame
        return None


def window_plan(context_steps: int, horizon: int, time_steps: int) -> WindowPlan:
    """Sliding-window starts for a rollout keeping the newest `time_steps` steps."""
    if context_steps < 0 or horizon < 1 or time_steps < 1:
        raise ValueError(
            f"Invalid window plan: context_steps {context_steps}, horizon {horizon}, "
            f"time_steps {time_steps}"
        )
    starts = [max(0, context_steps + frame + 1 - time_steps) for frame in range(horizon)]
    return WindowPlan(starts=starts, evictions=max(0, context_steps + horizon - time_steps))


def _image_position(layout, step: int, slot: int) -> int:
    return step * layout.step_length + layout.text_tokens + slot


def generate_frame(
    model: WorldModel,
    prefix: MultimodalSequence,
    k: Optional[int] = 8,
    generator: Optional[torch.Generator] = None,
    guidance: Optional[GuidanceSchedule] = None,
    frame_index: int = 0,
    negative_text_ids: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, PerplexityProfile]:
    """
    Generate the image tokens of the last step of `prefix`.

    The last step's text and actions are taken as given and its image tokens are
    overwritten draw by draw. With `guidance`, each draw combines the conditional logits
    with those of the same stream whose text is nulled (or replaced by
    `negative_text_ids`) using the scheduled scale.

    Returns:
        Tuple[np.ndarray, PerplexityProfile]: The (n,) token ids and their perplexities.
    """
    if prefix.batch_size != 1:
        raise ValueError(f"prefix must hold a single example, got {prefix.batch_size}")
    layout = prefix.layout
    step = prefix.num_steps - 1
    current = replace(prefix, image_tokens=prefix.image_tokens.clone())
    uncond = None
    if guidance is not None:
        if negative_text_ids is None:
            uncond_text, uncond_present = current.text_ids, torch.zeros_like(current.text_present)
        else:
            negative = torch.as_tensor(list(negative_text_ids), dtype=torch.long)
            uncond_text = negative.expand_as(current.text_ids).clone()
            uncond_present = torch.ones_like(current.text_present)
        uncond = replace(current, text_ids=uncond_text, text_present=uncond_present)
    values = np.empty(layout.image_tokens, dtype=np.float64)
    model.eval()
    with torch.no_grad():
        for slot in range(layout.image_tokens):
            position = _image_position(layout, step, slot)
            logits = model(current)[0, position]
            if uncond is not None:
                scale = guidance_scale(slot, frame_index, guidance)
                logits = cfg_logits(logits, model(uncond)[0, position], scale)
            probabilities = top_k_filter(logits, k)
            token = int(sample_token(probabilities, generator))
            values[slot] = 1.0 / float(probabilities[token])
            current.image_tokens[0, step, slot] = token
    return current.image_tokens[0, step].numpy().copy(), PerplexityProfile(values)


def real_frame_perplexity(
    model: WorldModel, sequence: MultimodalSequence, step: int
) -> PerplexityProfile:
    """Teacher-forced perplexity of the real image tokens of `step`."""
    if not 0 <= step < sequence.num_steps:
        raise ValueError(f"step {step} is outside [0, {sequence.num_steps})")
    model.eval()
    with torch.no_grad():
        logits = model.image_logits(sequence.select(slice(0, 1)))[0, step]
        probabilities = torch.softmax(logits.to(torch.float64), dim=-1)
        tokens = sequence.image_tokens[0, step]
        chosen = probabilities.gather(-1, tokens[:, None])[:, 0]
    return PerplexityProfile((1.0 / chosen).numpy())


class RolloutResult(NamedTuple):
    tokens: np.ndarray
    """(horizon, n) or (horizon, h, w) generated token frames."""
    perplexities: List[PerplexityProfile]
    plan: WindowPlan


def _empty_history(layout):
    return {
        "text_ids": torch.zeros(1, 0, layout.text_tokens, dtype=torch.long),
        "image_tokens": torch.zeros(1, 0, layout.image_tokens, dtype=torch.long),
        "actions": torch.zeros(1, 0, layout.action_tokens),
        "text_present": torch.zeros(1, 0, dtype=torch.bool),
        "action_present": torch.zeros(1, 0, dtype=torch.bool),
    }


def rollout(model: WorldModel, config: RolloutConfig) -> RolloutResult:
    """Generate `config.horizon` frames, sliding the window over whole time steps."""
    layout = model.layout
    history = _empty_history(layout)
    context_steps = 0
    if config.context is not None:
        if config.context.layout != layout:
            raise ValueError(
                f"Context layout {config.context.layout} does not match {layout}"
            )
        context_steps = config.context.num_steps
        for name in history:
            history[name] = getattr(config.context, name).clone()
    plan = window_plan(context_steps, config.horizon, layout.time_steps)
    if plan.evictions:
        logger.info(
            "Rollout evicts %s time steps, starting at generated frame %s",
            plan.evictions,
            plan.first_eviction,
        )
    prompt_ids = (
        tokenize_caption(config.positive_prompt, layout.text_tokens)
        if config.positive_prompt is not None
        else [PAD_ID] * layout.text_tokens
    )
    negative_ids = (
        tokenize_caption(config.negative_prompt, layout.text_tokens)
        if config.negative_prompt is not None
        else None
    )
    guidance = config.guidance
    if guidance is not None and config.positive_prompt is None:
        warnings.warn("Guidance needs a positive prompt and is disabled for this rollout")
        guidance = None
    generator = torch_generator(config.seed, "rollout")
    frames, perplexities = [], []
    for frame in range(config.horizon):
        actions = (
            torch.as_tensor(config.action_override[frame, : layout.action_tokens])
            if config.action_override is not None
            else torch.zeros(layout.action_tokens)
        )
        new_step = {
            "text_ids": torch.as_tensor(prompt_ids, dtype=torch.long).reshape(1, 1, -1),
            "image_tokens": torch.zeros(1, 1, layout.image_tokens, dtype=torch.long),
            "actions": actions.reshape(1, 1, -1).to(torch.float32),
            "text_present": torch.tensor([[config.positive_prompt is not None]]),
            "action_present": torch.tensor([[config.action_override is not None]]),
        }
        for name in history:
            history[name] = torch.cat([history[name], new_step[name]], dim=1)
        start = plan.starts[frame]
        window = MultimodalSequence(
            layout=layout, **{name: value[:, start:] for name, value in history.items()}
        )
        tokens, profile = generate_frame(
            model,
            window,
            config.k,
            generator,
            guidance=guidance,
            frame_index=frame,
            negative_text_ids=negative_ids,
        )
        history["image_tokens"][0, -1] = torch.as_tensor(tokens)
        frames.append(tokens)
        perplexities.append(profile)
        logger.debug("Generated frame %s, mean perplexity %s", frame, profile.mean())
    tokens = np.stack(frames)
    if config.grid_shape is not None:
        tokens = tokens.reshape(config.horizon, *config.grid_shape)
    return RolloutResult(tokens=tokens, perplexities=perplexities, plan=plan)


def frame_counts(num_frames: int) -> Tuple[int, int, int]:
    """Frame counts before and after each of the two 2x temporal upsampling stages."""
    if num_frames < 2:
        raise ValueError(f"At least 2 frames are needed, got {num_frames}")
    return num_frames, 2 * num_frames - 1, 4 * num_frames - 3
