import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch

logger = logging.getLogger(__name__)

TOKEN_PROFILES = ("linear", "constant")
FRAME_PROFILES = ("cosine", "flat")


def default_top_k(codebook_size: int, reference_k: int = 50, reference_size: int = 8192) -> int:
    """Top-k cutoff scaled with the codebook size, at least 1."""
    return max(1, round(reference_k * codebook_size / reference_size))


def top_k_filter(logits: torch.Tensor, k: Optional[int]) -> torch.Tensor:
    """
    Probabilities renormalized over the k largest logits of the last axis.

    Ties at the boundary go to the lower token id. Logits of -inf never enter the
    support, so the support holds min(k, number of finite logits) tokens. With `k` None
    the full softmax is returned. The result is float64.
    """
    size = logits.shape[-1]
    if k is not None and not 1 <= k <= size:
        raise ValueError(f"k must be in [1, {size}], got {k}")
    logits = logits.to(torch.float64)
    finite = torch.isfinite(logits)
    if not torch.all(finite.any(dim=-1)):
        raise ValueError("Every distribution needs at least one finite logit")
    keep = finite
    if k is not None:
        order = torch.sort(logits, dim=-1, descending=True, stable=True).indices
        top = torch.zeros_like(finite).scatter(-1, order[..., :k], True)
        keep = keep & top
    masked = torch.where(keep, logits, torch.full_like(logits, -math.inf))
    return torch.softmax(masked, dim=-1)


def cfg_logits(cond: torch.Tensor, uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """
    Classifier-free guidance: (1 + scale) * cond - scale * uncond.

    A scale of 0 returns a copy of `cond`. Pass the negative-prompt logits as `uncond`
    for negative prompting.
    """
    if cond.shape != uncond.shape:
        raise ValueError(
            f"Conditional logits {tuple(cond.shape)} and unconditional logits "
            f"{tuple(uncond.shape)} differ in shape"
        )
    if scale == 0:
        return cond.clone()
    return cond + scale * (cond - uncond)


def sample_token(probabilities: torch.Tensor, generator: Optional[torch.Generator] = None):
    """Draw one token id per row of (..., K) probabilities."""
    flat = probabilities.reshape(-1, probabilities.shape[-1])
    return torch.multinomial(flat, 1, generator=generator).reshape(probabilities.shape[:-1])


@dataclass(frozen=True)
class GuidanceSchedule:
    """
    Guidance scale over the tokens of a frame and over the frames of a rollout.

    :ivar s_hi: Scale at the first token.
    :ivar s_lo: Scale at the last token for the linear token profile.
    :ivar tokens: n, image tokens per frame.
    :ivar horizon: Frames the schedule spans.
    :ivar floor: Frame multiplier reached at the last frame by the cosine profile.
    :ivar plateau: Leading frames held at multiplier 1 before the cosine decay.
    :ivar token_profile: "linear" from s_hi to s_lo, or "constant" at s_hi.
    :ivar frame_profile: "cosine" decay to `floor`, or "flat" at 1.
    """

    s_hi: float = 2.0
    s_lo: float = 0.0
    tokens: int = 128
    horizon: int = 1
    floor: float = 0.25
    plateau: int = 0
    token_profile: str = "linear"
    frame_profile: str = "cosine"

    def __post_init__(self):
        for name in ("s_hi", "s_lo", "floor"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)}")
        if self.tokens < 1 or self.horizon < 1:
            raise ValueError(
                f"tokens and horizon must be positive, got {self.tokens} and {self.horizon}"
            )
        if self.plateau < 0:
            raise ValueError(f"plateau must be >= 0, got {self.plateau}")
        if self.token_profile not in TOKEN_PROFILES:
            raise ValueError(
                f"token_profile must be one of {TOKEN_PROFILES}, got {self.token_profile}"
            )
        if self.frame_profile not in FRAME_PROFILES:
            raise ValueError(
                f"frame_profile must be one of {FRAME_PROFILES}, got {self.frame_profile}"
            )

    def token_scale(self, token_index: int) -> float:
        if not 0 <= token_index < self.tokens:
            raise ValueError(f"token_index {token_index} is outside [0, {self.tokens})")
        if self.token_profile == "constant" or self.tokens == 1:
            return self.s_hi
        return self.s_hi + (self.s_lo - self.s_hi) * token_index / (self.tokens - 1)

    def frame_multiplier(self, frame_index: int) -> float:
        if not 0 <= frame_index < self.horizon:
            raise ValueError(f"frame_index {frame_index} is outside [0, {self.horizon})")
        last = self.horizon - 1
        if self.frame_profile == "flat" or frame_index < self.plateau or last <= self.plateau:
            return 1.0
        progress = (frame_index - self.plateau) / (last - self.plateau)
        return self.floor + (1.0 - self.floor) * 0.5 * (1.0 + math.cos(math.pi * progress))

    def samples(self):
        """Scales at the first, middle and last token of every frame."""
        token_indices = sorted({0, (self.tokens - 1) // 2, self.tokens - 1})
        return [
            [guidance_scale(i, f, self) for i in token_indices] for f in range(self.horizon)
        ]


def guidance_scale(token_index: int, frame_index: int, schedule: GuidanceSchedule) -> float:
    """token_profile(token_index) * frame_profile(frame_index)."""
    return schedule.token_scale(token_index) * schedule.frame_multiplier(frame_index)
