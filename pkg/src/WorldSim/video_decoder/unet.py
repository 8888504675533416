import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


@dataclass
class DecoderConfig:
    """
    Architecture of the video decoder.

    :ivar max_frames: Longest clip the decoder accepts (T').
    :ivar height: Frame height in pixels.
    :ivar width: Frame width in pixels.
    :ivar codebook_size: K of the tokenizer. Id K is the null token.
    :ivar downsample_factor: D of the tokenizer.
    :ivar base_channels: Channels at full resolution, doubled at the interior resolution.
    :ivar token_dim: Dimension of the conditioning token embedding.
    :ivar time_dim: Dimension of the diffusion-time embedding.
    :ivar heads: Attention heads of the spatial and temporal layers.
    :ivar schedule_offset: Offset of the cosine noise schedule.
    :ivar sampling_steps: Default number of DDIM steps.
    """

    max_frames: int = 3
    height: int = 32
    width: int = 64
    codebook_size: int = 64
    downsample_factor: int = 4
    base_channels: int = 32
    token_dim: int = 16
    time_dim: int = 64
    heads: int = 4
    schedule_offset: float = 0.008
    sampling_steps: int = 20

    def __post_init__(self):
        for name in (
            "max_frames",
            "height",
            "width",
            "codebook_size",
            "downsample_factor",
            "base_channels",
            "token_dim",
            "heads",
            "sampling_steps",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.time_dim < 4 or self.time_dim % 2:
            raise ValueError(f"time_dim must be an even number >= 4, got {self.time_dim}")
        for name in ("height", "width"):
            size = getattr(self, name)
            if size % 2 or size % self.downsample_factor:
                raise ValueError(
                    f"{name} {size} must be divisible by 2 and by the downsample factor "
                    f"{self.downsample_factor}"
                )
        if (2 * self.base_channels) % self.heads:
            raise ValueError(
                f"2 * base_channels ({2 * self.base_channels}) is not divisible by "
                f"heads ({self.heads})"
            )
        NoiseSchedule(self.schedule_offset)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (B,) diffusion times scaled to [0, 1000]."""
    half = dim // 2
    frequencies = torch.exp(
        torch.arange(half, dtype=torch.float32) * -(math.log(10000) / (half - 1))
    )
    angles = 1000.0 * t.float()[:, None] * frequencies[None]
    return torch.cat([angles.sin(), angles.cos()], dim=-1)


class _TimeResBlock(nn.Module):
    """Residual block with a scale-shift conditioning on the time embedding."""

    def __init__(self, c_in: int, c_out: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time = nn.Sequential(nn.SiLU(), nn.Linear(time_dim, 2 * c_out))
        self.norm2 = nn.GroupNorm(1, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, time):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = rearrange(self.time(time), "n c -> n c 1 1").chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class _Attention(nn.Module):
    """Pre-norm multi-head self-attention over (N, L, C) tokens with a residual."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x):
        q, k, v = rearrange(
            self.qkv(self.norm(x)), "n l (three h e) -> three n h l e", three=3, h=self.heads
        )
        attended = F.scaled_dot_product_attention(q, k, v)
        return x + self.out(rearrange(attended, "n h l e -> n l (h e)"))


class VideoUNet(nn.Module):
    """
    Denoiser predicting v for every frame of a clip.

    Each frame is processed at full and half resolution with convolutions. At half
    resolution, spatial attention mixes positions within a frame and temporal attention
    mixes frames at the same position. With the temporal layers off, frames are
    processed independently.

    Inputs per frame: its pixels (clean for context frames, noised for denoised
    frames), its conditioning tokens embedded and upsampled to the pixel grid, and the
    frame-mask bit.
    """

    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.schedule = NoiseSchedule(config.schedule_offset)
        self.null_id = config.codebook_size
        channels, time_dim = config.base_channels, config.time_dim
        self.token_embedding = nn.Embedding(config.codebook_size + 1, config.token_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.frame_embedding = nn.Parameter(torch.randn(config.max_frames, time_dim) * 0.02)
        self.input = nn.Conv2d(3 + config.token_dim + 1, channels, 3, padding=1)
        self.down_block = _TimeResBlock(channels, channels, time_dim)
        self.downsample = nn.Conv2d(channels, 2 * channels, 3, stride=2, padding=1)
        self.mid_block1 = _TimeResBlock(2 * channels, 2 * channels, time_dim)
        self.spatial_attention = _Attention(2 * channels, config.heads)
        self.temporal_attention = _Attention(2 * channels, config.heads)
        self.mid_block2 = _TimeResBlock(2 * channels, 2 * channels, time_dim)
        self.upsample = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * channels, channels, 3, padding=1),
        )
        self.up_block = _TimeResBlock(2 * channels, channels, time_dim)
        self.output = nn.Sequential(
            nn.GroupNorm(1, channels), nn.SiLU(), nn.Conv2d(channels, 3, 3, padding=1)
        )

    def _check_inputs(self, x, t, tokens, frame_mask):
        config = self.config
        if x.ndim != 5 or tuple(x.shape[2:]) != (3, config.height, config.width):
            raise ValueError(
                f"x has shape {tuple(x.shape)}, expected (B, T', 3, {config.height}, "
                f"{config.width})"
            )
        batch, frames = x.shape[:2]
        if frames > config.max_frames:
            raise ValueError(f"Clip of {frames} frames exceeds max_frames {config.max_frames}")
        grid = (config.height // config.downsample_factor, config.width // config.downsample_factor)
        if tuple(tokens.shape) != (batch, frames) + grid:
            raise ValueError(
                f"tokens have shape {tuple(tokens.shape)}, expected {(batch, frames) + grid}"
            )
        if tuple(frame_mask.shape) != (batch, frames):
            raise ValueError(
                f"frame_mask has shape {tuple(frame_mask.shape)}, expected {(batch, frames)}"
            )
        if tuple(t.shape) != (batch,):
            raise ValueError(f"t has shape {tuple(t.shape)}, expected ({batch},)")

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        tokens: torch.Tensor,
        frame_mask: torch.Tensor,
        temporal: bool = True,
    ) -> torch.Tensor:
        """
        Args:
            x (torch.Tensor): (B, T', 3, H, W) pixels in [-1, 1] model space.
            t (torch.Tensor): (B,) diffusion times.
            tokens (torch.Tensor): (B, T', H/D, W/D) token ids, K for null.
            frame_mask (torch.Tensor): (B, T') True for frames being denoised.
            temporal (bool): Whether the temporal attention runs.

        Returns:
            torch.Tensor: (B, T', 3, H, W) predicted v.
        """
        self._check_inputs(x, t, tokens, frame_mask)
        batch, frames = x.shape[:2]
        token_features = rearrange(self.token_embedding(tokens), "b f h w e -> (b f) e h w")
        token_features = F.interpolate(
            token_features, scale_factor=self.config.downsample_factor, mode="nearest"
        )
        mask_channel = rearrange(frame_mask.to(x.dtype), "b f -> (b f) 1 1 1").expand(
            -1, 1, *x.shape[3:]
        )
        pixels = rearrange(x, "b f c h w -> (b f) c h w")
        h = self.input(torch.cat([pixels, token_features, mask_channel], dim=1))

        time = self.time_mlp(timestep_embedding(t, self.config.time_dim))
        time = time.repeat_interleave(frames, dim=0) + self.frame_embedding[:frames].repeat(
            batch, 1
        )

        skip = self.down_block(h, time)
        h = self.mid_block1(self.downsample(skip), time)
        height, width = h.shape[2:]
        h = rearrange(h, "n c h w -> n (h w) c")
        h = self.spatial_attention(h)
        if temporal:
            h = rearrange(h, "(b f) l c -> (b l) f c", b=batch)
            h = self.temporal_attention(h)
            h = rearrange(h, "(b l) f c -> (b f) l c", b=batch)
        h = rearrange(h, "n (h w) c -> n c h w", h=height, w=width)
        h = self.mid_block2(h, time)
        h = self.up_block(torch.cat([self.upsample(h), skip], dim=1), time)
        return rearrange(self.output(h), "(b f) c h w -> b f c h w", b=batch)


def frames_to_model_space(frames: np.ndarray) -> torch.Tensor:
    """(..., T', H, W, 3) pixels in [0, 1] to (..., T', 3, H, W) values in [-1, 1]."""
    tensor = torch.as_tensor(np.asarray(frames, dtype=np.float32))
    return rearrange(tensor, "... h w c -> ... c h w") * 2.0 - 1.0


def model_space_to_frames(x: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`frames_to_model_space`, clipped to [0, 1]."""
    pixels = ((x.detach().float() + 1.0) / 2.0).clamp(0.0, 1.0)
    return rearrange(pixels, "... c h w -> ... h w c").cpu().numpy()
