import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from ..utils.default_data import SEMANTIC_CLASSES

logger = logging.getLogger(__name__)


@dataclass
class TokenizerConfig:
    """
    Architecture of the image tokenizer.

    :ivar downsample_factor: D, a power of two. Token grids are (H/D, W/D).
    :ivar codebook_size: K, the number of codebook entries.
    :ivar code_dim: e, the dimension of codebook entries.
    :ivar feature_dim: Channel count of the encoder output.
    :ivar base_channels: Channels of the first convolution, doubled per downsampling.
    :ivar commitment_weight: Weight of the commitment term within the codebook loss.
    :ivar num_classes: Number of semantic classes seen by the distillation teacher.
    :ivar teacher_seed: Seed of the frozen teacher embedding table.
    """

    downsample_factor: int = 4
    codebook_size: int = 64
    code_dim: int = 16
    feature_dim: int = 64
    base_channels: int = 32
    commitment_weight: float = 0.25
    num_classes: int = len(SEMANTIC_CLASSES)
    teacher_seed: int = 0

    def __post_init__(self):
        factor = self.downsample_factor
        if factor < 1 or factor & (factor - 1):
            raise ValueError(
                f"downsample_factor must be a power of two, got {self.downsample_factor}"
            )
        if self.codebook_size < 2:
            raise ValueError(f"codebook_size must be at least 2, got {self.codebook_size}")
        for name in ("code_dim", "feature_dim", "base_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.commitment_weight < 0:
            raise ValueError(
                f"commitment_weight must be >= 0, got {self.commitment_weight}"
            )


@dataclass
class TokenGrid:
    """Tokens of one frame: an (H/D, W/D) array of codebook ids."""

    tokens: np.ndarray
    codebook_size: int
    downsample_factor: int

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ValueError(f"A token grid must be 2D, got shape {self.tokens.shape}")
        if self.tokens.size and (
            self.tokens.min() < 0 or self.tokens.max() >= self.codebook_size
        ):
            raise ValueError(
                f"Token ids must lie in [0, {self.codebook_size}), got range "
                f"[{self.tokens.min()}, {self.tokens.max()}]"
            )


class QuantizeResult(NamedTuple):
    tokens: torch.Tensor
    """(B, h, w) codebook ids."""
    quantized: torch.Tensor
    """(B, e, h, w) selected entries with a straight-through gradient to `projected`."""
    projected: torch.Tensor
    """(B, e, h, w) unit-norm projected encoder features."""
    codes: torch.Tensor
    """(B, e, h, w) unit-norm selected entries."""
    embedding_loss: torch.Tensor
    commitment_loss: torch.Tensor


class _ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.GroupNorm(1, channels),
            nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GroupNorm(1, channels),
            nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x):
        return x + self.block(x)


def _level_channels(config: TokenizerConfig) -> list:
    levels = int(math.log2(config.downsample_factor))
    return [
        min(config.base_channels * 2**level, config.base_channels * 4)
        for level in range(levels + 1)
    ]


class Encoder(nn.Module):
    """Convolutional encoder halving the resolution log2(D) times."""

    def __init__(self, config: TokenizerConfig):
        super().__init__()
        channels = _level_channels(config)
        layers = [nn.Conv2d(3, channels[0], 3, padding=1)]
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            layers += [_ResBlock(c_in), nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)]
        layers += [
            _ResBlock(channels[-1]),
            nn.GroupNorm(1, channels[-1]),
            nn.SiLU(),
            nn.Conv2d(channels[-1], config.feature_dim, 1),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, images):
        return self.net(images)


class Decoder(nn.Module):
    """Mirror of :class:`Encoder`, ending in a sigmoid so outputs lie in [0, 1]."""

    def __init__(self, config: TokenizerConfig):
        super().__init__()
        channels = _level_channels(config)[::-1]
        layers = [nn.Conv2d(config.code_dim, channels[0], 3, padding=1), _ResBlock(channels[0])]
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c_in, c_out, 3, padding=1),
                _ResBlock(c_out),
            ]
        layers += [
            nn.GroupNorm(1, channels[-1]),
            nn.SiLU(),
            nn.Conv2d(channels[-1], 3, 3, padding=1),
            nn.Sigmoid(),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, codes):
        return self.net(codes)


class Codebook(nn.Module):
    """K x e table of entries and the projection from encoder features to e dims."""

    def __init__(self, codebook_size: int, code_dim: int, feature_dim: int):
        super().__init__()
        self.codebook_size = codebook_size
        self.entries = nn.Embedding(codebook_size, code_dim)
        nn.init.normal_(self.entries.weight)
        self.projection = nn.Linear(feature_dim, code_dim)

    def normalized_entries(self) -> torch.Tensor:
        return F.normalize(self.entries.weight, dim=-1)

    def project(self, features: torch.Tensor) -> torch.Tensor:
        """Project channels-last features to unit-norm code vectors."""
        return F.normalize(self.projection(features), dim=-1)


def quantize(
    features: torch.Tensor, codebook: Codebook, commitment_weight: float = 0.25
) -> QuantizeResult:
    """
    Nearest-neighbour quantization of (B, F, h, w) encoder features.

    Projected features and entries are both L2-normalized before the distance
    computation; ties go to the lowest entry id.
    """
    if features.shape[1] != codebook.projection.in_features:
        raise ValueError(
            f"Feature dim {features.shape[1]} does not match the codebook projection "
            f"input dim {codebook.projection.in_features}"
        )
    z = codebook.project(rearrange(features, "b f h w -> b h w f"))
    entries = codebook.normalized_entries()
    z_flat = rearrange(z, "b h w e -> (b h w) e")
    distances = (
        z_flat.pow(2).sum(dim=1, keepdim=True)
        + entries.pow(2).sum(dim=1)
        - 2 * z_flat @ entries.T
    )
    # torch.argmin returns the first minimal index
    token_flat = torch.argmin(distances, dim=1)
    tokens = token_flat.view(z.shape[:-1])
    codes = entries[tokens]
    embedding_loss = F.mse_loss(codes, z.detach())
    commitment_loss = commitment_weight * F.mse_loss(z, codes.detach())
    quantized = z + (codes - z).detach()
    return QuantizeResult(
        tokens=tokens,
        quantized=rearrange(quantized, "b h w e -> b e h w"),
        projected=rearrange(z, "b h w e -> b e h w"),
        codes=rearrange(codes, "b h w e -> b e h w"),
        embedding_loss=embedding_loss,
        commitment_loss=commitment_loss,
    )


def majority_classes(
    semantics: torch.Tensor, downsample_factor: int, num_classes: int
) -> torch.Tensor:
    """
    Majority semantic class of every (D x D) cell of (B, H, W) class-id maps. Ties go
    to the lowest class id.
    """
    if semantics.numel() and (semantics.min() < 0 or semantics.max() >= num_classes):
        raise ValueError(
            f"Semantic class ids must lie in [0, {num_classes}), got range "
            f"[{int(semantics.min())}, {int(semantics.max())}]"
        )
    one_hot = rearrange(F.one_hot(semantics.long(), num_classes).float(), "b h w k -> b k h w")
    shares = F.avg_pool2d(one_hot, downsample_factor)
    return shares.argmax(dim=1)


class VQTokenizer(nn.Module):
    """Discrete image autoencoder with a frozen semantic teacher for distillation."""

    def __init__(self, config: TokenizerConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.codebook = Codebook(config.codebook_size, config.code_dim, config.feature_dim)
        self.decoder = Decoder(config)
        generator = torch.Generator().manual_seed(config.teacher_seed)
        table = torch.randn(config.num_classes, config.code_dim, generator=generator)
        self.register_buffer("teacher_table", F.normalize(table, dim=-1))

    @property
    def downsample_factor(self) -> int:
        return self.config.downsample_factor

    def _check_dims(self, height: int, width: int):
        factor = self.config.downsample_factor
        if height % factor or width % factor:
            raise ValueError(
                f"Image of size {height}x{width} is not divisible by the downsample "
                f"factor {factor}"
            )

    def encode_features(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) images to (B, F, H/D, W/D) continuous features."""
        self._check_dims(*images.shape[-2:])
        return self.encoder(images)

    def quantize(self, features: torch.Tensor) -> QuantizeResult:
        return quantize(features, self.codebook, self.config.commitment_weight)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) images to (B, H/D, W/D) token ids."""
        return self.quantize(self.encode_features(images)).tokens

    def decode_quantized(self, quantized: torch.Tensor) -> torch.Tensor:
        return self.decoder(quantized)

    def decode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, h, w) token ids to (B, 3, H, W) images in [0, 1]."""
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.codebook_size):
            raise ValueError(
                f"Token ids must lie in [0, {self.config.codebook_size}), got range "
                f"[{int(tokens.min())}, {int(tokens.max())}]"
            )
        codes = self.codebook.normalized_entries()[tokens.long()]
        return self.decoder(rearrange(codes, "b h w e -> b e h w"))

    def decode_image(self, grid: TokenGrid) -> np.ndarray:
        """Decode one token grid to an (H, W, 3) image."""
        if grid.codebook_size != self.config.codebook_size:
            raise ValueError(
                f"Grid uses a codebook of size {grid.codebook_size}, the tokenizer has "
                f"{self.config.codebook_size}"
            )
        with torch.no_grad():
            image = self.decode_tokens(torch.as_tensor(grid.tokens)[None])[0]
        return rearrange(image, "c h w -> h w c").cpu().numpy()

    def teacher_features(self, semantics: torch.Tensor) -> torch.Tensor:
        """
        Frozen teacher features of (B, H, W) class-id maps: the table entry of the
        majority class of every cell, shaped (B, e, H/D, W/D).
        """
        self._check_dims(*semantics.shape[-2:])
        majority = majority_classes(
            semantics, self.config.downsample_factor, self.config.num_classes
        )
        return rearrange(self.teacher_table[majority], "b h w e -> b e h w")

    def forward(self, images: torch.Tensor):
        result = self.quantize(self.encode_features(images))
        return self.decode_quantized(result.quantized), result


def frames_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """(T, H, W, 3) frames to a (T, 3, H, W) float tensor."""
    return rearrange(torch.as_tensor(np.asarray(frames, dtype=np.float32)), "t h w c -> t c h w")


def tokenize_frames(
    tokenizer: VQTokenizer, frames: np.ndarray, batch_size: int = 64
) -> np.ndarray:
    """Token ids of (T, H, W, 3) frames, shaped (T, H/D, W/D)."""
    tokenizer.eval()
    images = frames_to_tensor(frames)
    grids = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            grids.append(tokenizer.encode(images[start : start + batch_size]))
    return torch.cat(grids).numpy().astype(np.int64)


def bit_compression(height: int, width: int, downsample_factor: int, codebook_size: int):
    """
    Ratio of raw 24-bit RGB bits to token bits, with log2(K) bits per token.

    Args:
        height (int): Image height.
        width (int): Image width.
        downsample_factor (int): D.
        codebook_size (int): K.

    Returns:
        float: (H * W * 3 * 8) / ((H / D) * (W / D) * log2(K)).
    """
    if codebook_size < 2:
        raise ValueError(f"codebook_size must be at least 2, got {codebook_size}")
    if downsample_factor < 1 or height % downsample_factor or width % downsample_factor:
        raise ValueError(
            f"Image of size {height}x{width} is not divisible by the downsample factor "
            f"{downsample_factor}"
        )
    tokens = (height // downsample_factor) * (width // downsample_factor)
    return (height * width * 3 * 8) / (tokens * math.log2(codebook_size))


def codebook_usage(token_stream: Sequence[int], codebook_size: int) -> float:
    """Fraction of the K codebook ids that occur in the stream."""
    tokens = np.asarray(token_stream).ravel()
    if tokens.size == 0:
        raise ValueError("Cannot compute codebook usage of an empty token stream")
    return len(np.unique(tokens)) / codebook_size


def within_class_similarity(
    quantized: torch.Tensor,
    semantics: torch.Tensor,
    downsample_factor: int,
    num_classes: int = len(SEMANTIC_CLASSES),
) -> float:
    """
    Mean within-class cosine similarity of quantized features.

    Cells are grouped by their majority semantic class. For each class with at least
    two cells the mean pairwise cosine similarity (excluding self pairs) is computed;
    the result is the unweighted mean over classes.
    """
    majority = majority_classes(semantics, downsample_factor, num_classes).reshape(-1)
    vectors = F.normalize(rearrange(quantized, "b e h w -> (b h w) e").double(), dim=-1)
    similarities = []
    for class_id in range(num_classes):
        members = vectors[majority == class_id]
        count = members.shape[0]
        if count < 2:
            continue
        total = members.sum(dim=0)
        pairwise = (total.dot(total) - count) / (count * (count - 1))
        similarities.append(float(pairwise))
    if not similarities:
        raise ValueError("No semantic class covers at least two cells")
    return float(np.mean(similarities))
