import logging
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, NamedTuple, Optional

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

logger = logging.getLogger(__name__)

LOSS_COMPONENTS = ("l1", "l2", "perceptual", "gan", "codebook", "distill")


@dataclass
class TokenizerLossWeights:
    """
    Weights of the tokenizer loss terms.

    The adversarial term is disabled (0.0) by default; 1.0 is the full-scale value.
    """

    l1: float = 0.2
    l2: float = 2.0
    perceptual: float = 0.1
    gan: float = 0.0
    codebook: float = 1.0
    distill: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"Loss weight {name} must be >= 0, got {value}")

    def scaled(self, factor: float) -> "TokenizerLossWeights":
        return TokenizerLossWeights(
            **{name: value * factor for name, value in asdict(self).items()}
        )


class TokenizerLossResult(NamedTuple):
    total: torch.Tensor
    components: Dict[str, float]
    """Unweighted value of every component."""
    weighted: Dict[str, float]
    """Weighted contribution of every component; these sum to `total`."""


def combine_tokenizer_losses(
    components: Mapping[str, torch.Tensor], weights: TokenizerLossWeights
) -> TokenizerLossResult:
    """
    Weighted sum of the tokenizer loss components.

    Missing components count as zero. Unknown component names raise a KeyError.
    """
    unknown = set(components) - set(LOSS_COMPONENTS)
    if unknown:
        raise KeyError(f"Unknown tokenizer loss components: {sorted(unknown)}")
    total = None
    raw, weighted = {}, {}
    for name in LOSS_COMPONENTS:
        value = components.get(name)
        if value is None:
            raw[name] = weighted[name] = 0.0
            continue
        contribution = getattr(weights, name) * value
        total = contribution if total is None else total + contribution
        raw[name] = float(value.detach())
        weighted[name] = float(contribution.detach())
    if total is None:
        total = torch.zeros(())
    return TokenizerLossResult(total=total, components=raw, weighted=weighted)


class PatchDiscriminator(nn.Module):
    """Small convolutional discriminator producing one logit per image patch."""

    def __init__(self, channels: int = 32, layers: int = 2):
        super().__init__()
        blocks = [nn.Conv2d(3, channels, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        for _ in range(layers - 1):
            blocks += [
                nn.Conv2d(channels, channels * 2, 4, stride=2, padding=1),
                nn.GroupNorm(1, channels * 2),
                nn.LeakyReLU(0.2),
            ]
            channels *= 2
        blocks.append(nn.Conv2d(channels, 1, 3, padding=1))
        self.net = nn.Sequential(*blocks)

    def forward(self, images):
        return self.net(images)


def hinge_discriminator_loss(real_logits, fake_logits) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def hinge_generator_loss(fake_logits) -> torch.Tensor:
    return -fake_logits.mean()


def tokenizer_loss(
    tokenizer,
    images: torch.Tensor,
    semantics: torch.Tensor,
    weights: TokenizerLossWeights,
    discriminator: Optional[PatchDiscriminator] = None,
) -> TokenizerLossResult:
    """
    Full tokenizer objective on a batch of (B, 3, H, W) images and (B, H, W) semantics.

    The perceptual term is the squared L2 distance between the projected features of
    the re-encoded reconstruction and the teacher features. The distillation term is
    one minus the mean cosine similarity of quantized and teacher features. The
    adversarial term is only computed with a discriminator and a positive weight.
    """
    reconstruction, result = tokenizer(images)
    teacher = tokenizer.teacher_features(semantics)
    components = {
        "l1": F.l1_loss(reconstruction, images),
        "l2": F.mse_loss(reconstruction, images),
        "codebook": result.embedding_loss + result.commitment_loss,
    }
    re_encoded = tokenizer.codebook.project(
        rearrange(tokenizer.encode_features(reconstruction), "b f h w -> b h w f")
    )
    teacher_last = rearrange(teacher, "b e h w -> b h w e")
    components["perceptual"] = (re_encoded - teacher_last).pow(2).sum(dim=-1).mean()
    cosine = (result.quantized * teacher).sum(dim=1)
    components["distill"] = 1.0 - cosine.mean()
    if discriminator is not None and weights.gan > 0:
        components["gan"] = hinge_generator_loss(discriminator(reconstruction))
    return combine_tokenizer_losses(components, weights)
