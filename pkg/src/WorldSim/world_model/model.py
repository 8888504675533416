import enum
import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from ..utils.default_data import CAPTION_VOCABULARY
from .sequence import MultimodalSequence, SequenceLayout

logger = logging.getLogger(__name__)


class ConditioningMode(enum.Enum):
    UNCONDITIONED = "unconditioned"
    ACTION_CONDITIONED = "action_conditioned"
    TEXT_CONDITIONED = "text_conditioned"


@dataclass
class WorldModelConfig:
    """
    Architecture of the world model. The context window is exactly one layout of
    ``time_steps * (text_tokens + image_tokens + action_tokens)`` positions.
    """

    time_steps: int = 6
    text_tokens: int = 4
    image_tokens: int = 128
    action_tokens: int = 2
    width: int = 128
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    codebook_size: int = 64
    vocab_size: int = len(CAPTION_VOCABULARY)

    def __post_init__(self):
        SequenceLayout(
            self.time_steps, self.text_tokens, self.image_tokens, self.action_tokens
        )
        for name in ("width", "layers", "heads", "mlp_ratio", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.width % self.heads:
            raise ValueError(
                f"width {self.width} is not divisible by the number of heads {self.heads}"
            )
        if self.codebook_size < 2:
            raise ValueError(f"codebook_size must be at least 2, got {self.codebook_size}")

    @property
    def layout(self) -> SequenceLayout:
        return SequenceLayout(
            self.time_steps, self.text_tokens, self.image_tokens, self.action_tokens
        )


class CausalBlock(nn.Module):
    """Pre-norm transformer block with causal self-attention."""

    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.attention_norm = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.mlp_norm = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x):
        q, k, v = rearrange(
            self.qkv(self.attention_norm(x)),
            "b l (three h e) -> three b h l e",
            three=3,
            h=self.heads,
        )
        attended = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.out(rearrange(attended, "b h l e -> b l (h e)"))
        return x + self.mlp(self.mlp_norm(x))


class WorldModel(nn.Module):
    """
    Autoregressive transformer over interleaved text, image and action streams.

    The input at stream position p is the positional embedding of p plus the content
    embedding of position p - 1 (a learned start vector at p = 0). The logits at p
    therefore depend on the contents of strictly earlier positions and on the position
    itself, and predict the image token held at p.
    """

    def __init__(self, config: WorldModelConfig):
        super().__init__()
        self.config = config
        self.layout = config.layout
        width = config.width
        self.text_embedding = nn.Embedding(config.vocab_size, width)
        self.text_projection = nn.Linear(width, width)
        self.action_projections = nn.ModuleList(
            [nn.Linear(1, width) for _ in range(config.action_tokens)]
        )
        self.image_embedding = nn.Embedding(config.codebook_size, width)
        self.null_text = nn.Parameter(torch.randn(width) * 0.02)
        self.null_action = nn.Parameter(torch.randn(width) * 0.02)
        self.start = nn.Parameter(torch.randn(width) * 0.02)
        self.temporal_embedding = nn.Parameter(torch.randn(config.time_steps, width) * 0.02)
        self.spatial_embedding = nn.Parameter(
            torch.randn(self.layout.step_length, width) * 0.02
        )
        self.blocks = nn.ModuleList(
            [CausalBlock(width, config.heads, config.mlp_ratio) for _ in range(config.layers)]
        )
        self.final_norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, config.codebook_size)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.register_buffer("action_mean", torch.zeros(max(config.action_tokens, 1)))
        self.register_buffer("action_std", torch.ones(max(config.action_tokens, 1)))

    def set_action_statistics(self, mean, std) -> None:
        mean = torch.as_tensor(mean, dtype=torch.float32)
        std = torch.as_tensor(std, dtype=torch.float32)
        if torch.any(std <= 0):
            raise ValueError(f"Action standard deviations must be positive, got {std}")
        self.action_mean.copy_(mean)
        self.action_std.copy_(std)

    def embed_text(self, word_ids: torch.Tensor) -> torch.Tensor:
        """(..., m) word ids to (..., m, d) embeddings."""
        word_ids = torch.as_tensor(word_ids, dtype=torch.long)
        if word_ids.numel() and (
            word_ids.min() < 0 or word_ids.max() >= self.config.vocab_size
        ):
            raise ValueError(
                f"Word ids must lie in [0, {self.config.vocab_size}), got range "
                f"[{int(word_ids.min())}, {int(word_ids.max())}]"
            )
        return self.text_projection(self.text_embedding(word_ids))

    def embed_actions(self, actions: torch.Tensor) -> torch.Tensor:
        """(..., l) raw (speed, curvature) values to (..., l, d) embeddings."""
        actions = torch.as_tensor(actions, dtype=torch.float32)
        if not torch.all(torch.isfinite(actions)):
            raise ValueError("Action values must be finite")
        normalized = (actions - self.action_mean[: actions.shape[-1]]) / self.action_std[
            : actions.shape[-1]
        ]
        slots = [
            projection(normalized[..., index : index + 1])
            for index, projection in enumerate(self.action_projections)
        ]
        return torch.stack(slots, dim=-2)

    def positional_embeddings(self, steps: int) -> torch.Tensor:
        """(steps, m + n + l, d) factorized embeddings temporal[t] + spatial[s]."""
        return self.temporal_embedding[:steps, None, :] + self.spatial_embedding[None]

    def embed_contents(self, seq: MultimodalSequence) -> torch.Tensor:
        """(B, L, d) content embeddings with absent conditioning replaced by nulls."""
        width = self.config.width
        parts = []
        if self.layout.text_tokens:
            text = self.embed_text(seq.text_ids)
            text = torch.where(
                seq.text_present[..., None, None], text, self.null_text.expand_as(text)
            )
            parts.append(text)
        parts.append(self.image_embedding(seq.image_tokens))
        if self.layout.action_tokens:
            actions = self.embed_actions(seq.actions)
            actions = torch.where(
                seq.action_present[..., None, None],
                actions,
                self.null_action.expand_as(actions),
            )
            parts.append(actions)
        contents = torch.cat(parts, dim=2)
        return contents.reshape(seq.batch_size, -1, width)

    def _check_sequence(self, seq: MultimodalSequence):
        if seq.layout != self.layout:
            raise ValueError(f"Sequence layout {seq.layout} does not match {self.layout}")
        if seq.num_steps > self.layout.time_steps or seq.num_steps < 1:
            raise ValueError(
                f"Sequence of {seq.num_steps} steps does not fit the context window of "
                f"{self.layout.time_steps} steps"
            )

    def forward(self, seq: MultimodalSequence) -> torch.Tensor:
        """(B, L, K) logits at every stream position."""
        self._check_sequence(seq)
        contents = self.embed_contents(seq)
        start = self.start.expand(seq.batch_size, 1, -1)
        shifted = torch.cat([start, contents[:, :-1]], dim=1)
        positions = self.positional_embeddings(seq.num_steps).reshape(1, -1, self.config.width)
        x = shifted + positions
        for block in self.blocks:
            x = block(x)
        return self.head(self.final_norm(x))

    def image_logits(self, seq: MultimodalSequence) -> torch.Tensor:
        """(B, steps, n, K) logits at the image positions."""
        logits = self.forward(seq)
        logits = logits.reshape(seq.batch_size, seq.num_steps, self.layout.step_length, -1)
        return logits[:, :, self.layout.image_slots()]


def apply_mode(seq: MultimodalSequence, mode: ConditioningMode) -> MultimodalSequence:
    """Apply one conditioning mode to every example of a batch."""
    keep_text = mode is ConditioningMode.TEXT_CONDITIONED
    keep_actions = mode is ConditioningMode.ACTION_CONDITIONED
    return MultimodalSequence(
        text_ids=seq.text_ids,
        image_tokens=seq.image_tokens,
        actions=seq.actions,
        text_present=seq.text_present & keep_text,
        action_present=seq.action_present & keep_actions,
        layout=seq.layout,
    )


def world_model_loss(
    model: WorldModel,
    batch: MultimodalSequence,
    mode: Optional[ConditioningMode] = None,
) -> torch.Tensor:
    """
    Mean negative log-likelihood in nats per image token.

    Text and action positions carry no loss. When `mode` is given it is applied to the
    whole batch, otherwise the batch's presence masks are used as they are.
    """
    if mode is not None:
        batch = apply_mode(batch, mode)
    logits = model.image_logits(batch)
    return F.cross_entropy(
        rearrange(logits, "b t n k -> (b t n) k"),
        rearrange(batch.image_tokens, "b t n -> (b t n)"),
    )


def count_parameters(model: WorldModel, exclude_embeddings: bool = True) -> int:
    """
    Number of trainable parameters. With `exclude_embeddings` the lookup tables, the
    positional tables and the learned null/start vectors are left out.
    """
    excluded = set()
    if exclude_embeddings:
        for module in model.modules():
            if isinstance(module, nn.Embedding):
                excluded.add(id(module.weight))
        for name in (
            "temporal_embedding",
            "spatial_embedding",
            "null_text",
            "null_action",
            "start",
        ):
            parameter = getattr(model, name, None)
            if parameter is not None:
                excluded.add(id(parameter))
    return sum(
        p.numel() for p in model.parameters() if p.requires_grad and id(p) not in excluded
    )
