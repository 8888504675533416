"""
Interleaved text, image and action streams.

Every time step occupies ``m + n + l`` consecutive stream slots in the order text, image,
action. The modality of a position is determined by its slot index alone.
"""

import enum
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
import torch

from ..utils.text import PAD_ID, tokenize_caption

logger = logging.getLogger(__name__)


class Modality(enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    ACTION = "action"


def sequence_length(time_steps: int, text_tokens: int, image_tokens: int, action_tokens: int):
    """Total stream length T * (m + n + l)."""
    for name, value in (
        ("time_steps", time_steps),
        ("text_tokens", text_tokens),
        ("image_tokens", image_tokens),
        ("action_tokens", action_tokens),
    ):
        if value < 0:
            raise ValueError(f"{name} must be non-negative, got {value}")
    return time_steps * (text_tokens + image_tokens + action_tokens)


@dataclass(frozen=True)
class SequenceLayout:
    """
    :ivar time_steps: T, steps in the context window.
    :ivar text_tokens: m, text slots per step.
    :ivar image_tokens: n, image slots per step.
    :ivar action_tokens: l, action slots per step (0, or 2 for speed and curvature).
    """

    time_steps: int = 6
    text_tokens: int = 4
    image_tokens: int = 128
    action_tokens: int = 2

    def __post_init__(self):
        if self.time_steps < 1:
            raise ValueError(f"time_steps must be positive, got {self.time_steps}")
        if self.image_tokens < 1:
            raise ValueError(f"image_tokens must be positive, got {self.image_tokens}")
        if self.text_tokens < 0:
            raise ValueError(f"text_tokens must be non-negative, got {self.text_tokens}")
        if self.action_tokens not in (0, 2):
            raise ValueError(
                f"action_tokens must be 0 or 2 (speed, curvature), got {self.action_tokens}"
            )

    @property
    def step_length(self) -> int:
        return self.text_tokens + self.image_tokens + self.action_tokens

    def sequence_length(self, steps: Optional[int] = None) -> int:
        steps = self.time_steps if steps is None else steps
        return sequence_length(steps, self.text_tokens, self.image_tokens, self.action_tokens)

    def modality(self, slot: int) -> Modality:
        if not 0 <= slot < self.step_length:
            raise ValueError(f"Slot {slot} is outside [0, {self.step_length})")
        if slot < self.text_tokens:
            return Modality.TEXT
        if slot < self.text_tokens + self.image_tokens:
            return Modality.IMAGE
        return Modality.ACTION

    def image_slots(self) -> slice:
        return slice(self.text_tokens, self.text_tokens + self.image_tokens)

    def position(self, index: int):
        """(time index, slot index) of a flat stream position."""
        return divmod(index, self.step_length)


@dataclass
class MultimodalSequence:
    """
    A batch of interleaved streams with ``steps <= T`` time steps.

    :ivar text_ids: (B, steps, m) word ids.
    :ivar image_tokens: (B, steps, n) codebook ids, row-major within a step.
    :ivar actions: (B, steps, l) raw (speed, curvature) values.
    :ivar text_present: (B, steps) False where the text is replaced by the null embedding.
    :ivar action_present: (B, steps) False where the actions are replaced by the null
        embedding.
    """

    text_ids: torch.Tensor
    image_tokens: torch.Tensor
    actions: torch.Tensor
    text_present: torch.Tensor
    action_present: torch.Tensor
    layout: SequenceLayout

    def __post_init__(self):
        batch, steps = self.image_tokens.shape[:2]
        expected = {
            "text_ids": (batch, steps, self.layout.text_tokens),
            "image_tokens": (batch, steps, self.layout.image_tokens),
            "actions": (batch, steps, self.layout.action_tokens),
            "text_present": (batch, steps),
            "action_present": (batch, steps),
        }
        for name, shape in expected.items():
            if tuple(getattr(self, name).shape) != shape:
                raise ValueError(
                    f"{name} has shape {tuple(getattr(self, name).shape)}, expected {shape}"
                )
        if steps > self.layout.time_steps:
            raise ValueError(
                f"Sequence has {steps} steps, the layout allows {self.layout.time_steps}"
            )

    @property
    def batch_size(self) -> int:
        return self.image_tokens.shape[0]

    @property
    def num_steps(self) -> int:
        return self.image_tokens.shape[1]

    def __len__(self) -> int:
        return self.layout.sequence_length(self.num_steps)

    def select(self, index) -> "MultimodalSequence":
        """Sub-batch by an index tensor or slice along the batch axis."""
        return replace(
            self,
            text_ids=self.text_ids[index],
            image_tokens=self.image_tokens[index],
            actions=self.actions[index],
            text_present=self.text_present[index],
            action_present=self.action_present[index],
        )

    def steps(self, start: int, stop: Optional[int] = None) -> "MultimodalSequence":
        """The time steps [start, stop) of every example."""
        window = slice(start, stop)
        return replace(
            self,
            text_ids=self.text_ids[:, window],
            image_tokens=self.image_tokens[:, window],
            actions=self.actions[:, window],
            text_present=self.text_present[:, window],
            action_present=self.action_present[:, window],
        )


def assemble_sequence(
    captions: Sequence[Optional[str]],
    token_grids: Sequence[np.ndarray],
    actions: Optional[np.ndarray],
    layout: SequenceLayout,
) -> MultimodalSequence:
    """
    Build a single-example stream from per-step captions, token grids and actions.

    A caption of None marks the step's text as absent; actions of None mark every
    step's actions as absent. Image tokens are flattened row-major within a step.
    """
    steps = len(token_grids)
    if len(captions) != steps:
        raise ValueError(f"Got {len(captions)} captions for {steps} token grids")
    if actions is not None and len(actions) != steps:
        raise ValueError(f"Got {len(actions)} action rows for {steps} token grids")
    if steps > layout.time_steps:
        raise ValueError(f"Got {steps} steps, the layout allows {layout.time_steps}")
    text = np.full((steps, layout.text_tokens), PAD_ID, dtype=np.int64)
    text_present = np.zeros(steps, dtype=bool)
    for t, caption in enumerate(captions):
        if caption is not None:
            text[t] = tokenize_caption(caption, layout.text_tokens)
            text_present[t] = True
    image = np.zeros((steps, layout.image_tokens), dtype=np.int64)
    for t, grid in enumerate(token_grids):
        flat = np.asarray(grid).reshape(-1)
        if flat.size != layout.image_tokens:
            raise ValueError(
                f"Token grid of step {t} has {flat.size} tokens, the layout expects "
                f"{layout.image_tokens}"
            )
        image[t] = flat
    action_values = np.zeros((steps, layout.action_tokens), dtype=np.float32)
    action_present = np.zeros(steps, dtype=bool)
    if actions is not None and layout.action_tokens:
        actions = np.asarray(actions, dtype=np.float32)
        if actions.shape != (steps, layout.action_tokens):
            raise ValueError(
                f"actions have shape {actions.shape}, expected "
                f"{(steps, layout.action_tokens)}"
            )
        action_values = actions
        action_present[:] = True
    return MultimodalSequence(
        text_ids=torch.as_tensor(text)[None],
        image_tokens=torch.as_tensor(image)[None],
        actions=torch.as_tensor(action_values)[None],
        text_present=torch.as_tensor(text_present)[None],
        action_present=torch.as_tensor(action_present)[None],
        layout=layout,
    )


def concatenate_sequences(sequences: List[MultimodalSequence]) -> MultimodalSequence:
    """Stack sequences with equal layout and step count into one batch."""
    if not sequences:
        raise ValueError("Cannot concatenate an empty list of sequences")
    layout = sequences[0].layout
    if any(seq.layout != layout for seq in sequences):
        raise ValueError("All sequences must share the same layout")
    return MultimodalSequence(
        text_ids=torch.cat([s.text_ids for s in sequences]),
        image_tokens=torch.cat([s.image_tokens for s in sequences]),
        actions=torch.cat([s.actions for s in sequences]),
        text_present=torch.cat([s.text_present for s in sequences]),
        action_present=torch.cat([s.action_present for s in sequences]),
        layout=layout,
    )
