"""
Action control check: two rollouts from the same context and seed that differ only
in their steering, one at the leftmost and one at the rightmost curvature.
"""

import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from WorldSim.inference.rollout import RolloutConfig, rollout
from WorldSim.world_model.model import WorldModel
from WorldSim.world_model.sequence import MultimodalSequence

logger = logging.getLogger(__name__)


class ActionSensitivityResult(NamedTuple):
    left_tokens: np.ndarray
    right_tokens: np.ndarray
    hamming: List[int]
    """Differing token positions of every generated frame."""

    def diverged_by(self, frame: int) -> bool:
        """Whether any frame up to and including `frame` differs."""
        return any(distance > 0 for distance in self.hamming[: frame + 1])


def hamming_distances(first: np.ndarray, second: np.ndarray) -> List[int]:
    """Per-frame count of differing tokens of two (N, ...) token arrays."""
    first, second = np.asarray(first), np.asarray(second)
    if first.shape != second.shape:
        raise ValueError(f"Token arrays differ in shape: {first.shape} and {second.shape}")
    return [int(d) for d in (first != second).reshape(len(first), -1).sum(axis=1)]


def action_sensitivity(
    model: WorldModel,
    context: Optional[MultimodalSequence],
    horizon: int = 4,
    speed: float = 8.0,
    curvature_range: Sequence[float] = (-0.02, 0.02),
    k: Optional[int] = 8,
    seed: int = 0,
    prompt: Optional[str] = None,
) -> ActionSensitivityResult:
    """Roll out hard-left and hard-right steering and compare the token frames."""
    low, high = curvature_range
    tokens = {}
    for name, curvature in (("left", low), ("right", high)):
        actions = np.tile(np.array([speed, curvature], dtype=np.float32), (horizon, 1))
        tokens[name] = rollout(
            model,
            RolloutConfig(
                horizon=horizon,
                k=k,
                seed=seed,
                context=context,
                positive_prompt=prompt,
                action_override=actions,
            ),
        ).tokens
    hamming = hamming_distances(tokens["left"], tokens["right"])
    logger.info("Hamming distances of hard-left vs hard-right frames: %s", hamming)
    return ActionSensitivityResult(tokens["left"], tokens["right"], hamming)
