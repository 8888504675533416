"""Per-token perplexity of one frame under different sampling strategies."""

import json
import logging
from pathlib import Path
from typing import Dict, Optional, Union

from WorldSim.inference.rollout import (
    PerplexityProfile,
    generate_frame,
    real_frame_perplexity,
)
from WorldSim.plotting.scaling_plot import plot_perplexity_profiles, save_figure
from WorldSim.utils.seeding import torch_generator
from WorldSim.world_model.model import WorldModel
from WorldSim.world_model.sequence import MultimodalSequence

logger = logging.getLogger(__name__)

PERPLEXITY_REPORT_NAME = "perplexity.json"


def perplexity_profiles(
    model: WorldModel,
    sequence: MultimodalSequence,
    k: int = 8,
    seed: int = 0,
) -> Dict[str, PerplexityProfile]:
    """
    Profiles of the last step of a real `sequence`.

    The frame is generated with argmax decoding, sampling from the full distribution
    and top-`k` sampling, each conditioned on the real earlier steps. The "real"
    profile is the teacher-forced perplexity of the real tokens.
    """
    if sequence.batch_size != 1:
        raise ValueError(f"sequence must hold a single example, got {sequence.batch_size}")
    strategies: Dict[str, Optional[int]] = {"argmax": 1, "full": None, f"top-{k}": k}
    profiles = {}
    for name, strategy_k in strategies.items():
        _, profile = generate_frame(
            model,
            sequence,
            strategy_k,
            torch_generator(seed, "perplexity_study", name),
        )
        profiles[name] = profile
    profiles["real"] = real_frame_perplexity(model, sequence, sequence.num_steps - 1)
    for name, profile in profiles.items():
        logger.info("Mean perplexity %s: %s", name, profile.mean())
    return profiles


def write_perplexity_study(
    profiles: Dict[str, PerplexityProfile], directory: Union[str, Path]
) -> Path:
    """Write the profiles as JSON and their figure next to it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    content = {
        name: {"mean": profile.mean(), "max": profile.max(), "values": profile.values.tolist()}
        for name, profile in profiles.items()
    }
    path = directory / PERPLEXITY_REPORT_NAME
    path.write_text(json.dumps(content, indent=2))
    save_figure(
        plot_perplexity_profiles({name: p.values for name, p in profiles.items()}),
        directory / "perplexity.svg",
    )
    return path
