import logging
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import torch
from torch import nn

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .tokenizer.vq_tokenizer import TokenizerConfig, VQTokenizer
from .video_decoder.unet import DecoderConfig, VideoUNet
from .world_model.model import WorldModel, WorldModelConfig

logger = logging.getLogger(__name__)

MODEL_CLASSES = {
    "tokenizer": (VQTokenizer, TokenizerConfig),
    "world_model": (WorldModel, WorldModelConfig),
    "decoder": (VideoUNet, DecoderConfig),
}
WEIGHT_SETS = ("live", "ema")


def model_kind(model: nn.Module) -> str:
    """Checkpoint kind of a model instance."""
    for kind, (model_class, _) in MODEL_CLASSES.items():
        if isinstance(model, model_class):
            return kind
    raise TypeError(f"No checkpoint kind for {type(model).__name__}")


def select_weights(arrays: Mapping[str, torch.Tensor], weights: str = "ema"):
    """
    The state dict of one weight set. Checkpoints holding both live and EMA weights
    keep them under ``live/`` and ``ema/`` prefixes; single-set checkpoints are returned
    unchanged whatever `weights` asks for.
    """
    if weights not in WEIGHT_SETS:
        raise ValueError(f"weights must be one of {WEIGHT_SETS}, got {weights}")
    if not any(name.split("/", 1)[0] in WEIGHT_SETS for name in arrays):
        return dict(arrays)
    prefix = weights + "/"
    selected = {
        name[len(prefix) :]: tensor for name, tensor in arrays.items() if name.startswith(prefix)
    }
    if not selected:
        raise CheckpointError(f"Checkpoint holds no {weights} weights")
    return selected


def model_from_checkpoint(checkpoint: Checkpoint, weights: str = "ema") -> nn.Module:
    """
    Build the model class named by the checkpoint kind from the stored configuration
    and load its arrays. The model is returned in evaluation mode.

    :param weights: "ema" or "live", for checkpoints holding both sets.
    """
    try:
        model_class, config_class = MODEL_CLASSES[checkpoint.kind]
    except KeyError as e:
        raise CheckpointError(f"Unknown checkpoint kind {checkpoint.kind}") from e
    try:
        config = config_class(**checkpoint.config)
    except TypeError as e:
        raise CheckpointError(
            f"Stored {checkpoint.kind} configuration does not fit {config_class.__name__}"
        ) from e
    logger.debug("Creating %s from checkpoint", model_class.__name__)
    model = model_class(config)
    try:
        model.load_state_dict(select_weights(checkpoint.arrays, weights))
    except RuntimeError as e:
        raise CheckpointError(
            f"Stored arrays do not match the {checkpoint.kind} architecture"
        ) from e
    return model.eval()


def save_model(
    path: Union[str, Path],
    model: nn.Module,
    step: int,
    seed: int,
    arrays: Optional[Mapping[str, torch.Tensor]] = None,
    ema_arrays: Optional[Mapping[str, torch.Tensor]] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Checkpoint a model.

    :param arrays: Replaces the model's state dict as the live weights.
    :param ema_arrays: Moving-average weights, stored next to the live ones under
        ``live/`` and ``ema/`` prefixes.
    :param extra: Further header entries, see :func:`save_checkpoint`.
    """
    live = model.state_dict() if arrays is None else arrays
    if ema_arrays is not None:
        if set(ema_arrays) != set(live):
            raise ValueError("EMA arrays must have the same names as the live arrays")
        live = {
            **{"live/" + name: tensor for name, tensor in live.items()},
            **{"ema/" + name: tensor for name, tensor in ema_arrays.items()},
        }
    return save_checkpoint(path, model_kind(model), live, model.config, step, seed, extra=extra)


def load_model(
    path: Union[str, Path],
    kind: str,
    config: Any = None,
    force: bool = False,
    weights: str = "ema",
) -> nn.Module:
    """Read a checkpoint of the given kind and build its model."""
    return model_from_checkpoint(
        load_checkpoint(path, kind=kind, config=config, force=force), weights
    )
