from .model import (
    ConditioningMode,
    WorldModel,
    WorldModelConfig,
    count_parameters,
    world_model_loss,
)
from .sequence import (
    Modality,
    MultimodalSequence,
    SequenceLayout,
    assemble_sequence,
    sequence_length,
)
from .training import (
    TokenizedEpisode,
    WorldModelTrainingConfig,
    apply_conditioning_dropout,
    build_windows,
    train_world_model,
)

__all__ = [
    "ConditioningMode",
    "Modality",
    "MultimodalSequence",
    "SequenceLayout",
    "TokenizedEpisode",
    "WorldModel",
    "WorldModelConfig",
    "WorldModelTrainingConfig",
    "apply_conditioning_dropout",
    "assemble_sequence",
    "build_windows",
    "count_parameters",
    "sequence_length",
    "train_world_model",
    "world_model_loss",
]
