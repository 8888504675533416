from .balancing import (
    BalanceSpec,
    compute_bin_weights,
    keep_probability,
    sample_dataset,
    tokenizer_balance_spec,
    world_model_balance_spec,
)
from .captions import caption_episode
from .dataset_io import generate_dataset, read_dataset, write_dataset
from .world import (
    ActionTrace,
    Episode,
    FrameSequence,
    WorldConfig,
    generate_episode,
    subsample_temporal,
)

__all__ = [
    "ActionTrace",
    "BalanceSpec",
    "Episode",
    "FrameSequence",
    "WorldConfig",
    "caption_episode",
    "compute_bin_weights",
    "generate_dataset",
    "generate_episode",
    "keep_probability",
    "read_dataset",
    "sample_dataset",
    "subsample_temporal",
    "tokenizer_balance_spec",
    "world_model_balance_spec",
    "write_dataset",
]
