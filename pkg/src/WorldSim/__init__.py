from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, PipelineConfig, build_config, parse_config
from .factories import load_model, model_from_checkpoint
from .metrics import MetricsLog

__version__ = "0.3.0"

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "MetricsLog",
    "PipelineConfig",
    "build_config",
    "load_checkpoint",
    "load_model",
    "model_from_checkpoint",
    "parse_config",
    "save_checkpoint",
]
