"""
Pipeline configuration.

A configuration file is JSON holding any subset of the sections of PipelineConfig;
missing entries take their defaults. Unknown keys and type mismatches are rejected.
The fully resolved configuration is echoed as ``effective_config.json`` into the
output root, and parsing that echo gives back the same configuration.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .scaling.study import ScalingConfig
from .synthworld.balancing import BALANCE_PRESETS
from .synthworld.world import WorldConfig
from .tokenizer.losses import TokenizerLossWeights
from .tokenizer.training import TokenizerTrainingConfig
from .tokenizer.vq_tokenizer import TokenizerConfig
from .video_decoder.training import DecoderTrainingConfig
from .video_decoder.unet import DecoderConfig
from .world_model.model import WorldModelConfig
from .world_model.training import WorldModelTrainingConfig

logger = logging.getLogger(__name__)

CONFIG_FORMAT_VERSION = "1.0"
OUTPUT_ROOT_ENV = "WORLDSIM_OUT"
EFFECTIVE_CONFIG_NAME = "effective_config.json"
SECTIONS = ("data", "tokenizer", "world_model", "decoder", "inference", "scaling")


class ConfigError(ValueError):
    """Invalid configuration. `key` is the dotted key of the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


@dataclass
class DataConfig:
    """
    :ivar world: The synthetic world.
    :ivar train_episodes: Candidate episodes of the training split, dataset indices
        [0, train_episodes).
    :ivar validation_episodes: Episodes of the validation split, the held-out indices
        following the training ones.
    :ivar balance_preset: Balancing preset applied to the training candidates, None
        keeps every candidate.
    :ivar balance_exponent: Balancing strength in [0, 1].
    """

    world: WorldConfig = field(default_factory=WorldConfig)
    train_episodes: int = 48
    validation_episodes: int = 8
    balance_preset: Optional[str] = "world_model"
    balance_exponent: float = 0.5

    def __post_init__(self):
        if self.train_episodes < 1 or self.validation_episodes < 1:
            raise ValueError(
                "train_episodes and validation_episodes must be positive, got "
                f"{self.train_episodes} and {self.validation_episodes}"
            )
        if self.balance_preset is not None and self.balance_preset not in BALANCE_PRESETS:
            raise ValueError(
                f"balance_preset must be one of {sorted(BALANCE_PRESETS)} or null, got "
                f"{self.balance_preset}"
            )
        if not 0.0 <= self.balance_exponent <= 1.0:
            raise ValueError(f"balance_exponent must be in [0, 1], got {self.balance_exponent}")

    @property
    def validation_indices(self) -> range:
        return range(self.train_episodes, self.train_episodes + self.validation_episodes)


@dataclass
class TokenizerStageConfig:
    model: TokenizerConfig = field(default_factory=TokenizerConfig)
    loss: TokenizerLossWeights = field(default_factory=TokenizerLossWeights)
    training: TokenizerTrainingConfig = field(default_factory=TokenizerTrainingConfig)


@dataclass
class WorldModelStageConfig:
    model: WorldModelConfig = field(default_factory=WorldModelConfig)
    training: WorldModelTrainingConfig = field(default_factory=WorldModelTrainingConfig)


@dataclass
class DecoderStageConfig:
    model: DecoderConfig = field(default_factory=DecoderConfig)
    training: DecoderTrainingConfig = field(default_factory=DecoderTrainingConfig)


@dataclass
class InferenceConfig:
    """
    :ivar horizon: Frames generated per rollout.
    :ivar k: Top-k cutoff, null samples from the full distribution.
    :ivar context_steps: Steps of the first validation episode used as context.
    :ivar positive_prompt: Caption of the generated steps.
    :ivar negative_prompt: Caption of the unconditional guidance branch.
    :ivar guidance: Whether classifier-free guidance is applied.
    :ivar guidance_hi: Guidance scale at the first token of a frame.
    :ivar guidance_lo: Guidance scale at the last token of a frame.
    :ivar guidance_floor: Frame multiplier reached at the last generated frame.
    :ivar guidance_plateau: Leading frames at full guidance.
    :ivar speed: Constant speed override in m/s, null leaves the actions absent.
    :ivar curvature: Constant curvature override in 1/m, used with `speed`.
    :ivar decode: Decode the token frames to video when a decoder is given.
    :ivar decode_direction: "backward" or "forward" keyframe decoding.
    :ivar clip_frames: Frames per decoding window.
    :ivar sampling_steps: DDIM steps, null uses the decoder default.
    :ivar mix_weight: Weight of the image-mode prediction when mixing.
    :ivar mix_probability: Probability of mixing at a denoising step.
    """

    horizon: int = 8
    k: Optional[int] = 8
    context_steps: int = 1
    positive_prompt: Optional[str] = None
    negative_prompt: Optional[str] = None
    guidance: bool = False
    guidance_hi: float = 2.0
    guidance_lo: float = 0.0
    guidance_floor: float = 0.25
    guidance_plateau: int = 0
    speed: Optional[float] = None
    curvature: float = 0.0
    decode: bool = True
    decode_direction: str = "backward"
    clip_frames: int = 3
    sampling_steps: Optional[int] = None
    mix_weight: float = 0.5
    mix_probability: float = 0.25

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be positive or null, got {self.k}")
        if self.context_steps < 0:
            raise ValueError(f"context_steps must be >= 0, got {self.context_steps}")
        if self.decode_direction not in ("backward", "forward"):
            raise ValueError(
                f"decode_direction must be backward or forward, got {self.decode_direction}"
            )
        if self.clip_frames < 3:
            raise ValueError(f"clip_frames must be at least 3, got {self.clip_frames}")
        if not 0.0 <= self.mix_probability <= 1.0 or not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError(
                f"mix_weight and mix_probability must be in [0, 1], got {self.mix_weight} "
                f"and {self.mix_probability}"
            )


@dataclass
class PipelineConfig:
    version: str = CONFIG_FORMAT_VERSION
    seed: int = 0
    output_root: str = "worldsim_out"
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerStageConfig = field(default_factory=TokenizerStageConfig)
    world_model: WorldModelStageConfig = field(default_factory=WorldModelStageConfig)
    decoder: DecoderStageConfig = field(default_factory=DecoderStageConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)

    def __post_init__(self):
        if self.version != CONFIG_FORMAT_VERSION:
            raise ConfigError(
                f"Unsupported config version {self.version}, expected "
                f"{CONFIG_FORMAT_VERSION}",
                key="version",
            )
        check_consistency(self)

    @property
    def grid_shape(self):
        world = self.data.world
        factor = self.tokenizer.model.downsample_factor
        return world.frame_height // factor, world.frame_width // factor

    @property
    def token_rate(self) -> float:
        """Frame rate of the world-model time steps."""
        return self.data.world.base_rate / self.world_model.training.subsample_factor


def check_consistency(config: PipelineConfig) -> None:
    """Cross-stage checks: shared image geometry, codebook and token counts."""
    world = config.data.world
    tokenizer = config.tokenizer.model
    if world.downsample_factor != tokenizer.downsample_factor:
        raise ConfigError(
            f"{tokenizer.downsample_factor} differs from data.world.downsample_factor "
            f"{world.downsample_factor}",
            key="tokenizer.model.downsample_factor",
        )
    height, width = config.grid_shape
    world_model = config.world_model.model
    if world_model.image_tokens != height * width:
        raise ConfigError(
            f"{world_model.image_tokens} differs from the {height}x{width} token grid",
            key="world_model.model.image_tokens",
        )
    if world_model.codebook_size != tokenizer.codebook_size:
        raise ConfigError(
            f"{world_model.codebook_size} differs from the tokenizer codebook size "
            f"{tokenizer.codebook_size}",
            key="world_model.model.codebook_size",
        )
    decoder = config.decoder.model
    expected = {
        "height": world.frame_height,
        "width": world.frame_width,
        "codebook_size": tokenizer.codebook_size,
        "downsample_factor": tokenizer.downsample_factor,
    }
    for name, value in expected.items():
        if getattr(decoder, name) != value:
            raise ConfigError(
                f"{getattr(decoder, name)} does not match the tokenizer and data value {value}",
                key=f"decoder.model.{name}",
            )
    if config.decoder.training.frames > decoder.max_frames:
        raise ConfigError(
            f"{config.decoder.training.frames} exceeds decoder.model.max_frames "
            f"{decoder.max_frames}",
            key="decoder.training.frames",
        )
    if config.inference.clip_frames > decoder.max_frames:
        raise ConfigError(
            f"{config.inference.clip_frames} exceeds decoder.model.max_frames "
            f"{decoder.max_frames}",
            key="inference.clip_frames",
        )


def _section_object(merged, name: str):
    try:
        return OmegaConf.to_object(merged[name])
    except OmegaConfBaseException as e:
        raise ConfigError(str(e), key=f"{name}.{e.full_key}" if e.full_key else name) from e
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e), key=name) from e


def build_config(
    values: Optional[Mapping[str, Any]] = None,
    overrides: Sequence[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """
    Merge `values` and dotted ``key=value`` overrides onto the defaults.

    The output root from the environment variable WORLDSIM_OUT takes precedence.
    """
    environ = os.environ if environ is None else environ
    schema = OmegaConf.structured(PipelineConfig)
    try:
        merged = OmegaConf.merge(
            schema,
            OmegaConf.create(dict(values or {})),
            OmegaConf.from_dotlist(list(overrides)),
        )
    except OmegaConfBaseException as e:
        raise ConfigError(str(e), key=e.full_key or None) from e
    if environ.get(OUTPUT_ROOT_ENV):
        merged.output_root = environ[OUTPUT_ROOT_ENV]
    sections = {name: _section_object(merged, name) for name in SECTIONS}
    config = PipelineConfig(
        version=merged.version,
        seed=merged.seed,
        output_root=merged.output_root,
        **sections,
    )
    logger.debug("Built pipeline config with seed %s", config.seed)
    return config


def parse_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """Read a JSON configuration file; without a path only defaults and overrides apply."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file {path} does not exist")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
    return build_config(values, overrides, environ)


def config_to_dict(config: PipelineConfig) -> dict:
    return asdict(config)


def write_effective_config(config: PipelineConfig, root: Optional[Union[str, Path]] = None) -> Path:
    """Echo the resolved configuration as JSON into the output root."""
    root = Path(config.output_root if root is None else root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / EFFECTIVE_CONFIG_NAME
    path.write_text(json.dumps(config_to_dict(config), indent=2))
    logger.info("Wrote effective config to %s", path)
    return path
