import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..utils.data_types import FeatureRecord
from ..utils.default_data import (
    LIGHT_LEVELS,
    LIGHT_WORDS,
    SEMANTIC_CLASSES,
    SIGNAL_COLOURS,
    SIGNAL_CYCLE,
    WEATHER_TINTS,
    WEATHER_WORDS,
)
from ..utils.validation import validate_range
from .captions import caption_episode

logger = logging.getLogger(__name__)

ROAD_COLOUR = (0.35, 0.35, 0.37)
MARKING_COLOUR = (0.92, 0.92, 0.88)
BACKGROUND_COLOUR = (0.22, 0.45, 0.2)
EGO_COLOUR = (0.15, 0.35, 0.95)

# Pixels of lateral road displacement per (1/m of curvature * row^2)
CURVATURE_GAIN = 1.2
PIXELS_PER_METRE = 2.0


@dataclass
class WorldConfig:
    """
    Geometry and sampling ranges of the synthetic driving world.

    :ivar frame_height: Frame height in pixels.
    :ivar frame_width: Frame width in pixels.
    :ivar episode_length: Frames per episode at the base rate.
    :ivar base_rate: Frame rate in Hz.
    :ivar num_agents: Other vehicles on the road.
    :ivar weather_set: Weather categories an episode can be rendered with.
    :ivar weather_probabilities: Empirical frequency of each weather category. The
        world is deliberately unbalanced so that dataset balancing has work to do.
    :ivar light_set: Times of day.
    :ivar road_curvature_range: (min, max) curvature in 1/m.
    :ivar speed_range: (min, max) ego speed in m/s.
    :ivar seed: Base seed of the dataset.
    :ivar downsample_factor: Tokenizer downsampling D; frame dims must divide by it.
    :ivar behaviour_bins: Equal-width bins used for the speed and curvature bins
        recorded in the metadata.
    """

    frame_height: int = 32
    frame_width: int = 64
    episode_length: int = 100
    base_rate: float = 25.0
    num_agents: int = 3
    weather_set: List[str] = field(default_factory=lambda: ["sun", "rain", "fog", "snow"])
    weather_probabilities: List[float] = field(
        default_factory=lambda: [0.55, 0.25, 0.12, 0.08]
    )
    light_set: List[str] = field(default_factory=lambda: ["day", "dusk", "night"])
    road_curvature_range: List[float] = field(default_factory=lambda: [-0.02, 0.02])
    speed_range: List[float] = field(default_factory=lambda: [2.0, 15.0])
    seed: int = 0
    downsample_factor: int = 4
    behaviour_bins: int = 4

    def __post_init__(self):
        for name in ("frame_height", "frame_width", "downsample_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("frame_height", "frame_width"):
            if getattr(self, name) % self.downsample_factor != 0:
                raise ValueError(
                    f"{name}={getattr(self, name)} is not divisible by the downsample "
                    f"factor {self.downsample_factor}"
                )
        if self.episode_length < 2:
            raise ValueError(
                f"episode_length must be at least 2, got {self.episode_length}"
            )
        if self.base_rate <= 0:
            raise ValueError(f"base_rate must be positive, got {self.base_rate}")
        if self.num_agents < 0:
            raise ValueError(f"num_agents must be non-negative, got {self.num_agents}")
        if self.behaviour_bins < 1:
            raise ValueError(
                f"behaviour_bins must be positive, got {self.behaviour_bins}"
            )
        validate_range("road_curvature_range", self.road_curvature_range)
        validate_range("speed_range", self.speed_range)
        if not self.weather_set:
            raise ValueError("weather_set must not be empty")
        if not self.light_set:
            raise ValueError("light_set must not be empty")
        unknown = [w for w in self.weather_set if w not in WEATHER_WORDS] + [
            light for light in self.light_set if light not in LIGHT_WORDS
        ]
        if unknown:
            raise ValueError(f"Unknown weather or light categories: {unknown}")
        if len(self.weather_probabilities) != len(self.weather_set):
            raise ValueError(
                "weather_probabilities must have one entry per weather category, got "
                f"{len(self.weather_probabilities)} for {len(self.weather_set)}"
            )
        if any(p < 0 for p in self.weather_probabilities) or not sum(
            self.weather_probabilities
        ):
            raise ValueError(
                "weather_probabilities must be non-negative with a positive sum, got "
                f"{self.weather_probabilities}"
            )


@dataclass
class FrameSequence:
    """
    Ordered RGB frames.

    :ivar frames: Array of shape (T, H, W, 3) with intensities in [0, 1].
    :ivar rate: Frame rate in Hz.
    """

    frames: np.ndarray
    rate: float

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(
                f"frames must have shape (T, H, W, 3), got {self.frames.shape}"
            )
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class ActionTrace:
    """Per-frame ego speed (m/s) and curvature (1/m)."""

    speed: np.ndarray
    curvature: np.ndarray

    def __post_init__(self):
        if self.speed.shape != self.curvature.shape or self.speed.ndim != 1:
            raise ValueError(
                "speed and curvature must be 1D arrays of equal length, got "
                f"{self.speed.shape} and {self.curvature.shape}"
            )

    def __len__(self) -> int:
        return self.speed.shape[0]

    def as_array(self) -> np.ndarray:
        """The actions as a (T, 2) array of (speed, curvature)."""
        return np.stack([self.speed, self.curvature], axis=-1)


@dataclass
class Episode:
    """
    One rendered episode.

    :ivar frames: The rendered frames.
    :ivar actions: The ego actions, one per frame.
    :ivar semantics: Array of shape (T, H, W) with one semantic class id per pixel.
    :ivar metadata: The feature record the caption is derived from.
    :ivar caption: The episode caption.
    :ivar seed: The seed the episode was generated with.
    """

    frames: FrameSequence
    actions: ActionTrace
    semantics: np.ndarray
    metadata: FeatureRecord
    caption: str
    seed: int = 0

    def __post_init__(self):
        if not len(self.frames) == len(self.actions) == self.semantics.shape[0]:
            raise ValueError(
                f"Episode has {len(self.frames)} frames, {len(self.actions)} actions "
                f"and {self.semantics.shape[0]} semantic maps"
            )
        if self.semantics.shape[1:] != self.frames.frames.shape[1:3]:
            raise ValueError(
                f"Semantic maps of shape {self.semantics.shape[1:]} do not match "
                f"frames of shape {self.frames.frames.shape[1:3]}"
            )


def _equal_width_bin(value: float, value_range: List[float], num_bins: int) -> int:
    low, high = value_range
    if high == low:
        return 0
    index = int((value - low) / (high - low) * num_bins)
    return min(max(index, 0), num_bins - 1)


def _sample_actions(config: WorldConfig, rng: np.random.Generator) -> ActionTrace:
    length = config.episode_length
    speed_low, speed_high = config.speed_range
    curv_low, curv_high = config.road_curvature_range
    speed = np.empty(length)
    curvature = np.empty(length)
    speed[0] = rng.uniform(speed_low, speed_high)
    curvature[0] = rng.uniform(curv_low, curv_high)
    speed_step = 0.04 * (speed_high - speed_low)
    curvature_step = 0.04 * (curv_high - curv_low)
    for t in range(1, length):
        speed[t] = np.clip(
            speed[t - 1] + rng.normal(0.0, speed_step), speed_low, speed_high
        )
        curvature[t] = np.clip(
            curvature[t - 1] + rng.normal(0.0, curvature_step), curv_low, curv_high
        )
    return ActionTrace(speed=speed, curvature=curvature)


def _signal_states(length: int, offset: int) -> List[str]:
    cycle = [state for state, duration in SIGNAL_CYCLE for _ in range(duration)]
    return [cycle[(offset + t) % len(cycle)] for t in range(length)]


def _paint(image, semantics, rows, cols, colour, class_name):
    image[rows, cols] = colour
    semantics[rows, cols] = SEMANTIC_CLASSES[class_name]


def generate_episode(config: WorldConfig, seed: int) -> Episode:
    """
    Render one top-down driving episode.

    The ego vehicle sits in the right lane near the bottom of the frame; the road bends
    with the ego curvature, lane markings scroll with the ego speed, other agents move
    with their own speeds and a traffic light cycles through its states. The whole
    frame is tinted by the weather and dimmed by the time of day.

    The result depends only on (config, seed).
    """
    rng = np.random.default_rng(seed)
    height, width = config.frame_height, config.frame_width
    length = config.episode_length
    dt = 1.0 / config.base_rate

    weights = np.asarray(config.weather_probabilities, dtype=float)
    weather = config.weather_set[rng.choice(len(config.weather_set), p=weights / weights.sum())]
    light = config.light_set[rng.integers(len(config.light_set))]
    cycle_length = sum(duration for _, duration in SIGNAL_CYCLE)
    signals = _signal_states(length, int(rng.integers(cycle_length)))
    actions = _sample_actions(config, rng)
    lat_cell, lon_cell = (int(value) for value in rng.integers(0, 4, size=2))

    half_width = max(2, width // 6)
    agent_lanes = rng.choice([-1, 1], size=config.num_agents)
    agent_start = rng.uniform(0, height, size=config.num_agents)
    agent_speed = rng.uniform(*config.speed_range, size=config.num_agents)
    agent_colour = rng.uniform(0.5, 1.0, size=(config.num_agents, 3)) * np.array(
        [1.0, 0.4, 0.3]
    )
    texture = rng.normal(0.0, 0.015, size=(height, width, 1))

    rows = np.arange(height)
    cols = np.arange(width)
    frames = np.empty((length, height, width, 3), dtype=np.float32)
    semantics = np.empty((length, height, width), dtype=np.uint8)
    tint, tint_strength = WEATHER_TINTS[weather]
    brightness = LIGHT_LEVELS[light]
    distance = np.concatenate([[0.0], np.cumsum(actions.speed[:-1] * dt)])

    for t in range(length):
        image = np.empty((height, width, 3))
        image[:] = BACKGROUND_COLOUR
        sem = np.full((height, width), SEMANTIC_CLASSES["background"], dtype=np.uint8)

        ahead = (height - 1 - rows).astype(float)
        centre = width / 2 + CURVATURE_GAIN * actions.curvature[t] * ahead**2
        centre = np.round(centre).astype(int)
        offset = cols[None, :] - centre[:, None]
        road = np.abs(offset) <= half_width
        _paint(image, sem, *np.nonzero(road), ROAD_COLOUR, "road")

        edge = np.abs(offset) == half_width
        phase = int(distance[t] * PIXELS_PER_METRE) % 8
        dashed = ((rows + phase) // 4) % 2 == 0
        centre_line = (offset == 0) & dashed[:, None]
        _paint(image, sem, *np.nonzero(edge | centre_line), MARKING_COLOUR, "marking")

        for agent in range(config.num_agents):
            travelled = (agent_speed[agent] - actions.speed[t]) * dt * t
            top = (agent_start[agent] - travelled * PIXELS_PER_METRE) % (height + 4) - 4
            top = int(np.floor(top))
            for row in range(max(top, 0), min(top + 4, height)):
                lane_col = centre[row] + agent_lanes[agent] * (half_width // 2)
                left, right = max(lane_col - 1, 0), min(lane_col + 2, width)
                if left < right:
                    _paint(
                        image,
                        sem,
                        row,
                        slice(left, right),
                        agent_colour[agent],
                        "vehicle",
                    )

        ego_col = width // 2 + half_width // 2
        _paint(
            image,
            sem,
            slice(height - 6, height - 1),
            slice(ego_col - 1, ego_col + 2),
            EGO_COLOUR,
            "vehicle",
        )

        light_col = min(centre[1] + half_width + 2, width - 2)
        light_col = max(light_col, 0)
        _paint(
            image,
            sem,
            slice(1, 4),
            slice(light_col, light_col + 2),
            SIGNAL_COLOURS[signals[t]],
            "traffic_light",
        )

        image = (1 - tint_strength) * image + tint_strength * np.asarray(tint)
        image = np.clip(image * brightness + texture, 0.0, 1.0)
        frames[t] = image
        semantics[t] = sem

    metadata = FeatureRecord(
        weather=weather,
        weather_id=config.weather_set.index(weather),
        light=light,
        signal=signals[0],
        mean_speed=float(actions.speed.mean()),
        mean_curvature=float(actions.curvature.mean()),
        speed_bin=_equal_width_bin(
            actions.speed.mean(), config.speed_range, config.behaviour_bins
        ),
        curvature_bin=_equal_width_bin(
            actions.curvature.mean(),
            config.road_curvature_range,
            config.behaviour_bins,
        ),
        lat_cell=lat_cell,
        lon_cell=lon_cell,
        mutable=False,
    )
    logger.debug("Generated episode with seed %s and metadata %s", seed, metadata)
    return Episode(
        frames=FrameSequence(frames=frames, rate=config.base_rate),
        actions=actions,
        semantics=semantics,
        metadata=metadata,
        caption=caption_episode(metadata),
        seed=seed,
    )


def subsample_temporal(seq: FrameSequence, factor: int) -> FrameSequence:
    """Keep frames 0, factor, 2*factor, ... and divide the frame rate by `factor`."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"Subsampling factor must be an integer >= 1, got {factor}")
    return FrameSequence(frames=seq.frames[::factor], rate=seq.rate / factor)


def subsample_actions(actions: ActionTrace, factor: int) -> ActionTrace:
    """Subsample an action trace with the same indexing as :func:`subsample_temporal`."""
    if factor < 1:
        raise ValueError(f"Subsampling factor must be an integer >= 1, got {factor}")
    return ActionTrace(speed=actions.speed[::factor], curvature=actions.curvature[::factor])
