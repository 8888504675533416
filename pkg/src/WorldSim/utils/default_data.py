"""
SEMANTIC_CLASSES maps the renderer's semantic class names to their class ids.

WEATHER_WORDS, LIGHT_WORDS and SIGNAL_WORDS map metadata categories to caption words.

CAPTION_VOCABULARY is the closed, whitespace-tokenized caption vocabulary. Id 0 is the
padding token.

DESK_SCALING_SIZES lists the (width, layers) family of the scaling study.

REFERENCE_SCALE holds the full-scale constants that are only used in arithmetic
checks (image size, downsampling, vocabulary, sequence layout).
"""

from types import MappingProxyType  # Pythons name for a frozen dict
from typing import Mapping

SEMANTIC_CLASSES: Mapping[str, int] = MappingProxyType(
    {
        "background": 0,
        "road": 1,
        "marking": 2,
        "vehicle": 3,
        "traffic_light": 4,
    }
)

WEATHER_WORDS: Mapping[str, str] = MappingProxyType(
    {"sun": "sunny", "rain": "rainy", "fog": "foggy", "snow": "snowy"}
)

LIGHT_WORDS: Mapping[str, str] = MappingProxyType(
    {"day": "day", "dusk": "dusk", "night": "night"}
)

SIGNAL_WORDS: Mapping[str, str] = MappingProxyType(
    {"green": "green", "amber": "amber", "red": "red"}
)

# RGB tint blended over the whole frame, and the blend strength
WEATHER_TINTS: Mapping[str, tuple[tuple[float, float, float], float]] = (
    MappingProxyType(
        {
            "sun": ((1.0, 0.95, 0.8), 0.10),
            "rain": ((0.35, 0.4, 0.5), 0.35),
            "fog": ((0.8, 0.8, 0.8), 0.55),
            "snow": ((0.95, 0.95, 1.0), 0.45),
        }
    )
)

# Multiplicative brightness per time of day
LIGHT_LEVELS: Mapping[str, float] = MappingProxyType(
    {"day": 1.0, "dusk": 0.7, "night": 0.4}
)

SIGNAL_COLOURS: Mapping[str, tuple[float, float, float]] = MappingProxyType(
    {"green": (0.1, 0.9, 0.2), "amber": (1.0, 0.7, 0.0), "red": (0.95, 0.1, 0.1)}
)

# Frames spent in each signal state at the base rate, in cycle order
SIGNAL_CYCLE: tuple[tuple[str, int], ...] = (("green", 40), ("amber", 10), ("red", 30))

PAD_WORD = "<pad>"

CAPTION_VOCABULARY: tuple[str, ...] = (
    (PAD_WORD,)
    + tuple(WEATHER_WORDS.values())
    + tuple(word for word in LIGHT_WORDS.values())
    + tuple(SIGNAL_WORDS.values())
    + ("scene", "light", "left", "right", "turn", "straight", "fast", "slow", "road")
)

REFERENCE_SCALE: Mapping[str, int] = MappingProxyType(
    {
        "frame_height": 288,
        "frame_width": 512,
        "downsample_factor": 16,
        "codebook_size": 8192,
        "time_steps": 26,
        "text_tokens": 32,
        "action_tokens": 2,
        "decoder_frames": 7,
        "top_k": 50,
    }
)

# (width, layers) of the world-model family trained by the scaling study
DESK_SCALING_SIZES: tuple[tuple[int, int], ...] = ((32, 2), (48, 2), (64, 3), (96, 3), (128, 4))
