import logging
from typing import Mapping

from ..utils.default_data import LIGHT_WORDS, SIGNAL_WORDS, WEATHER_WORDS

logger = logging.getLogger(__name__)


def _lookup(words: Mapping[str, str], field_name: str, value: str) -> str:
    try:
        return words[value]
    except KeyError as e:
        raise ValueError(
            f"Unknown {field_name} category '{value}', expected one of {list(words)}"
        ) from e


def caption_episode(metadata: Mapping) -> str:
    """
    Caption an episode from its feature record with a fixed template.

    Example: {weather: rain, light: night, signal: red} gives
    "rainy night scene red light".

    :param metadata: Feature record holding at least `weather`, `light` and `signal`.
    :return: The caption. Every word is in the caption vocabulary. The caption has
        five words; with fewer text slots per step the world model only sees the
        leading ones, so the traffic-light words are cut first.
    """
    for key in ("weather", "light", "signal"):
        if key not in metadata:
            raise KeyError(f"Metadata is missing the '{key}' field needed for a caption")
    weather = _lookup(WEATHER_WORDS, "weather", metadata["weather"])
    light = _lookup(LIGHT_WORDS, "light", metadata["light"])
    signal = _lookup(SIGNAL_WORDS, "signal", metadata["signal"])
    return f"{weather} {light} scene {signal} light"
