"""
Feature-balanced sampling of episodes.

Every balanced feature is binned; each bin gets a weight inversely proportional to its
empirical probability, raised to an exponent. An episode is kept with the product of its
bin weights over all features. Exponent 0 keeps everything, exponent 1 flattens every
feature to a uniform distribution.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np

from ..utils.seeding import numpy_generator
from ..utils.validation import validate_bin_edges, validate_unit_interval

logger = logging.getLogger(__name__)


@dataclass
class BalanceSpec:
    """
    :ivar features: (feature name, bin edges) pairs. Feature names are keys of the
        episode feature record.
    :ivar exponent: Balancing strength in [0, 1].
    """

    features: List[Tuple[str, List[float]]]
    exponent: float = 0.5

    def __post_init__(self):
        validate_unit_interval("exponent", self.exponent)
        names = [name for name, _ in self.features]
        if len(set(names)) != len(names):
            raise ValueError(f"Balanced features must be unique, got {names}")
        for name, edges in self.features:
            validate_bin_edges(name, edges)


class FeatureWeights(NamedTuple):
    edges: Sequence[float]
    weights: np.ndarray


def bin_index(value: float, edges: Sequence[float], feature: str = "feature") -> int:
    """
    Index of the bin [e_i, e_{i+1}) holding `value`. The last bin also includes its
    right edge.
    """
    edges = np.asarray(edges, dtype=float)
    if not edges[0] <= value <= edges[-1]:
        raise ValueError(
            f"Value {value} of {feature} lies outside all bins "
            f"[{edges[0]}, {edges[-1]}]"
        )
    index = int(np.searchsorted(edges, value, side="right")) - 1
    return min(index, len(edges) - 2)


def compute_bin_weights(empirical_counts: Sequence[float], exponent: float) -> np.ndarray:
    """
    Sampling weights for a binned feature.

    Args:
        empirical_counts (Sequence[float]): Number of examples per bin.
        exponent (float): Balancing exponent in [0, 1].

    Returns:
        np.ndarray: Per-bin weights proportional to (1/p_i)^exponent, scaled so the
        largest weight is 1. Empty bins get weight 0.
    """
    counts = np.asarray(empirical_counts, dtype=float)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError(f"empirical_counts must be a non-empty 1D sequence, got {counts}")
    if np.any(counts < 0):
        raise ValueError(f"empirical_counts must be non-negative, got {counts}")
    total = counts.sum()
    if total <= 0:
        raise ValueError("empirical_counts are all zero; there is nothing to balance")
    validate_unit_interval("exponent", exponent)
    probabilities = counts / total
    weights = np.zeros_like(probabilities)
    occupied = probabilities > 0
    weights[occupied] = (1.0 / probabilities[occupied]) ** exponent
    return weights / weights.max()


def keep_probability(
    example_features: Mapping[str, float],
    weights_per_feature: Mapping[str, FeatureWeights],
) -> float:
    """
    Joint keep-probability of one example: the product over the balanced features of
    the example's bin weight, clamped to [0, 1].
    """
    probability = 1.0
    for feature, feature_weights in weights_per_feature.items():
        if feature not in example_features:
            raise KeyError(f"Balanced feature '{feature}' is missing from the example")
        index = bin_index(example_features[feature], feature_weights.edges, feature)
        probability *= float(feature_weights.weights[index])
    return min(max(probability, 0.0), 1.0)


def bin_counts(values: Sequence[float], edges: Sequence[float], feature: str = "feature"):
    """Number of values per bin."""
    counts = np.zeros(len(edges) - 1, dtype=int)
    for value in values:
        counts[bin_index(value, edges, feature)] += 1
    return counts


def fit_balance_weights(
    records: Sequence[Mapping[str, float]], spec: BalanceSpec
) -> Dict[str, FeatureWeights]:
    """Per-feature bin weights computed from the empirical distribution of `records`."""
    weights = {}
    for feature, edges in spec.features:
        try:
            values = [record[feature] for record in records]
        except KeyError as e:
            raise KeyError(
                f"Balanced feature '{feature}' is missing from an episode record"
            ) from e
        counts = bin_counts(values, edges, feature)
        logger.debug("Empirical counts of %s: %s", feature, counts)
        weights[feature] = FeatureWeights(
            edges=list(edges), weights=compute_bin_weights(counts, spec.exponent)
        )
    return weights


def sample_dataset(episodes: Sequence, spec: BalanceSpec, seed: int) -> list:
    """
    Keep each episode independently with its keep-probability.

    Only the `metadata` attribute of the episodes is used. The result is deterministic
    given the seed and may be empty.
    """
    if not episodes:
        raise ValueError("Cannot sample from an empty list of episodes")
    records = [episode.metadata for episode in episodes]
    weights = fit_balance_weights(records, spec)
    draws = numpy_generator(seed, "sample_dataset").random(len(episodes))
    kept = [
        episode
        for episode, record, draw in zip(episodes, records, draws)
        if draw < keep_probability(record, weights)
    ]
    logger.info("Balanced sampling kept %s of %s episodes", len(kept), len(episodes))
    return kept


def _equal_width_edges(value_range: Sequence[float], num_bins: int) -> List[float]:
    low, high = value_range
    if high == low:
        high = low + 1.0
    return [float(edge) for edge in np.linspace(low, high, num_bins + 1)]


def world_model_balance_spec(world_config, exponent: float = 0.5) -> BalanceSpec:
    """Balance weather, mean speed and mean curvature, as used for the world model."""
    return BalanceSpec(
        features=[
            ("weather_id", [float(i) for i in range(len(world_config.weather_set) + 1)]),
            (
                "mean_speed",
                _equal_width_edges(
                    world_config.speed_range, world_config.behaviour_bins
                ),
            ),
            (
                "mean_curvature",
                _equal_width_edges(
                    world_config.road_curvature_range, world_config.behaviour_bins
                ),
            ),
        ],
        exponent=exponent,
    )


def tokenizer_balance_spec(world_config, exponent: float = 0.5) -> BalanceSpec:
    """Balance the map cell and the weather, as used for the image tokenizer."""
    return BalanceSpec(
        features=[
            ("lat_cell", [0.0, 1.0, 2.0, 3.0, 4.0]),
            ("lon_cell", [0.0, 1.0, 2.0, 3.0, 4.0]),
            ("weather_id", [float(i) for i in range(len(world_config.weather_set) + 1)]),
        ],
        exponent=exponent,
    )


BALANCE_PRESETS = {
    "world_model": world_model_balance_spec,
    "tokenizer": tokenizer_balance_spec,
}
