import math
from typing import Sequence


def validate_range(name: str, value_range: Sequence[float]) -> bool:
    """
    Validates that a (min, max) range is non-empty and ordered.

    Args:
        name (str): Field name used in the error message.
        value_range (Sequence[float]): The range as a two-element sequence.

    Returns:
        bool: True if the range is valid.
    """
    if len(value_range) != 2:
        raise ValueError(
            f"{name} must have exactly two entries (min, max), got {value_range}"
        )
    low, high = (float(value) for value in value_range)
    if not (math.isfinite(low) and math.isfinite(high)):
        raise ValueError(f"{name} must be finite, got {value_range}")
    if low > high:
        raise ValueError(f"{name} has min {low} greater than max {high}")
    return True


def validate_bin_edges(name: str, edges: Sequence[float]) -> bool:
    """
    Validates that bin edges define at least one bin and are strictly increasing.

    Args:
        name (str): Feature name used in the error message.
        edges (Sequence[float]): The bin edges.

    Returns:
        bool: True if the edges are valid.
    """
    if len(edges) < 2:
        raise ValueError(
            f"Feature {name} needs at least two bin edges, got {list(edges)}"
        )
    previous_edge = None
    for edge in edges:
        if previous_edge is not None and not edge > previous_edge:
            raise ValueError(
                f"Bin edges of feature {name} are not strictly increasing: "
                f"{edge} follows {previous_edge}"
            )
        previous_edge = edge
    return True


def validate_ratios(name: str, ratios: Sequence[float], tolerance: float = 1e-6):
    """
    Validates that ratios are non-negative and sum to 1 within a tolerance.

    Args:
        name (str): Field name used in the error message.
        ratios (Sequence[float]): The ratios.
        tolerance (float): Allowed deviation of the sum from 1.

    Returns:
        bool: True if the ratios are valid.
    """
    if any(ratio < 0 for ratio in ratios):
        raise ValueError(f"{name} must be non-negative, got {list(ratios)}")
    total = sum(ratios)
    if abs(total - 1.0) > tolerance:
        raise ValueError(f"{name} must sum to 1, but the sum is {total}")
    return True


def validate_unit_interval(name: str, value: float, closed_right: bool = True):
    """Validates that a value lies in [0, 1], or [0, 1) if `closed_right` is False."""
    upper_ok = value <= 1.0 if closed_right else value < 1.0
    if not (value >= 0.0 and upper_ok):
        interval = "[0, 1]" if closed_right else "[0, 1)"
        raise ValueError(f"{name} must be in {interval}, got {value}")
    return True
