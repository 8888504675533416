"""
Power-law fits of validation loss against training compute.

The fitted law is ``f(x) = c + (x / a) ** b`` with ``a > 0``, ``b < 0`` and ``c >= 0``.
Compute is estimated from the non-embedding parameter count N as 6 FLOPs per parameter
per training token.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 4
MIN_DECADES = 2.0
EXTRAPOLATION_LIMIT = 20.0
NUM_STARTS = 8
# Upper bound of the exponent, b must stay strictly negative
MAX_EXPONENT = -1e-8


class ExtrapolationWarning(UserWarning):
    """A prediction lies far outside the compute range the law was fitted on."""


def compute_per_token(num_parameters: float) -> float:
    """Forward plus backward FLOPs of one training token: 6 N."""
    if not num_parameters > 0:
        raise ValueError(f"num_parameters must be positive, got {num_parameters}")
    return 6.0 * num_parameters


def total_compute(num_parameters: float, tokens: float) -> float:
    """Training compute 6 N D in FLOPs."""
    if tokens < 0:
        raise ValueError(f"tokens must be non-negative, got {tokens}")
    return compute_per_token(num_parameters) * tokens


def ema_smooth(series: Iterable[float], decay: float) -> np.ndarray:
    """
    Exponential moving average ``y_i = decay * y_{i-1} + (1 - decay) * x_i``, ``y_0 = x_0``.

    The result keeps the length of `series` and stays within its range.
    """
    values = np.asarray(list(series), dtype=np.float64)
    if values.size == 0:
        raise ValueError("Cannot smooth an empty series")
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must be in [0, 1), got {decay}")
    if decay == 0.0:
        return values.copy()
    smoothed, _ = lfilter([1.0 - decay], [1.0, -decay], values, zi=[decay * values[0]])
    return np.clip(smoothed, values.min(), values.max())


@dataclass(frozen=True)
class PowerLawFit:
    """
    :ivar a: Scale of the law, in compute units.
    :ivar b: Exponent, negative for a decreasing loss.
    :ivar c: Irreducible loss.
    :ivar residual: Root-mean-square error of the fit in nats.
    :ivar max_compute: Largest compute value the law was fitted on.
    :ivar num_points: Number of fitted points.
    """

    a: float
    b: float
    c: float
    residual: float = 0.0
    max_compute: float = math.inf
    num_points: int = 0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not math.isfinite(self.b) or not math.isfinite(self.c):
            raise ValueError(f"b and c must be finite, got b={self.b}, c={self.c}")

    def as_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "residual": self.residual,
            "max_compute": self.max_compute,
            "num_points": self.num_points,
        }


def _law(log_x: np.ndarray, log_a: float, b: float, c: float) -> np.ndarray:
    return c + np.power(10.0, b * (log_x - log_a))


def _initial_guesses(log_x: np.ndarray, loss: np.ndarray, rng: np.random.Generator):
    """
    Starting points (log10 a, b, c).

    c starts below the smallest loss, b from the slope between the end points of
    log(loss - c) and a from the first point.
    """
    minimum = max(float(loss.min()), 0.0)
    fractions = [0.0, 0.5, 0.9, 0.99]
    fractions += list(rng.uniform(0.0, 0.99, size=NUM_STARTS - len(fractions)))
    guesses = []
    for fraction in fractions:
        c = fraction * minimum
        excess = np.maximum(loss - c, 1e-12)
        span = log_x[-1] - log_x[0]
        slope = (math.log10(excess[-1]) - math.log10(excess[0])) / span if span > 0 else -0.1
        b = min(slope, -1e-3)
        log_a = log_x[0] - math.log10(excess[0]) / b
        guesses.append((log_a, b, c))
    return guesses


def fit_power_law(
    compute: Sequence[float],
    loss: Sequence[float],
    seed: int = 0,
) -> PowerLawFit:
    """
    Least-squares fit of ``loss = c + (compute / a) ** b`` in log10-compute space.

    Several starts are optimised and the one with the smallest residual is returned.
    Point order does not matter. Warns when the compute values span fewer than two
    decades.
    """
    compute = np.asarray(compute, dtype=np.float64)
    loss = np.asarray(loss, dtype=np.float64)
    if compute.shape != loss.shape or compute.ndim != 1:
        raise ValueError(
            f"compute and loss must be 1-d and equally long, got {compute.shape} and "
            f"{loss.shape}"
        )
    if compute.size < MIN_FIT_POINTS:
        raise ValueError(
            f"At least {MIN_FIT_POINTS} points are needed for a fit, got {compute.size}"
        )
    if np.any(compute <= 0) or not np.all(np.isfinite(compute)):
        raise ValueError("Compute values must be positive and finite")
    if not np.all(np.isfinite(loss)):
        raise ValueError("Loss values must be finite")
    order = np.lexsort((loss, compute))
    log_x, loss = np.log10(compute[order]), loss[order]
    decades = log_x[-1] - log_x[0]
    if decades < MIN_DECADES:
        warnings.warn(
            f"Compute spans {decades:.2f} decades, fewer than {MIN_DECADES:g}; the fit "
            "may be poorly constrained"
        )

    def residuals(params):
        return _law(log_x, *params) - loss

    rng = np.random.default_rng(seed)
    best = None
    for guess in _initial_guesses(log_x, loss, rng):
        try:
            result = least_squares(
                residuals,
                guess,
                bounds=([-np.inf, -np.inf, 0.0], [np.inf, MAX_EXPONENT, np.inf]),
                method="trf",
                x_scale="jac",
                xtol=1e-12,
                ftol=1e-12,
                gtol=1e-12,
                max_nfev=5000,
            )
        except ValueError as e:
            logger.debug("Power-law start %s failed: %s", guess, e)
            continue
        if not np.all(np.isfinite(result.fun)):
            continue
        rms = float(np.sqrt(np.mean(result.fun**2)))
        if best is None or rms < best[0]:
            best = (rms, result.x)
    if best is None:
        raise RuntimeError("No start of the power-law fit converged")
    rms, (log_a, b, c) = best
    fit = PowerLawFit(
        a=float(10.0**log_a),
        b=float(b),
        c=float(c),
        residual=rms,
        max_compute=float(10.0 ** log_x[-1]),
        num_points=int(compute.size),
    )
    logger.info("Fitted power law a=%s b=%s c=%s, rms %s", fit.a, fit.b, fit.c, rms)
    return fit


def predict_loss(
    fit: PowerLawFit, compute: Union[float, Sequence[float], np.ndarray]
) -> Union[float, np.ndarray]:
    """
    ``c + (compute / a) ** b``. Warns with ExtrapolationWarning beyond 20 times the
    largest fitted compute.
    """
    values = np.asarray(compute, dtype=np.float64)
    if np.any(values <= 0):
        raise ValueError("compute must be positive")
    if np.any(values > EXTRAPOLATION_LIMIT * fit.max_compute):
        warnings.warn(
            f"Predicting at {float(values.max()):.3g} FLOPs, more than "
            f"{EXTRAPOLATION_LIMIT:g}x the largest fitted compute {fit.max_compute:.3g}",
            ExtrapolationWarning,
        )
    predicted = fit.c + np.power(values / fit.a, fit.b)
    return float(predicted) if predicted.ndim == 0 else predicted


def relative_error(predicted: float, actual: float) -> float:
    if actual == 0:
        raise ValueError("actual must be non-zero")
    return abs(predicted - actual) / abs(actual)

