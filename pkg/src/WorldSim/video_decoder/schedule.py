"""
Cosine noise schedule and the v-parameterization algebra.

Diffusion time runs from t = 0 (clean) to t = 1 (pure noise). All functions accept a
scalar time or a (B,) tensor of per-example times.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import torch

logger = logging.getLogger(__name__)

Time = Union[float, torch.Tensor]

# Lower clip of alpha_bar so that sigma < 1 stays representable at t = 1
ALPHA_BAR_FLOOR = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """
    :ivar offset: Offset s of the cosine schedule.
    """

    offset: float = 0.008

    def __post_init__(self):
        if not 0.0 <= self.offset < 1.0:
            raise ValueError(f"offset must be in [0, 1), got {self.offset}")

    def alpha_bar(self, t: Time) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.float64)
        if torch.any(t < 0) or torch.any(t > 1) or not torch.all(torch.isfinite(t)):
            raise ValueError(f"Diffusion time must lie in [0, 1], got {t.tolist()}")
        value = self._unnormalized(t) / self._unnormalized(torch.zeros((), dtype=torch.float64))
        return value.clamp(ALPHA_BAR_FLOOR, 1.0)

    def _unnormalized(self, t: torch.Tensor) -> torch.Tensor:
        s = self.offset
        return torch.cos((t + s) / (1 + s) * math.pi / 2) ** 2

    def __call__(self, t: Time) -> Tuple[torch.Tensor, torch.Tensor]:
        """(alpha, sigma) at time t, in float64."""
        alpha_bar = self.alpha_bar(t)
        return alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt()


DEFAULT_SCHEDULE = NoiseSchedule()


def cosine_schedule(t: Time, schedule: NoiseSchedule = DEFAULT_SCHEDULE):
    return schedule(t)


def _broadcast(value: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    value = value.to(like.dtype)
    if value.ndim == 0:
        return value
    if value.shape[0] != like.shape[0]:
        raise ValueError(
            f"Got {value.shape[0]} diffusion times for a batch of {like.shape[0]}"
        )
    return value.reshape(-1, *([1] * (like.ndim - 1)))


def _check_shapes(a: torch.Tensor, b: torch.Tensor, names: str):
    if a.shape != b.shape:
        raise ValueError(f"Shapes of {names} differ: {tuple(a.shape)} and {tuple(b.shape)}")


def noise(
    x0: torch.Tensor, eps: torch.Tensor, t: Time, schedule: NoiseSchedule = DEFAULT_SCHEDULE
) -> torch.Tensor:
    """alpha(t) * x0 + sigma(t) * eps."""
    _check_shapes(x0, eps, "x0 and eps")
    alpha, sigma = schedule(t)
    return _broadcast(alpha, x0) * x0 + _broadcast(sigma, x0) * eps


def v_target(
    x0: torch.Tensor, eps: torch.Tensor, t: Time, schedule: NoiseSchedule = DEFAULT_SCHEDULE
) -> torch.Tensor:
    """alpha(t) * eps - sigma(t) * x0."""
    _check_shapes(x0, eps, "x0 and eps")
    alpha, sigma = schedule(t)
    return _broadcast(alpha, x0) * eps - _broadcast(sigma, x0) * x0


def recover_x0(
    x_t: torch.Tensor, v: torch.Tensor, t: Time, schedule: NoiseSchedule = DEFAULT_SCHEDULE
) -> torch.Tensor:
    """alpha(t) * x_t - sigma(t) * v."""
    _check_shapes(x_t, v, "x_t and v")
    alpha, sigma = schedule(t)
    return _broadcast(alpha, x_t) * x_t - _broadcast(sigma, x_t) * v


def recover_eps(
    x_t: torch.Tensor, v: torch.Tensor, t: Time, schedule: NoiseSchedule = DEFAULT_SCHEDULE
) -> torch.Tensor:
    """sigma(t) * x_t + alpha(t) * v."""
    _check_shapes(x_t, v, "x_t and v")
    alpha, sigma = schedule(t)
    return _broadcast(sigma, x_t) * x_t + _broadcast(alpha, x_t) * v


def ddim_step(
    x_t: torch.Tensor,
    v_hat: torch.Tensor,
    t: float,
    t_next: float,
    schedule: NoiseSchedule = DEFAULT_SCHEDULE,
) -> torch.Tensor:
    """
    Deterministic DDIM update from time `t` to the earlier time `t_next`.

    Stepping to the same time returns `x_t` unchanged. Stepping forward in time raises
    a ValueError.
    """
    t, t_next = float(t), float(t_next)
    if t_next > t:
        raise ValueError(f"t_next {t_next} must not exceed t {t}")
    if t_next == t:
        return x_t.clone()
    x0_hat = recover_x0(x_t, v_hat, t, schedule)
    eps_hat = recover_eps(x_t, v_hat, t, schedule)
    return noise(x0_hat, eps_hat, t_next, schedule)
