"""
Scaling study over a family of world-model sizes.

Every size is trained on the same windows for the same number of steps, so all runs
see the same number of tokens. The law is fitted on all but the largest successful run
and then used to predict that run's final validation loss.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from ..metrics import MetricsLog
from ..utils.default_data import DESK_SCALING_SIZES
from ..utils.seeding import derive_seed
from ..utils.training import OptimizerConfig, TrainingDivergedError
from ..world_model import (
    WorldModel,
    WorldModelConfig,
    WorldModelTrainingConfig,
    count_parameters,
    train_world_model,
)
from ..world_model.training import WindowDataset, action_statistics
from .power_law import (
    MIN_FIT_POINTS,
    PowerLawFit,
    ema_smooth,
    fit_power_law,
    predict_loss,
    relative_error,
    total_compute,
)

logger = logging.getLogger(__name__)


def _study_training():
    return WorldModelTrainingConfig(
        steps=300,
        batch_size=8,
        eval_every=100,
        log_every=50,
        optimizer=OptimizerConfig(lr=1e-3, final_lr_ratio=0.1, warmup_steps=20),
    )


@dataclass
class ScalingConfig:
    """
    :ivar sizes: (width, layers) of every run.
    :ivar training: Shared training configuration of all runs.
    :ivar ema_decay: Decay of the EMA applied to each validation curve before taking the
        final loss, 0 fits the raw final losses.
    :ivar holdout_largest: Fit without the largest run and report its predicted loss.
    :ivar tolerance: Relative prediction error above which the study warns.
    :ivar monotone_tolerance: Allowed loss increase in nats between consecutive sizes.
    """

    sizes: List[List[int]] = field(
        default_factory=lambda: [list(size) for size in DESK_SCALING_SIZES]
    )
    training: WorldModelTrainingConfig = field(default_factory=_study_training)
    ema_decay: float = 0.0
    holdout_largest: bool = True
    tolerance: float = 0.15
    monotone_tolerance: float = 0.05

    def __post_init__(self):
        needed = MIN_FIT_POINTS + int(self.holdout_largest)
        if len(self.sizes) < needed:
            raise ValueError(f"sizes must hold at least {needed} entries, got {len(self.sizes)}")
        for size in self.sizes:
            if len(size) != 2 or min(size) < 1:
                raise ValueError(f"Every size must be a positive (width, layers) pair, got {size}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.tolerance <= 0 or self.monotone_tolerance < 0:
            raise ValueError(
                f"Invalid tolerances {self.tolerance} and {self.monotone_tolerance}"
            )


@dataclass
class RunRecord:
    """
    One trained size of the study.

    :ivar width: Model width.
    :ivar layers: Transformer layers.
    :ivar num_parameters: Parameters excluding embeddings, N.
    :ivar tokens_seen: Stream tokens processed during training.
    :ivar compute: Training compute 6 N tokens_seen in FLOPs.
    :ivar loss_curve: (step, validation cross-entropy) pairs with increasing steps.
    :ivar failed: True when training diverged; failed runs are not fitted.
    :ivar error: Failure message.
    """

    width: int
    layers: int
    num_parameters: int
    tokens_seen: int
    compute: float
    loss_curve: List[Tuple[int, float]] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    def __post_init__(self):
        if self.num_parameters <= 0:
            raise ValueError(f"num_parameters must be positive, got {self.num_parameters}")
        expected = total_compute(self.num_parameters, self.tokens_seen)
        if not math.isclose(self.compute, expected, rel_tol=1e-9):
            raise ValueError(f"compute {self.compute} does not equal 6 N tokens = {expected}")
        self.loss_curve = [(int(step), float(loss)) for step, loss in self.loss_curve]
        steps = [step for step, _ in self.loss_curve]
        if any(later <= earlier for earlier, later in zip(steps, steps[1:])):
            raise ValueError(f"loss_curve steps must increase, got {steps}")
        if not self.failed and not self.loss_curve:
            raise ValueError("A successful run needs a loss curve")

    @property
    def name(self) -> str:
        return f"{self.width}x{self.layers}"

    def final_loss(self, ema_decay: float = 0.0) -> float:
        if not self.loss_curve:
            raise ValueError(f"Run {self.name} has no loss curve")
        return float(ema_smooth([loss for _, loss in self.loss_curve], ema_decay)[-1])

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "layers": self.layers,
            "num_parameters": self.num_parameters,
            "tokens_seen": self.tokens_seen,
            "compute": self.compute,
            "loss_curve": [list(point) for point in self.loss_curve],
            "failed": self.failed,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        try:
            return cls(**data)
        except TypeError as e:
            raise ValueError(f"Invalid run record {data}") from e


def write_records(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    """Write one JSON record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict()) + "\n")
    return path


def read_records(paths: Union[str, Path, Sequence[Union[str, Path]]]) -> List[RunRecord]:
    """Read one or several JSONL record files, in the given order."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    records = []
    for path in paths:
        with open(path) as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValueError(f"Line {line_number} of {path} is not valid JSON") from e
                records.append(RunRecord.from_dict(data))
    return records


class ScalingReport(NamedTuple):
    held_out: Optional[str]
    """Name of the run predicted by the fit, None without a held-out run."""
    predicted: Optional[float]
    actual: Optional[float]
    relative_error: Optional[float]
    within_tolerance: Optional[bool]
    monotone: bool
    """Final losses do not increase with compute beyond the tolerance."""

    def as_dict(self) -> dict:
        return dict(self._asdict())


class ScalingStudyResult(NamedTuple):
    records: List[RunRecord]
    fit: PowerLawFit
    report: ScalingReport


def is_monotone(records: Sequence[RunRecord], tolerance: float, ema_decay: float = 0.0) -> bool:
    """Whether final losses are non-increasing in compute up to `tolerance` nats."""
    ordered = sorted((r for r in records if not r.failed), key=lambda r: r.compute)
    losses = [r.final_loss(ema_decay) for r in ordered]
    return all(later <= earlier + tolerance for earlier, later in zip(losses, losses[1:]))


def fit_records(
    records: Sequence[RunRecord],
    ema_decay: float = 0.0,
    holdout_largest: bool = False,
    tolerance: float = 0.15,
    monotone_tolerance: float = 0.05,
) -> Tuple[PowerLawFit, ScalingReport]:
    """
    Fit the power law on the successful records.

    With `holdout_largest` the largest-compute run is left out of the fit and its loss
    is predicted. A relative error above `tolerance` is reported with a warning.
    """
    successful = sorted((r for r in records if not r.failed), key=lambda r: r.compute)
    skipped = len(records) - len(successful)
    if skipped:
        logger.info("Ignoring %s failed runs", skipped)
    fitted = successful[:-1] if holdout_largest else successful
    if len(fitted) < MIN_FIT_POINTS:
        raise ValueError(
            f"{len(fitted)} runs are available for the fit, at least {MIN_FIT_POINTS} "
            "are needed"
        )
    fit = fit_power_law(
        [r.compute for r in fitted], [r.final_loss(ema_decay) for r in fitted]
    )
    monotone = is_monotone(successful, monotone_tolerance, ema_decay)
    if not monotone:
        warnings.warn(
            f"Final losses increase with compute by more than {monotone_tolerance} nats"
        )
    if not holdout_largest:
        return fit, ScalingReport(None, None, None, None, None, monotone)
    held_out = successful[-1]
    predicted = float(predict_loss(fit, held_out.compute))
    actual = held_out.final_loss(ema_decay)
    error = relative_error(predicted, actual)
    within = error <= tolerance
    if not within:
        warnings.warn(
            f"Predicted loss {predicted:.4f} of run {held_out.name} is {error:.1%} off its "
            f"actual loss {actual:.4f}, more than {tolerance:.0%}"
        )
    logger.info(
        "Run %s: predicted loss %s, actual %s, relative error %s",
        held_out.name,
        predicted,
        actual,
        error,
    )
    return fit, ScalingReport(held_out.name, predicted, actual, error, within, monotone)


def train_run(
    width: int,
    layers: int,
    base: WorldModelConfig,
    training: WorldModelTrainingConfig,
    dataset: WindowDataset,
    validation: WindowDataset,
    seed: int,
    metrics: Optional[MetricsLog] = None,
    show_progress: bool = False,
) -> RunRecord:
    """Train one size and record its validation curve. Divergence yields a failed record."""
    config = replace(base, width=width, layers=layers)
    torch.manual_seed(derive_seed(seed, "scaling", "init", width, layers))
    model = WorldModel(config)
    mean, std = action_statistics(dataset)
    model.set_action_statistics(mean, std)
    num_parameters = count_parameters(model)
    tokens_seen = training.steps * training.batch_size * config.layout.sequence_length()
    compute = total_compute(num_parameters, tokens_seen)
    name = f"{width}x{layers}"
    try:
        result = train_world_model(
            model,
            dataset,
            training,
            seed=derive_seed(seed, "scaling", "train", width, layers),
            validation=validation,
            metrics=metrics,
            metric_prefix=f"scaling/{name}/",
            show_progress=show_progress,
        )
    except TrainingDivergedError as e:
        warnings.warn(f"Scaling run {name} diverged and is excluded: {e}")
        return RunRecord(
            width, layers, num_parameters, tokens_seen, compute, failed=True, error=str(e)
        )
    logger.info("Scaling run %s: N=%s, C=%.3g FLOPs", name, num_parameters, compute)
    return RunRecord(width, layers, num_parameters, tokens_seen, compute, result.validation)


def run_scaling_study(
    config: ScalingConfig,
    base: WorldModelConfig,
    dataset: WindowDataset,
    validation: WindowDataset,
    seed: int = 0,
    records_path: Optional[Union[str, Path]] = None,
    metrics: Optional[MetricsLog] = None,
    show_progress: bool = False,
) -> ScalingStudyResult:
    """Train every size of `config.sizes` in turn, then fit and report."""
    records = []
    for width, layers in config.sizes:
        records.append(
            train_run(
                width,
                layers,
                base,
                config.training,
                dataset,
                validation,
                seed,
                metrics=metrics,
                show_progress=show_progress,
            )
        )
        if records_path is not None:
            write_records(records, records_path)
    fit, report = fit_records(
        records,
        ema_decay=config.ema_decay,
        holdout_largest=config.holdout_largest,
        tolerance=config.tolerance,
        monotone_tolerance=config.monotone_tolerance,
    )
    return ScalingStudyResult(records=records, fit=fit, report=report)


def fit_curve(fit: PowerLawFit, low: float, high: float, points: int = 100) -> np.ndarray:
    """(points, 2) compute and predicted loss over a log-spaced range."""
    compute = np.logspace(math.log10(low), math.log10(high), points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        loss = predict_loss(fit, compute)
    return np.stack([compute, loss], axis=1)
