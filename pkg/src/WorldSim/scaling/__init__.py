from .power_law import (
    ExtrapolationWarning,
    PowerLawFit,
    compute_per_token,
    ema_smooth,
    fit_power_law,
    predict_loss,
    total_compute,
)
from .study import (
    RunRecord,
    ScalingConfig,
    ScalingReport,
    ScalingStudyResult,
    fit_records,
    read_records,
    run_scaling_study,
    write_records,
)

__all__ = [
    "ExtrapolationWarning",
    "PowerLawFit",
    "RunRecord",
    "ScalingConfig",
    "ScalingReport",
    "ScalingStudyResult",
    "compute_per_token",
    "ema_smooth",
    "fit_power_law",
    "fit_records",
    "predict_loss",
    "read_records",
    "run_scaling_study",
    "total_compute",
    "write_records",
]
