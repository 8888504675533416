from .action_sensitivity import (
    ActionSensitivityResult,
    action_sensitivity,
    hamming_distances,
)
from .distillation_study import (
    DistillationStudyResult,
    quantized_similarity,
    run_distillation_study,
)
from .perplexity_study import perplexity_profiles, write_perplexity_study

__all__ = [
    "ActionSensitivityResult",
    "DistillationStudyResult",
    "action_sensitivity",
    "hamming_distances",
    "perplexity_profiles",
    "quantized_similarity",
    "run_distillation_study",
    "write_perplexity_study",
]
