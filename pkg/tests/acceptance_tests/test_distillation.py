import logging
import os
import unittest

from WorldSim.applications import run_distillation_study
from WorldSim.synthworld.dataset_io import generate_dataset
from WorldSim.synthworld.world import WorldConfig
from WorldSim.tokenizer import TokenizerConfig, TokenizerTrainingConfig

ACCEPTANCE = os.environ.get("WORLDSIM_ACCEPTANCE") == "1"

logger = logging.getLogger(__name__)


@unittest.skipUnless(ACCEPTANCE, "set WORLDSIM_ACCEPTANCE=1 to run acceptance tests")
class TestDistillation(unittest.TestCase):
    def test_distillation_groups_features_by_class(self):
        world = WorldConfig()
        result = run_distillation_study(
            generate_dataset(world, range(8)),
            generate_dataset(world, range(8, 10)),
            TokenizerConfig(),
            TokenizerTrainingConfig(),
            distill_weight=0.1,
        )
        logger.warning(
            "Within-class similarity %.4f with distillation, %.4f without",
            result.with_distillation,
            result.without_distillation,
        )
        assert result.margin > 0, result
