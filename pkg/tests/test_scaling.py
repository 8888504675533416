import math
import tempfile
import unittest
import warnings
from pathlib import Path
from unittest.mock import patch

import numpy as np

from WorldSim.scaling import (
    ExtrapolationWarning,
    PowerLawFit,
    RunRecord,
    ScalingConfig,
    compute_per_token,
    ema_smooth,
    fit_power_law,
    fit_records,
    predict_loss,
    read_records,
    run_scaling_study,
    total_compute,
    write_records,
)
from WorldSim.scaling.study import is_monotone
from WorldSim.utils.training import OptimizerConfig, TrainingDivergedError
from WorldSim.world_model import SequenceLayout, WorldModelConfig, WorldModelTrainingConfig
from WorldSim.world_model.training import WindowDataset


def law(compute, a=1e6, b=-0.3, c=1.5):
    return c + (np.asarray(compute, dtype=float) / a) ** b


def synthetic_records(num_parameters=(1e3, 1e4, 1e5, 1e6, 1e7), tokens=1e6):
    records = []
    for n in num_parameters:
        compute = total_compute(int(n), int(tokens))
        records.append(
            RunRecord(
                width=int(n),
                layers=1,
                num_parameters=int(n),
                tokens_seen=int(tokens),
                compute=compute,
                loss_curve=[(0, 10.0), (10, float(law(compute, a=1e8)))],
            )
        )
    return records


def random_windows(layout, count, seed):
    rng = np.random.default_rng(seed)
    steps = layout.time_steps
    return WindowDataset(
        text_ids=rng.integers(1, 20, size=(count, steps, layout.text_tokens)),
        image_tokens=rng.integers(0, 8, size=(count, steps, layout.image_tokens)),
        actions=rng.normal(size=(count, steps, layout.action_tokens)).astype(np.float32),
        layout=layout,
    )


class TestComputeAccounting(unittest.TestCase):
    def test_compute_per_token(self):
        assert math.isclose(compute_per_token(6.5e9), 3.9e10)
        assert compute_per_token(1) == 6

    def test_total_compute(self):
        assert math.isclose(total_compute(0.65e6, 1e6), 3.9e12)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            compute_per_token(0)
        with self.assertRaises(ValueError):
            total_compute(10, -1)


class TestEmaSmooth(unittest.TestCase):
    def test_zero_decay_is_identity(self):
        series = [3.0, 1.0, 2.0]
        assert ema_smooth(series, 0.0).tolist() == series

    def test_constant_series(self):
        assert np.allclose(ema_smooth([2.5] * 10, 0.9), 2.5, rtol=0, atol=1e-12)

    def test_step_series(self):
        assert np.allclose(ema_smooth([0.0, 1.0, 1.0, 1.0], 0.5), [0.0, 0.5, 0.75, 0.875])

    def test_range_and_length(self):
        series = np.random.default_rng(0).normal(size=200)
        smoothed = ema_smooth(series, 0.95)
        assert smoothed.shape == series.shape
        assert smoothed.min() >= series.min()
        assert smoothed.max() <= series.max()

    def test_invalid(self):
        with self.assertRaises(ValueError):
            ema_smooth([], 0.5)
        with self.assertRaises(ValueError):
            ema_smooth([1.0], 1.0)


class TestPowerLawFit(unittest.TestCase):
    def setUp(self):
        self.compute = np.logspace(6, 9, 12)
        self.loss = law(self.compute)

    def test_exact_recovery(self):
        fit = fit_power_law(self.compute, self.loss)
        assert abs(fit.a / 1e6 - 1) < 0.01
        assert abs(fit.b / -0.3 - 1) < 0.01
        assert abs(fit.c / 1.5 - 1) < 0.01
        assert fit.residual < 1e-6
        assert fit.num_points == 12

    def test_round_trip(self):
        fit = fit_power_law(self.compute, self.loss)
        grid = np.logspace(6, 9, 50)
        assert np.max(np.abs(predict_loss(fit, grid) - law(grid))) < 1e-6

    def test_point_order(self):
        order = np.random.default_rng(1).permutation(len(self.compute))
        assert fit_power_law(self.compute, self.loss) == fit_power_law(
            self.compute[order], self.loss[order]
        )

    def test_signs(self):
        noisy = self.loss + np.random.default_rng(2).normal(0, 0.01, size=self.loss.shape)
        fit = fit_power_law(self.compute, noisy)
        assert fit.a > 0
        assert fit.b < 0
        assert fit.c >= 0

    def test_narrow_range_warns(self):
        compute = np.logspace(6, 7, 6)
        with self.assertWarns(UserWarning):
            fit_power_law(compute, law(compute))

    def test_invalid_points(self):
        with self.assertRaises(ValueError):
            fit_power_law(self.compute[:3], self.loss[:3])
        with self.assertRaises(ValueError):
            fit_power_law([0.0, 1.0, 2.0, 3.0], [1.0, 1.0, 1.0, 1.0])
        with self.assertRaises(ValueError):
            fit_power_law(self.compute, self.loss[:-1])


class TestPredictLoss(unittest.TestCase):
    def setUp(self):
        self.fit = PowerLawFit(a=1e6, b=-0.3, c=1.5, max_compute=1e9)

    def test_at_scale(self):
        assert predict_loss(self.fit, 1e6) == 2.5

    def test_limit(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ExtrapolationWarning)
            assert abs(predict_loss(self.fit, 1e40) - 1.5) < 1e-6

    def test_extrapolation_flag(self):
        with self.assertWarns(ExtrapolationWarning):
            predict_loss(self.fit, 2.1e10)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            predict_loss(self.fit, 1.9e10)
        assert not [w for w in caught if issubclass(w.category, ExtrapolationWarning)]

    def test_array(self):
        assert predict_loss(self.fit, [1e6, 1e7]).shape == (2,)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            predict_loss(self.fit, 0.0)
        with self.assertRaises(ValueError):
            PowerLawFit(a=0.0, b=-0.3, c=1.0)


class TestRunRecords(unittest.TestCase):
    def test_invariants(self):
        with self.assertRaises(ValueError):
            RunRecord(32, 2, 100, 10, 5999.0, [(0, 1.0)])
        with self.assertRaises(ValueError):
            RunRecord(32, 2, 100, 10, 6000.0, [(5, 1.0), (5, 0.9)])
        with self.assertRaises(ValueError):
            RunRecord(32, 2, 0, 10, 0.0, [(0, 1.0)])
        with self.assertRaises(ValueError):
            RunRecord(32, 2, 100, 10, 6000.0)
        failed = RunRecord(32, 2, 100, 10, 6000.0, failed=True, error="diverged")
        assert failed.name == "32x2"

    def test_final_loss(self):
        record = RunRecord(32, 2, 100, 10, 6000.0, [(0, 4.0), (1, 2.0)])
        assert record.final_loss() == 2.0
        assert record.final_loss(0.5) == 3.0

    def test_jsonl(self):
        records = synthetic_records()
        records.append(RunRecord(8, 1, 100, 10, 6000.0, failed=True, error="diverged"))
        with tempfile.TemporaryDirectory() as directory:
            path = write_records(records, Path(directory) / "records.jsonl")
            assert len(path.read_text().splitlines()) == len(records)
            assert read_records(path) == records
            assert len(read_records([path, path])) == 2 * len(records)
            broken = Path(directory) / "broken.jsonl"
            broken.write_text('{"width": 1}\n')
            with self.assertRaises(ValueError):
                read_records(broken)
            broken.write_text("not json\n")
            with self.assertRaises(ValueError):
                read_records(broken)


class TestFitRecords(unittest.TestCase):
    def test_held_out_prediction(self):
        fit, report = fit_records(synthetic_records(), holdout_largest=True)
        assert fit.num_points == 4
        assert report.held_out == f"{int(1e7)}x1"
        assert report.relative_error < 0.01
        assert report.within_tolerance
        assert report.monotone

    def test_soft_failure_warns(self):
        records = synthetic_records()
        largest = records[-1]
        records[-1] = RunRecord(
            largest.width,
            largest.layers,
            largest.num_parameters,
            largest.tokens_seen,
            largest.compute,
            [(0, 10.0), (10, 2.0 * largest.final_loss())],
        )
        with self.assertWarns(UserWarning):
            _, report = fit_records(records, holdout_largest=True)
        assert not report.within_tolerance
        assert not report.monotone

    def test_failed_runs_are_skipped(self):
        records = synthetic_records()
        records.insert(2, RunRecord(8, 1, 100, 10, 6000.0, failed=True, error="diverged"))
        fit, report = fit_records(records)
        assert fit.num_points == 5
        assert report.held_out is None
        with self.assertRaises(ValueError):
            fit_records(records[:4])

    def test_duplicates_are_allowed(self):
        records = synthetic_records()
        fit, _ = fit_records(records + records[:1])
        assert fit.num_points == 6
        assert abs(fit.b / -0.3 - 1) < 0.01

    def test_monotone(self):
        def records(losses):
            return [
                RunRecord(8, 1, 10 * (i + 1), 10, 600.0 * (i + 1), [(0, loss)])
                for i, loss in enumerate(losses)
            ]

        assert is_monotone(records([3.0, 2.5, 2.53]), 0.05)
        assert not is_monotone(records([3.0, 2.5, 2.6]), 0.05)


class TestScalingStudy(unittest.TestCase):
    def setUp(self):
        self.base = WorldModelConfig(
            time_steps=2,
            text_tokens=2,
            image_tokens=4,
            action_tokens=2,
            width=8,
            layers=1,
            heads=2,
            codebook_size=8,
        )
        layout = SequenceLayout(2, 2, 4, 2)
        self.dataset = random_windows(layout, 16, 0)
        self.validation = random_windows(layout, 4, 1)
        self.config = ScalingConfig(
            sizes=[[8, 1], [12, 1], [16, 1], [24, 1], [32, 1]],
            training=WorldModelTrainingConfig(
                steps=2,
                batch_size=2,
                eval_every=1,
                optimizer=OptimizerConfig(lr=1e-3, warmup_steps=0),
            ),
        )

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            ScalingConfig(sizes=[[8, 1]] * 4)
        ScalingConfig(sizes=[[8, 1]] * 4, holdout_largest=False)
        with self.assertRaises(ValueError):
            ScalingConfig(sizes=[[8, 1]] * 4 + [[8]], holdout_largest=False)

    def test_study(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "records.jsonl"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result = run_scaling_study(
                    self.config, self.base, self.dataset, self.validation, records_path=path
                )
            assert read_records(path) == result.records
        assert len(result.records) == 5
        parameters = [r.num_parameters for r in result.records]
        assert parameters == sorted(parameters)
        assert len({r.tokens_seen for r in result.records}) == 1
        assert result.records[0].tokens_seen == 2 * 2 * 16
        assert all(len(r.loss_curve) == 2 for r in result.records)
        assert result.report.held_out == "32x1"
        assert result.fit.num_points == 4

    def test_divergence_is_recorded(self):
        from WorldSim.world_model import train_world_model

        def diverge_at_width_16(model, *args, **kwargs):
            if model.config.width == 16:
                raise TrainingDivergedError("World model loss diverged at step 0: nan")
            return train_world_model(model, *args, **kwargs)

        config = ScalingConfig(
            sizes=self.config.sizes + [[40, 1]], training=self.config.training
        )
        with patch(
            "WorldSim.scaling.study.train_world_model", side_effect=diverge_at_width_16
        ):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                result = run_scaling_study(config, self.base, self.dataset, self.validation)
        failed = [r for r in result.records if r.failed]
        assert [r.name for r in failed] == ["16x1"]
        assert any("16x1" in str(w.message) for w in caught)
        assert result.fit.num_points == 4
