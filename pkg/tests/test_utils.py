import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from WorldSim.metrics import MetricsLog, read_metrics
from WorldSim.utils.data_types import CheckpointHeader, FeatureRecord
from WorldSim.utils.default_data import CAPTION_VOCABULARY, PAD_WORD
from WorldSim.utils.seeding import derive_seed, numpy_generator, torch_generator
from WorldSim.utils.tensor_io import TensorFormatError, read_tensor, write_tensor
from WorldSim.utils.text import PAD_ID, detokenize_caption, tokenize_caption
from WorldSim.utils.training import (
    OptimizerConfig,
    TrainingDivergedError,
    check_finite_loss,
    warmup_cosine_factor,
)
from WorldSim.utils.validation import (
    validate_bin_edges,
    validate_range,
    validate_ratios,
    validate_unit_interval,
)


class TestRecords(unittest.TestCase):
    def test_mutable_record(self):
        record = FeatureRecord(weather="sun")
        record["light"] = "day"
        del record["weather"]
        assert record == {"light": "day"}

    def test_frozen_record(self):
        record = FeatureRecord(weather="sun").frozen()
        assert isinstance(record, FeatureRecord)
        with self.assertRaises(TypeError):
            record["weather"] = "rain"
        with self.assertRaises(TypeError):
            del record["weather"]

    def test_immutable_header(self):
        header = CheckpointHeader({"kind": "decoder"}, mutable=False)
        with self.assertRaises(TypeError):
            header["kind"] = "tokenizer"
        assert header["kind"] == "decoder"


class TestTensorFiles(unittest.TestCase):
    def test_round_trip(self):
        with tempfile.TemporaryDirectory() as directory:
            for array in (
                np.arange(24, dtype=np.int64).reshape(2, 3, 4),
                np.linspace(0, 1, 6, dtype=np.float32).reshape(3, 2),
                np.zeros((0, 5), dtype=np.uint8),
                np.array(3.5),
            ):
                path = Path(directory) / "tensor.wst"
                write_tensor(path, array)
                loaded = read_tensor(path)
                assert loaded.dtype == array.dtype
                assert np.array_equal(loaded, array)

    def test_unsupported_dtype(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(TensorFormatError):
                write_tensor(Path(directory) / "t.wst", np.zeros(3, dtype=np.complex64))

    def test_rank_limit(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(TensorFormatError):
                write_tensor(Path(directory) / "t.wst", np.zeros((1,) * 7))

    def test_corrupt_files(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "t.wst"
            path.write_bytes(b"WSTN")
            with self.assertRaises(TensorFormatError):
                read_tensor(path)
            write_tensor(path, np.ones(4, dtype=np.float32))
            path.write_bytes(b"XXXX" + path.read_bytes()[4:])
            with self.assertRaises(TensorFormatError):
                read_tensor(path)
            write_tensor(path, np.ones(4, dtype=np.float32))
            path.write_bytes(path.read_bytes()[:-2])
            with self.assertRaises(TensorFormatError):
                read_tensor(path)


class TestSeeding(unittest.TestCase):
    def test_derive_seed_is_stable(self):
        assert derive_seed(7, "world_model", 3) == derive_seed(7, "world_model", 3)
        assert derive_seed(7, "world_model", 3) != derive_seed(7, "world_model", 4)
        assert derive_seed(7, "a") != derive_seed(8, "a")
        assert 0 <= derive_seed(0) < 2**63

    def test_generators(self):
        assert np.array_equal(
            numpy_generator(1, "x").random(5), numpy_generator(1, "x").random(5)
        )
        first = torch.rand(5, generator=torch_generator(1, "x"))
        assert torch.equal(first, torch.rand(5, generator=torch_generator(1, "x")))


class TestCaptions(unittest.TestCase):
    def test_pad_is_zero(self):
        assert CAPTION_VOCABULARY[0] == PAD_WORD
        assert PAD_ID == 0

    def test_padding_and_truncation(self):
        ids = tokenize_caption("sunny day", 4)
        assert len(ids) == 4
        assert ids[2:] == [PAD_ID, PAD_ID]
        assert detokenize_caption(ids) == "sunny day"
        assert tokenize_caption("sunny day scene", 1) == tokenize_caption("sunny", 1)
        assert tokenize_caption("sunny", 0) == []

    def test_unknown_word(self):
        with self.assertRaises(KeyError):
            tokenize_caption("purple day", 4)

    def test_truncation_is_logged(self):
        with self.assertLogs("WorldSim.utils.text", level="DEBUG") as logs:
            ids = tokenize_caption("rainy night scene red light", 4)
        assert detokenize_caption(ids) == "rainy night scene red"
        assert "keeping the first 4" in logs.output[0]

    def test_invalid_id(self):
        with self.assertRaises(ValueError):
            detokenize_caption([len(CAPTION_VOCABULARY)])


class TestValidation(unittest.TestCase):
    def test_range(self):
        assert validate_range("speed_range", [1.0, 2.0]) is True
        assert validate_range("speed_range", [1.0, 1.0]) is True
        with self.assertRaises(ValueError):
            validate_range("speed_range", [2.0, 1.0])
        with self.assertRaises(ValueError):
            validate_range("speed_range", [1.0])
        with self.assertRaises(ValueError):
            validate_range("speed_range", [0.0, math.inf])

    def test_bin_edges(self):
        assert validate_bin_edges("speed", [0, 1, 2]) is True
        with self.assertRaises(ValueError):
            validate_bin_edges("speed", [0])
        with self.assertRaises(ValueError):
            validate_bin_edges("speed", [0, 1, 1])

    def test_ratios(self):
        assert validate_ratios("conditioning_ratios", [0.2, 0.4, 0.4]) is True
        with self.assertRaises(ValueError) as context:
            validate_ratios("conditioning_ratios", [0.2, 0.3, 0.4])
        assert "conditioning_ratios" in str(context.exception)
        with self.assertRaises(ValueError):
            validate_ratios("conditioning_ratios", [1.2, -0.2])

    def test_unit_interval(self):
        assert validate_unit_interval("p", 1.0) is True
        with self.assertRaises(ValueError):
            validate_unit_interval("decay", 1.0, closed_right=False)
        with self.assertRaises(ValueError):
            validate_unit_interval("p", -0.1)


class TestTrainingUtilities(unittest.TestCase):
    def test_warmup_then_cosine(self):
        assert warmup_cosine_factor(0, 10, 110, 0.1) == 0.1
        assert warmup_cosine_factor(9, 10, 110, 0.1) == 1.0
        assert warmup_cosine_factor(10, 10, 110, 0.1) == 1.0
        assert abs(warmup_cosine_factor(60, 10, 110, 0.1) - 0.55) < 1e-12
        assert abs(warmup_cosine_factor(110, 10, 110, 0.1) - 0.1) < 1e-12
        assert warmup_cosine_factor(5, 0, 5, 0.2) == 0.2

    def test_optimizer_config_validation(self):
        with self.assertRaises(ValueError):
            OptimizerConfig(lr=0.0)
        with self.assertRaises(ValueError):
            OptimizerConfig(betas=[0.9])
        with self.assertRaises(ValueError):
            OptimizerConfig(final_lr_ratio=1.5)

    def test_finite_loss(self):
        assert check_finite_loss(1.5, 0, "Decoder") == 1.5
        with self.assertRaises(TrainingDivergedError):
            check_finite_loss(math.nan, 3, "Decoder")
        with self.assertRaises(RuntimeError):
            check_finite_loss(math.inf, 3, "Decoder")


class TestMetricsLog(unittest.TestCase):
    def test_rows_are_appended(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "metrics" / "run.jsonl"
            metrics = MetricsLog(path)
            metrics.log(0, "loss", 2.0)
            metrics.log_many(1, {"loss": 1.5, "l1": 0.5}, prefix="")
            rows = read_metrics(path)
            assert [row["metric"] for row in rows] == ["loss", "loss", "l1"]
            assert set(rows[0]) == {"wall_time", "step", "metric", "value"}
            assert metrics.series("loss") == [2.0, 1.5]
            reopened = MetricsLog(path)
            assert reopened.series("loss") == [2.0, 1.5]
            with self.assertRaises(ValueError):
                reopened.log(0, "loss", 1.0)
            reopened.log(0, "other", 1.0)

    def test_step_order_per_metric(self):
        metrics = MetricsLog()
        metrics.log(5, "a", 1.0)
        metrics.log(5, "a", 1.0)
        metrics.log(2, "b", 1.0)
        with self.assertRaises(ValueError):
            metrics.log(4, "a", 1.0)

    def test_invalid_line(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "bad.jsonl"
            path.write_text('{"step": 0}\nnot json\n')
            with self.assertRaises(ValueError):
                read_metrics(path)
