import math
import unittest
from unittest.mock import patch

import numpy as np
import torch
from torch import nn

from WorldSim.utils.training import OptimizerConfig, TrainingDivergedError
from WorldSim.world_model import (
    ConditioningMode,
    Modality,
    MultimodalSequence,
    SequenceLayout,
    TokenizedEpisode,
    WorldModel,
    WorldModelConfig,
    WorldModelTrainingConfig,
    apply_conditioning_dropout,
    assemble_sequence,
    build_windows,
    count_parameters,
    sequence_length,
    train_world_model,
    world_model_loss,
)
from WorldSim.world_model.training import action_statistics, evaluate_loss


def tiny_config(**overrides):
    values = dict(
        time_steps=3,
        text_tokens=2,
        image_tokens=4,
        action_tokens=2,
        width=16,
        layers=2,
        heads=2,
        codebook_size=8,
    )
    values.update(overrides)
    return WorldModelConfig(**values)


def random_sequence(layout, batch=1, steps=None, seed=0, codebook_size=8, vocab_size=20):
    generator = torch.Generator().manual_seed(seed)
    steps = layout.time_steps if steps is None else steps
    return MultimodalSequence(
        text_ids=torch.randint(vocab_size, (batch, steps, layout.text_tokens), generator=generator),
        image_tokens=torch.randint(
            codebook_size, (batch, steps, layout.image_tokens), generator=generator
        ),
        actions=torch.randn(batch, steps, layout.action_tokens, generator=generator),
        text_present=torch.ones(batch, steps, dtype=torch.bool),
        action_present=torch.ones(batch, steps, dtype=torch.bool),
        layout=layout,
    )


def random_head_model(config, seed=0):
    torch.manual_seed(seed)
    model = WorldModel(config).eval()
    nn.init.normal_(model.head.weight)
    return model


class TestSequenceLayout(unittest.TestCase):
    def test_reference_length(self):
        assert sequence_length(26, 32, 576, 2) == 15_860

    def test_minimal_length(self):
        assert sequence_length(1, 0, 1, 0) == 1
        assert SequenceLayout(1, 0, 1, 0).sequence_length() == 1

    def test_desk_length(self):
        assert SequenceLayout().sequence_length() == 804

    def test_modality_by_slot(self):
        layout = SequenceLayout(2, 2, 3, 2)
        modalities = [layout.modality(s) for s in range(layout.step_length)]
        assert modalities == [Modality.TEXT] * 2 + [Modality.IMAGE] * 3 + [Modality.ACTION] * 2
        assert layout.position(9) == (1, 2)

    def test_invalid_layout(self):
        with self.assertRaises(ValueError):
            SequenceLayout(action_tokens=1)
        with self.assertRaises(ValueError):
            SequenceLayout(time_steps=0)


class TestAssembleSequence(unittest.TestCase):
    def setUp(self):
        self.layout = SequenceLayout(3, 4, 4, 2)

    def test_shapes_and_row_major(self):
        grids = [np.arange(4).reshape(2, 2) + 4 * t for t in range(2)]
        seq = assemble_sequence(
            ["rainy night scene", None], grids, np.ones((2, 2)), self.layout
        )
        assert seq.image_tokens[0, 1].tolist() == [4, 5, 6, 7]
        assert seq.text_present[0].tolist() == [True, False]
        assert seq.action_present[0].tolist() == [True, True]
        assert len(seq) == 2 * 10

    def test_length_mismatch(self):
        grids = [np.zeros((2, 2), dtype=int)] * 2
        with self.assertRaises(ValueError):
            assemble_sequence(["sunny"], grids, None, self.layout)
        with self.assertRaises(ValueError):
            assemble_sequence(["sunny"] * 2, grids, np.ones((3, 2)), self.layout)
        with self.assertRaises(ValueError):
            assemble_sequence(["sunny"], [np.zeros((3, 3), dtype=int)], None, self.layout)


class TestEmbeddings(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(1)
        self.model = WorldModel(tiny_config(text_tokens=4)).eval()

    def test_pad_only_caption(self):
        embedded = self.model.embed_text(torch.zeros(4, dtype=torch.long))
        assert torch.equal(embedded, embedded[:1].expand_as(embedded))

    def test_text_determinism_and_sensitivity(self):
        ids = torch.tensor([1, 5, 8, 9])
        assert torch.equal(self.model.embed_text(ids), self.model.embed_text(ids))
        changed = ids.clone()
        changed[2] = 10
        difference = (self.model.embed_text(ids) - self.model.embed_text(changed)).abs()
        assert difference.sum(dim=-1).gt(0).sum() >= 1

    def test_text_out_of_vocabulary(self):
        with self.assertRaises(ValueError):
            self.model.embed_text(torch.tensor([0, 99]))

    def test_action_linearity(self):
        with torch.no_grad():
            for projection in self.model.action_projections:
                projection.bias.zero_()
        zero = self.model.embed_actions(torch.tensor([0.0, 0.01]))
        assert torch.equal(zero[0], torch.zeros(16))
        single = self.model.embed_actions(torch.tensor([1.5, 0.0]))
        double = self.model.embed_actions(torch.tensor([3.0, 0.0]))
        assert torch.allclose(double[0], 2 * single[0], atol=1e-6)

    def test_action_slots_are_independent(self):
        first = self.model.embed_actions(torch.tensor([5.0, 0.01]))
        second = self.model.embed_actions(torch.tensor([5.0, -0.01]))
        assert torch.equal(first[0], second[0])
        assert not torch.equal(first[1], second[1])

    def test_non_finite_action(self):
        with self.assertRaises(ValueError):
            self.model.embed_actions(torch.tensor([float("nan"), 0.0]))

    def test_factorized_positions(self):
        table = self.model.positional_embeddings(3)
        difference = table[:, 1] - table[:, 5]
        assert torch.allclose(difference, difference[:1].expand_as(difference), atol=1e-7)


class TestForwardLogits(unittest.TestCase):
    def setUp(self):
        self.config = tiny_config()
        self.layout = self.config.layout
        self.model = random_head_model(self.config)

    def _perturb(self, seq, position):
        t, s = self.layout.position(position)
        perturbed = MultimodalSequence(
            text_ids=seq.text_ids.clone(),
            image_tokens=seq.image_tokens.clone(),
            actions=seq.actions.clone(),
            text_present=seq.text_present.clone(),
            action_present=seq.action_present.clone(),
            layout=seq.layout,
        )
        modality = self.layout.modality(s)
        if modality is Modality.TEXT:
            perturbed.text_ids[0, t, s] = (perturbed.text_ids[0, t, s] + 1) % 20
        elif modality is Modality.IMAGE:
            slot = s - self.layout.text_tokens
            perturbed.image_tokens[0, t, slot] = (perturbed.image_tokens[0, t, slot] + 1) % 8
        else:
            slot = s - self.layout.text_tokens - self.layout.image_tokens
            perturbed.actions[0, t, slot] += 1.0
        return perturbed

    def test_strict_causality(self):
        rng = np.random.default_rng(0)
        length = self.layout.sequence_length()
        with torch.no_grad():
            for trial in range(100):
                seq = random_sequence(self.layout, seed=trial)
                position = int(rng.integers(1, length))
                before = self.model(seq)
                after = self.model(self._perturb(seq, position))
                assert (before[:, :position] - after[:, :position]).abs().max() <= 1e-5

    def test_index_discipline(self):
        seq = random_sequence(self.layout, seed=3)
        with torch.no_grad():
            reference = self.model.image_logits(seq)[:, 1]
            later = random_sequence(self.layout, seed=3)
            later.actions[0, 1] += 2.0
            later.text_ids[0, 2] = (later.text_ids[0, 2] + 3) % 20
            assert (self.model.image_logits(later)[:, 1] - reference).abs().max() <= 1e-5
            current = random_sequence(self.layout, seed=3)
            current.text_ids[0, 1] = (current.text_ids[0, 1] + 3) % 20
            assert (self.model.image_logits(current)[:, 1] - reference).abs().max() > 0

    def test_empty_context_prior_is_finite(self):
        seq = random_sequence(self.layout, steps=1)
        with torch.no_grad():
            logits = self.model.image_logits(seq)
        assert torch.isfinite(logits).all()

    def test_batch_independence(self):
        seq = random_sequence(self.layout, batch=4, seed=5)
        permutation = torch.tensor([2, 0, 3, 1])
        with torch.no_grad():
            logits = self.model(seq)
            permuted = self.model(seq.select(permutation))
        assert (logits[permutation] - permuted).abs().max() <= 1e-6

    def test_overlong_sequence(self):
        longer = SequenceLayout(4, 2, 4, 2)
        with self.assertRaises(ValueError):
            self.model(random_sequence(longer))


class TestWorldModelLoss(unittest.TestCase):
    def test_untrained_loss_is_log_k(self):
        torch.manual_seed(0)
        config = tiny_config(codebook_size=64)
        model = WorldModel(config)
        seq = random_sequence(config.layout, batch=2, codebook_size=64)
        assert abs(float(world_model_loss(model, seq)) - math.log(64)) <= 1e-6

    def test_null_conditioning_keeps_loss_positions(self):
        config = tiny_config()
        model = random_head_model(config)
        seq = random_sequence(config.layout, batch=2)
        logits = model.image_logits(seq)
        assert logits.shape[:3] == (2, config.time_steps, config.image_tokens)
        loss = world_model_loss(model, seq, ConditioningMode.UNCONDITIONED)
        assert torch.isfinite(loss)

    def test_confident_correct_logits(self):
        config = tiny_config()
        model = WorldModel(config)
        seq = random_sequence(config.layout, batch=2)
        perfect = torch.nn.functional.one_hot(seq.image_tokens, 8).float() * 100.0
        with patch.object(WorldModel, "image_logits", return_value=perfect):
            assert float(world_model_loss(model, seq)) < 1e-6

    def test_count_parameters(self):
        d, k, layers = 16, 8, 2
        model = WorldModel(tiny_config(width=d, codebook_size=k, layers=layers))
        attention = (3 * d * d + 3 * d) + (d * d + d)
        mlp = (4 * d * d + 4 * d) + (4 * d * d + d)
        block = 2 * (2 * d) + attention + mlp
        expected = layers * block + (d * d + d) + 2 * (d + d) + 2 * d + (d * k + k)
        assert count_parameters(model) == expected
        total = count_parameters(model, exclude_embeddings=False)
        embeddings = 20 * d + k * d + 3 * d + 3 * d + 8 * d
        assert total == expected + embeddings


class TestConditioningDropout(unittest.TestCase):
    def setUp(self):
        self.layout = SequenceLayout(1, 1, 1, 2)

    def test_all_unconditioned(self):
        seq = random_sequence(self.layout, batch=10)
        dropped, modes = apply_conditioning_dropout(seq, (1.0, 0.0, 0.0), seed=0)
        assert all(mode is ConditioningMode.UNCONDITIONED for mode in modes)
        assert not dropped.text_present.any()
        assert not dropped.action_present.any()

    def test_frequencies(self):
        seq = random_sequence(self.layout, batch=10_000)
        dropped, modes = apply_conditioning_dropout(seq, (0.2, 0.4, 0.4), seed=1)
        for mode, ratio in zip(
            (
                ConditioningMode.UNCONDITIONED,
                ConditioningMode.ACTION_CONDITIONED,
                ConditioningMode.TEXT_CONDITIONED,
            ),
            (0.2, 0.4, 0.4),
        ):
            assert abs(modes.count(mode) / 10_000 - ratio) <= 0.02
        text_only = [m is ConditioningMode.TEXT_CONDITIONED for m in modes]
        assert dropped.text_present[:, 0].tolist() == text_only

    def test_deterministic(self):
        seq = random_sequence(self.layout, batch=50)
        first = apply_conditioning_dropout(seq, seed=3)[1]
        assert first == apply_conditioning_dropout(seq, seed=3)[1]

    def test_invalid_ratios(self):
        seq = random_sequence(self.layout, batch=2)
        with self.assertRaises(ValueError):
            apply_conditioning_dropout(seq, (0.2, 0.3, 0.4))
        with self.assertRaises(ValueError):
            WorldModelTrainingConfig(conditioning_ratios=[0.3, 0.3, 0.3])


class TestWorldModelTraining(unittest.TestCase):
    def _episode(self, length=100, seed=0):
        rng = np.random.default_rng(seed)
        return TokenizedEpisode(
            tokens=rng.integers(0, 8, size=(length, 2, 2)),
            actions=rng.normal(size=(length, 2)),
            caption="sunny day scene green light",
            rate=25.0,
        )

    def test_build_windows(self):
        layout = SequenceLayout(3, 2, 4, 2)
        dataset = build_windows([self._episode()], layout, subsample_factor=4)
        assert len(dataset) == 23
        assert dataset.image_tokens.shape == (23, 3, 4)
        assert dataset.text_ids.shape == (23, 3, 2)
        with self.assertRaises(ValueError):
            build_windows([self._episode(length=8)], layout, subsample_factor=4)

    def test_action_statistics(self):
        layout = SequenceLayout(3, 2, 4, 2)
        mean, std = action_statistics(build_windows([self._episode()], layout))
        assert mean.shape == (2,)
        assert np.all(std > 0)

    def test_training_reduces_loss(self):
        config = tiny_config()
        torch.manual_seed(0)
        model = WorldModel(config)
        dataset = build_windows([self._episode(length=12)], config.layout, subsample_factor=4)
        training = WorldModelTrainingConfig(
            steps=60,
            batch_size=2,
            optimizer=OptimizerConfig(lr=3e-3, warmup_steps=0, weight_decay=0.0),
        )
        result = train_world_model(
            model, dataset, training, seed=0, validation=dataset, show_progress=False
        )
        assert len(result.losses) == 60
        assert result.losses[-1] < result.losses[0]
        assert result.validation[-1][0] == 59
        assert evaluate_loss(model, dataset) < math.log(8)

    def test_diverged_loss_leaves_weights_untouched(self):
        config = tiny_config()
        torch.manual_seed(0)
        model = WorldModel(config)
        dataset = build_windows([self._episode(length=12)], config.layout, subsample_factor=4)
        before = {name: t.clone() for name, t in model.state_dict().items()}
        with patch(
            "WorldSim.world_model.training.world_model_loss",
            side_effect=lambda m, batch: world_model_loss(m, batch) * float("nan"),
        ):
            with self.assertRaises(TrainingDivergedError):
                train_world_model(
                    model,
                    dataset,
                    WorldModelTrainingConfig(steps=3, batch_size=2),
                    seed=0,
                    show_progress=False,
                )
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, before[name]), name
