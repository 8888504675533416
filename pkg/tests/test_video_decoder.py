import unittest
from unittest.mock import patch

import numpy as np
import torch
from einops import rearrange
from torch import nn

from WorldSim.utils.training import OptimizerConfig, TrainingDivergedError
from WorldSim.video_decoder import (
    DecoderConfig,
    DecoderEpisode,
    DecoderTask,
    DecoderTaskMask,
    DecoderTrainingConfig,
    DiffusionBatch,
    ExponentialMovingAverage,
    NoiseSchedule,
    VideoUNet,
    cosine_schedule,
    ddim_step,
    decoder_loss,
    denoise,
    ema_update,
    frames_to_model_space,
    masked_v_loss,
    mixed_denoise,
    model_space_to_frames,
    noise,
    recover_x0,
    sample_clip,
    sample_task,
    task_mask,
    token_dropout,
    train_decoder,
    v_target,
)
from WorldSim.video_decoder.tasks import task_family
from WorldSim.video_decoder.training import sample_clip_indices


def tiny_config(**overrides):
    values = dict(
        max_frames=3,
        height=8,
        width=8,
        codebook_size=4,
        downsample_factor=2,
        base_channels=4,
        token_dim=2,
        time_dim=8,
        heads=2,
        sampling_steps=3,
    )
    values.update(overrides)
    return DecoderConfig(**values)


def tiny_decoder(seed=0):
    torch.manual_seed(seed)
    return VideoUNet(tiny_config()).eval()


def random_tokens(batch=1, frames=3, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.randint(4, (batch, frames, 4, 4), generator=generator)


class ToyDenoiser(nn.Module):
    """Per-pixel linear denoiser with the decoder's call signature."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.schedule = NoiseSchedule()
        self.null_id = config.codebook_size
        self.token_embedding = nn.Embedding(config.codebook_size + 1, 3)
        self.mix = nn.Linear(5, 3)

    def forward(self, x, t, tokens, frame_mask, temporal=True):
        factor = self.config.downsample_factor
        token_features = self.token_embedding(tokens)
        token_features = token_features.repeat_interleave(factor, dim=2).repeat_interleave(
            factor, dim=3
        )
        pixels = rearrange(x, "b f c h w -> b f h w c")
        mask = frame_mask.to(x.dtype)[..., None, None, None].expand(*pixels.shape[:4], 1)
        times = t.to(x.dtype)[:, None, None, None, None].expand(*pixels.shape[:4], 1)
        out = self.mix(torch.cat([pixels, mask, times], dim=-1)) + token_features
        return rearrange(out, "b f h w c -> b f c h w")


class TestNoiseSchedule(unittest.TestCase):
    def test_endpoints(self):
        alpha, sigma = cosine_schedule(0.0)
        assert float(alpha) == 1.0
        assert float(sigma) == 0.0
        assert float(cosine_schedule(1.0)[1]) >= 0.99

    def test_unit_norm(self):
        alpha, sigma = cosine_schedule(torch.rand(1000, dtype=torch.float64))
        assert torch.max(torch.abs(alpha**2 + sigma**2 - 1.0)) <= 1e-6

    def test_monotone(self):
        alpha, sigma = cosine_schedule(torch.linspace(0, 1, 101, dtype=torch.float64))
        assert torch.all(alpha[1:] <= alpha[:-1])
        assert torch.all(sigma[1:] >= sigma[:-1])

    def test_out_of_range(self):
        with self.assertRaises(ValueError):
            cosine_schedule(-0.1)
        with self.assertRaises(ValueError):
            cosine_schedule(torch.tensor([0.5, 1.1]))
        with self.assertRaises(ValueError):
            NoiseSchedule(offset=-0.1)


class TestVParameterization(unittest.TestCase):
    def setUp(self):
        generator = torch.Generator().manual_seed(0)
        self.x0 = torch.randn(4, 3, 3, 8, 8, generator=generator, dtype=torch.float64)
        self.eps = torch.randn(4, 3, 3, 8, 8, generator=generator, dtype=torch.float64)

    def test_noise_at_zero(self):
        assert torch.equal(noise(self.x0, self.eps, 0.0), self.x0)

    def test_noise_of_zero_signal(self):
        sigma = float(cosine_schedule(0.4)[1])
        assert torch.allclose(noise(torch.zeros_like(self.x0), self.eps, 0.4), sigma * self.eps)

    def test_noise_linearity(self):
        scaled = noise(2.5 * self.x0, 2.5 * self.eps, 0.3)
        assert torch.allclose(scaled, 2.5 * noise(self.x0, self.eps, 0.3), atol=1e-12)

    def test_v_at_zero(self):
        assert torch.equal(v_target(self.x0, self.eps, 0.0), self.eps)

    def test_round_trip(self):
        t = torch.rand(4, dtype=torch.float64)
        x_t = noise(self.x0, self.eps, t)
        v = v_target(self.x0, self.eps, t)
        assert torch.max(torch.abs(recover_x0(x_t, v, t) - self.x0)) <= 1e-6

    def test_identical_signal_and_noise(self):
        alpha, sigma = (float(value) for value in cosine_schedule(0.6))
        assert torch.allclose(v_target(self.x0, self.x0, 0.6), (alpha - sigma) * self.x0)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            noise(self.x0, self.eps[:2], 0.5)
        with self.assertRaises(ValueError):
            noise(self.x0, self.eps, torch.rand(3))


class TestDDIM(unittest.TestCase):
    def setUp(self):
        generator = torch.Generator().manual_seed(1)
        self.x0 = torch.randn(2, 3, 3, 8, 8, generator=generator, dtype=torch.float64)
        self.eps = torch.randn(2, 3, 3, 8, 8, generator=generator, dtype=torch.float64)

    def test_same_time_is_identity(self):
        x_t = noise(self.x0, self.eps, 0.5)
        assert torch.equal(ddim_step(x_t, torch.randn_like(x_t), 0.5, 0.5), x_t)

    def test_oracle_step(self):
        x_t = noise(self.x0, self.eps, 0.7)
        stepped = ddim_step(x_t, v_target(self.x0, self.eps, 0.7), 0.7, 0.3)
        assert torch.max(torch.abs(stepped - noise(self.x0, self.eps, 0.3))) <= 1e-6

    def test_oracle_chain(self):
        times = np.linspace(1.0, 0.0, 11)
        x = noise(self.x0, self.eps, 1.0)
        for t, t_next in zip(times[:-1], times[1:]):
            x = ddim_step(x, v_target(self.x0, self.eps, t), t, t_next)
            assert torch.max(torch.abs(x - noise(self.x0, self.eps, t_next))) <= 1e-6

    def test_forward_step(self):
        with self.assertRaises(ValueError):
            ddim_step(self.x0, self.eps, 0.3, 0.5)


class TestDecoderTasks(unittest.TestCase):
    def test_family_frequencies(self):
        rng = np.random.default_rng(0)
        draws = [sample_task(rng) for _ in range(10_000)]
        families = [task_family(mask) for mask in draws]
        for family in ("image", "video", "autoregressive", "interpolation"):
            assert abs(families.count(family) / 10_000 - 0.25) <= 0.02
        forward = sum(m.task is DecoderTask.AUTOREGRESSIVE_FORWARD for m in draws)
        assert abs(forward / 10_000 - 0.125) <= 0.02

    def test_interpolation_mask(self):
        mask = task_mask(DecoderTask.INTERPOLATION, 3)
        assert mask.frame_mask == (False, True, False)
        assert not any(mask.token_mask)
        assert task_mask(DecoderTask.INTERPOLATION, 5).context_indices == (0, 2, 4)

    def test_image_mask(self):
        mask = task_mask(DecoderTask.IMAGE_GENERATION)
        assert mask.num_frames == 1
        assert not mask.temporal

    def test_autoregressive_masks(self):
        forward = task_mask(DecoderTask.AUTOREGRESSIVE_FORWARD, 3)
        backward = task_mask(DecoderTask.AUTOREGRESSIVE_BACKWARD, 3)
        assert forward.frame_mask == (False, False, True)
        assert backward.frame_mask == (True, False, False)
        assert backward.token_mask == backward.frame_mask
        assert task_mask(DecoderTask.AUTOREGRESSIVE_BACKWARD, 3).context_indices == (1, 2)

    def test_invalid_masks(self):
        with self.assertRaises(ValueError):
            DecoderTaskMask(DecoderTask.INTERPOLATION, (False, True, False), (True,) * 3)
        with self.assertRaises(ValueError):
            DecoderTaskMask(DecoderTask.AUTOREGRESSIVE_FORWARD, (True,) * 3, (True,) * 3)
        with self.assertRaises(ValueError):
            DecoderTaskMask(DecoderTask.IMAGE_GENERATION, (True,), (True,), temporal=True)
        with self.assertRaises(ValueError):
            task_mask(DecoderTask.INTERPOLATION, 4)


class TestTokenDropout(unittest.TestCase):
    def setUp(self):
        self.tokens = torch.randint(4, (100, 1000), generator=torch.Generator().manual_seed(0))

    def test_extremes(self):
        assert torch.equal(token_dropout(self.tokens, 0.0, 4), self.tokens)
        assert torch.all(token_dropout(self.tokens, 1.0, 4) == 4)

    def test_fraction(self):
        dropped = token_dropout(self.tokens, 0.15, 4, torch.Generator().manual_seed(3))
        assert abs(float((dropped == 4).float().mean()) - 0.15) <= 0.01

    def test_deterministic(self):
        first = token_dropout(self.tokens, 0.15, 4, torch.Generator().manual_seed(5))
        second = token_dropout(self.tokens, 0.15, 4, torch.Generator().manual_seed(5))
        assert torch.equal(first, second)

    def test_invalid_probability(self):
        with self.assertRaises(ValueError):
            token_dropout(self.tokens, 1.5, 4)


class TestDecoderLoss(unittest.TestCase):
    def test_perfect_and_zero_predictor(self):
        target = torch.ones(2, 3, 3, 8, 8)
        frame_mask = torch.tensor([[False, True, True]] * 2)
        assert float(masked_v_loss(target, target, frame_mask)) == 0.0
        zero = masked_v_loss(torch.zeros_like(target), target, frame_mask, 0.1, 1.0)
        assert abs(float(zero) - 1.1) <= 1e-6

    def test_context_frames_excluded(self):
        target = torch.randn(1, 3, 3, 8, 8)
        prediction = torch.randn(1, 3, 3, 8, 8, requires_grad=True)
        frame_mask = torch.tensor([[False, False, True]])
        loss = masked_v_loss(prediction, target, frame_mask)
        loss.backward()
        assert torch.all(prediction.grad[:, :2] == 0)
        assert torch.any(prediction.grad[:, 2] != 0)
        changed = prediction.detach().clone()
        changed[:, 0] += 10.0
        assert torch.equal(masked_v_loss(changed, target, frame_mask), loss.detach())

    def test_empty_mask(self):
        with self.assertRaises(ValueError):
            masked_v_loss(
                torch.zeros(1, 2, 3), torch.zeros(1, 2, 3), torch.zeros(1, 2, dtype=torch.bool)
            )

    def _batch(self, dtype=torch.float32, seed=0):
        generator = torch.Generator().manual_seed(seed)
        x = torch.rand(2, 3, 3, 8, 8, generator=generator, dtype=dtype) * 2 - 1
        return DiffusionBatch(
            x=x,
            tokens=random_tokens(batch=2, seed=seed),
            mask=task_mask(DecoderTask.AUTOREGRESSIVE_FORWARD, 3),
            t=torch.rand(2, generator=generator, dtype=dtype),
            eps=torch.randn(x.shape, generator=generator, dtype=dtype),
        )

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        model = ToyDenoiser(tiny_config()).double()
        assert sum(p.numel() for p in model.parameters()) <= 1000
        batch = self._batch(dtype=torch.float64)
        loss = decoder_loss(model, batch)
        loss.backward()
        step = 1e-6
        weight = model.mix.weight
        for index in range(weight.numel()):
            flat = weight.data.view(-1)
            original = float(flat[index])
            flat[index] = original + step
            upper = float(decoder_loss(model, batch))
            flat[index] = original - step
            lower = float(decoder_loss(model, batch))
            flat[index] = original
            numeric = (upper - lower) / (2 * step)
            analytic = float(weight.grad.view(-1)[index])
            assert abs(numeric - analytic) <= max(1e-3 * abs(numeric), 1e-8)

    def test_unet_loss_is_finite(self):
        loss = decoder_loss(tiny_decoder().train(), self._batch())
        assert torch.isfinite(loss)
        loss.backward()

    def test_batch_validation(self):
        batch = self._batch()
        with self.assertRaises(ValueError):
            DiffusionBatch(
                batch.x,
                batch.tokens,
                task_mask(DecoderTask.INTERPOLATION, 5),
                batch.t,
                batch.eps,
            )
        with self.assertRaises(ValueError):
            DiffusionBatch(batch.x, batch.tokens, batch.mask, batch.t + 2.0, batch.eps)


class TestExponentialMovingAverage(unittest.TestCase):
    def test_zero_decay_copies(self):
        shadow, live = [torch.zeros(3)], [torch.arange(3.0)]
        ema_update(shadow, live, 0.0)
        assert torch.equal(shadow[0], live[0])

    def test_geometric_convergence(self):
        shadow = [torch.zeros(2, dtype=torch.float64)]
        live = [torch.ones(2, dtype=torch.float64)]
        for _ in range(10):
            ema_update(shadow, live, 0.9)
        assert torch.allclose(shadow[0], torch.full((2,), 1 - 0.9**10, dtype=torch.float64))

    def test_errors(self):
        with self.assertRaises(ValueError):
            ema_update([torch.zeros(3)], [torch.zeros(4)], 0.5)
        with self.assertRaises(ValueError):
            ema_update([torch.zeros(3)], [torch.zeros(3)], 1.0)

    def test_model_average(self):
        model = nn.Linear(2, 2)
        ema = ExponentialMovingAverage(model, decay=0.5)
        before = ema.shadow.weight.detach().clone()
        with torch.no_grad():
            model.weight.add_(2.0)
        ema.update(model)
        assert torch.allclose(ema.shadow.weight, before + 1.0)
        assert not ema.shadow.weight.requires_grad


class TestVideoUNet(unittest.TestCase):
    def setUp(self):
        self.model = tiny_decoder()
        generator = torch.Generator().manual_seed(2)
        self.x = torch.randn(1, 3, 3, 8, 8, generator=generator)
        self.tokens = random_tokens()
        self.frame_mask = torch.ones(1, 3, dtype=torch.bool)
        self.t = torch.tensor([0.5])

    def test_output_shape(self):
        with torch.no_grad():
            out = self.model(self.x, self.t, self.tokens, self.frame_mask)
        assert out.shape == self.x.shape

    def test_image_mode_keeps_frames_independent(self):
        changed = self.x.clone()
        changed[:, 1] += 1.0
        with torch.no_grad():
            image = self.model(self.x, self.t, self.tokens, self.frame_mask, temporal=False)
            image_changed = self.model(
                changed, self.t, self.tokens, self.frame_mask, temporal=False
            )
            video = self.model(self.x, self.t, self.tokens, self.frame_mask)
            video_changed = self.model(changed, self.t, self.tokens, self.frame_mask)
        assert torch.allclose(image[:, 0], image_changed[:, 0], atol=1e-6)
        assert torch.max(torch.abs(video[:, 0] - video_changed[:, 0])) > 0

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            self.model(
                torch.zeros(1, 4, 3, 8, 8),
                self.t,
                random_tokens(frames=4),
                torch.ones(1, 4, dtype=torch.bool),
            )
        with self.assertRaises(ValueError):
            self.model(self.x, self.t, torch.zeros(1, 3, 2, 2, dtype=torch.long), self.frame_mask)

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            DecoderConfig(height=10, downsample_factor=4)
        with self.assertRaises(ValueError):
            DecoderConfig(time_dim=7)

    def test_pixel_conversion(self):
        frames = np.random.default_rng(0).random((2, 8, 8, 3))
        x = frames_to_model_space(frames)
        assert x.shape == (2, 3, 8, 8)
        assert np.allclose(model_space_to_frames(x), frames, atol=1e-6)


class TestSampling(unittest.TestCase):
    def setUp(self):
        self.model = tiny_decoder()
        generator = torch.Generator().manual_seed(4)
        self.x = torch.randn(1, 3, 3, 8, 8, generator=generator)
        self.tokens = random_tokens()
        self.frame_mask = torch.ones(1, 3, dtype=torch.bool)

    def test_no_mixing(self):
        with torch.no_grad():
            video = denoise(self.model, self.x, 0.5, self.tokens, self.frame_mask)
            out = mixed_denoise(
                self.model,
                self.x,
                0.5,
                self.tokens,
                self.frame_mask,
                0.5,
                0.0,
                np.random.default_rng(0),
            )
            zero_weight = mixed_denoise(
                self.model,
                self.x,
                0.5,
                self.tokens,
                self.frame_mask,
                0.0,
                1.0,
                np.random.default_rng(0),
            )
        assert torch.equal(out, video)
        assert torch.equal(zero_weight, video)

    def test_full_image_mode(self):
        with torch.no_grad():
            image = denoise(
                self.model, self.x, 0.5, self.tokens, self.frame_mask, temporal=False
            )
            out = mixed_denoise(
                self.model,
                self.x,
                0.5,
                self.tokens,
                self.frame_mask,
                1.0,
                1.0,
                np.random.default_rng(0),
            )
        assert torch.equal(out, image)

    def test_rng_consumed_every_step(self):
        first, second = np.random.default_rng(9), np.random.default_rng(9)
        with torch.no_grad():
            mixed_denoise(self.model, self.x, 0.5, self.tokens, self.frame_mask, 0.5, 0.0, first)
            mixed_denoise(self.model, self.x, 0.5, self.tokens, self.frame_mask, 0.5, 1.0, second)
        assert first.random() == second.random()

    def test_context_frames_unchanged(self):
        mask = task_mask(DecoderTask.AUTOREGRESSIVE_FORWARD, 3)
        clip = sample_clip(
            self.model,
            self.tokens,
            mask,
            context=self.x,
            generator=torch.Generator().manual_seed(0),
        )
        assert torch.equal(clip[:, :2], self.x[:, :2])
        assert not torch.equal(clip[:, 2], self.x[:, 2])

    def test_deterministic_chain(self):
        mask = task_mask(DecoderTask.VIDEO_GENERATION, 3)
        runs = [
            sample_clip(
                self.model,
                self.tokens,
                mask,
                steps=50,
                generator=torch.Generator().manual_seed(7),
                rng=np.random.default_rng(7),
            )
            for _ in range(2)
        ]
        assert torch.equal(runs[0], runs[1])

    def test_conditioning_changes_denoised_frame(self):
        mask = task_mask(DecoderTask.AUTOREGRESSIVE_BACKWARD, 3)
        other = self.tokens.clone()
        other[:, 0] = (other[:, 0] + 1) % 4
        clips = [
            sample_clip(
                self.model, tokens, mask, context=self.x, generator=torch.Generator().manual_seed(1)
            )
            for tokens in (self.tokens, other)
        ]
        assert float(torch.mean(torch.abs(clips[0][:, 0] - clips[1][:, 0]))) > 0
        assert torch.equal(clips[0][:, 1:], clips[1][:, 1:])

    def test_missing_context(self):
        with self.assertRaises(ValueError):
            sample_clip(self.model, self.tokens, task_mask(DecoderTask.INTERPOLATION, 3))


class TestDecoderTraining(unittest.TestCase):
    def _episodes(self):
        rng = np.random.default_rng(0)
        return [
            DecoderEpisode(frames=rng.random((12, 8, 8, 3)), tokens=rng.integers(0, 4, (12, 4, 4)))
            for _ in range(2)
        ]

    def test_clip_indices(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            index = sample_clip_indices(20, 3, [4, 2, 1], rng)
            assert index[-1] < 20
            assert len(set(np.diff(index))) == 1
            assert np.diff(index)[0] in (4, 2, 1)
        with self.assertRaises(ValueError):
            sample_clip_indices(2, 3, [1], rng)

    def test_short_training_run(self):
        torch.manual_seed(0)
        model = VideoUNet(tiny_config())
        config = DecoderTrainingConfig(
            steps=4,
            batch_size=2,
            ema_decay=0.5,
            optimizer=OptimizerConfig(lr=1e-3, warmup_steps=0),
        )
        result = train_decoder(model, self._episodes(), config, seed=0, show_progress=False)
        assert len(result.losses) == 4
        assert all(np.isfinite(result.losses))
        assert sum(result.task_counts.values()) == 4
        assert not torch.equal(result.ema.shadow.input.weight, model.input.weight)

    def test_diverged_loss_leaves_weights_untouched(self):
        torch.manual_seed(0)
        model = VideoUNet(tiny_config())
        before = {name: t.clone() for name, t in model.state_dict().items()}
        config = DecoderTrainingConfig(steps=2, batch_size=1)
        with patch(
            "WorldSim.video_decoder.training.decoder_loss",
            side_effect=lambda *args: decoder_loss(*args) * float("inf"),
        ):
            with self.assertRaises(TrainingDivergedError):
                train_decoder(model, self._episodes(), config, seed=0, show_progress=False)
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, before[name]), name

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            DecoderTrainingConfig(frames=2)
        with self.assertRaises(ValueError):
            DecoderTrainingConfig(ema_decay=1.0)
