import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import torch
from PIL import Image
from torch import nn

from WorldSim.inference import (
    GuidanceSchedule,
    RolloutConfig,
    cfg_logits,
    decode_plan,
    decode_rollout,
    default_top_k,
    frame_counts,
    generate_frame,
    guidance_scale,
    real_frame_perplexity,
    rollout,
    top_k_filter,
    window_plan,
    write_gif,
    write_png_frames,
)
from WorldSim.video_decoder import DecoderConfig, DecoderTask, VideoUNet, sample_clip
from WorldSim.world_model import (
    SequenceLayout,
    WorldModel,
    WorldModelConfig,
    assemble_sequence,
)


def tiny_world_model(seed=0, random_head=True):
    torch.manual_seed(seed)
    model = WorldModel(
        WorldModelConfig(
            time_steps=3,
            text_tokens=2,
            image_tokens=4,
            action_tokens=2,
            width=16,
            layers=1,
            heads=2,
            codebook_size=8,
        )
    ).eval()
    if random_head:
        nn.init.normal_(model.head.weight)
    return model


def tiny_decoder(seed=0):
    torch.manual_seed(seed)
    config = DecoderConfig(
        max_frames=3,
        height=8,
        width=8,
        codebook_size=4,
        downsample_factor=2,
        base_channels=4,
        token_dim=2,
        time_dim=8,
        heads=2,
        sampling_steps=2,
    )
    return VideoUNet(config).eval()


def single_step_prefix(model, caption="sunny day"):
    return assemble_sequence(
        [caption], [np.zeros((2, 2), dtype=int)], np.zeros((1, 2)), model.layout
    )


class TestTopKFilter(unittest.TestCase):
    def test_argmax_survives(self):
        probabilities = top_k_filter(torch.tensor([1.0, 2.0, 3.0]), 1)
        assert probabilities.tolist() == [0.0, 0.0, 1.0]

    def test_full_k_is_softmax(self):
        logits = torch.randn(10, dtype=torch.float64)
        assert torch.allclose(top_k_filter(logits, 10), torch.softmax(logits, dim=-1))
        assert torch.allclose(top_k_filter(logits, None), torch.softmax(logits, dim=-1))

    def test_ties_go_to_lower_ids(self):
        probabilities = top_k_filter(torch.tensor([0.0, 0.0, 0.0, -math.inf]), 2)
        assert probabilities.tolist() == [0.5, 0.5, 0.0, 0.0]

    def test_support_size(self):
        generator = torch.Generator().manual_seed(0)
        for k in range(1, 9):
            logits = torch.randn(8, generator=generator)
            logits[:3] = -math.inf
            probabilities = top_k_filter(logits, k)
            assert int((probabilities > 0).sum()) == min(k, 5)
            assert abs(float(probabilities.sum()) - 1.0) <= 1e-9

    def test_batched(self):
        probabilities = top_k_filter(torch.randn(4, 6), 3)
        assert torch.all((probabilities > 0).sum(dim=-1) == 3)

    def test_k_out_of_range(self):
        with self.assertRaises(ValueError):
            top_k_filter(torch.zeros(4), 0)
        with self.assertRaises(ValueError):
            top_k_filter(torch.zeros(4), 5)

    def test_default_k(self):
        assert default_top_k(8192) == 50
        assert default_top_k(64) == 1
        assert default_top_k(16384) == 100


class TestClassifierFreeGuidance(unittest.TestCase):
    def test_zero_scale_is_identity(self):
        cond = torch.randn(8)
        out = cfg_logits(cond, torch.randn(8), 0.0)
        assert torch.equal(out, cond)
        assert out is not cond

    def test_unit_scale(self):
        assert float(cfg_logits(torch.tensor(2.0), torch.tensor(1.0), 1.0)) == 3.0

    def test_cancellation(self):
        cond = torch.randn(8)
        for scale in (0.5, 3.0, -1.0):
            assert torch.equal(cfg_logits(cond, cond.clone(), scale), cond)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            cfg_logits(torch.zeros(3), torch.zeros(4), 1.0)


class TestGuidanceSchedule(unittest.TestCase):
    def test_start_is_s_hi(self):
        schedule = GuidanceSchedule(s_hi=2.0, s_lo=0.5, tokens=6, horizon=4)
        assert guidance_scale(0, 0, schedule) == 2.0

    def test_constant_schedule(self):
        schedule = GuidanceSchedule(s_hi=1.5, s_lo=1.5, tokens=5, horizon=3, frame_profile="flat")
        assert {guidance_scale(i, f, schedule) for i in range(5) for f in range(3)} == {1.5}

    def test_linear_midpoint(self):
        schedule = GuidanceSchedule(s_hi=3.0, s_lo=1.0, tokens=5, horizon=1)
        assert abs(guidance_scale(2, 0, schedule) - 2.0) <= 1e-12
        assert abs(guidance_scale(4, 0, schedule) - 1.0) <= 1e-12

    def test_cosine_frames(self):
        schedule = GuidanceSchedule(tokens=1, horizon=5, floor=0.25, plateau=1)
        assert schedule.frame_multiplier(0) == 1.0
        assert schedule.frame_multiplier(1) == 1.0
        assert abs(schedule.frame_multiplier(4) - 0.25) <= 1e-12
        multipliers = [schedule.frame_multiplier(f) for f in range(5)]
        assert multipliers == sorted(multipliers, reverse=True)

    def test_samples(self):
        schedule = GuidanceSchedule(tokens=4, horizon=2)
        samples = schedule.samples()
        assert len(samples) == 2
        assert samples[0][0] == 2.0

    def test_invalid(self):
        with self.assertRaises(ValueError):
            GuidanceSchedule(token_profile="quadratic")
        with self.assertRaises(ValueError):
            GuidanceSchedule(s_hi=math.inf)
        with self.assertRaises(ValueError):
            guidance_scale(4, 0, GuidanceSchedule(tokens=4))


class TestWindowPlan(unittest.TestCase):
    def test_no_eviction(self):
        plan = window_plan(context_steps=1, horizon=5, time_steps=6)
        assert plan.evictions == 0
        assert plan.first_eviction is None

    def test_eviction_count(self):
        plan = window_plan(context_steps=1, horizon=10, time_steps=6)
        assert plan.evictions == 5
        assert plan.first_eviction == 5
        assert plan.starts[-1] == 5

    def test_frame_counts(self):
        assert frame_counts(7) == (7, 13, 25)
        assert frame_counts(2) == (2, 3, 5)
        assert frame_counts(26) == (26, 51, 101)
        with self.assertRaises(ValueError):
            frame_counts(1)


class TestDecodePlan(unittest.TestCase):
    def test_window_counts(self):
        assert len(decode_plan(7, 7)) == 1
        assert len(decode_plan(17, 7)) == 3

    def test_single_new_frame(self):
        windows = decode_plan(8, 7)
        assert len(windows) == 2
        assert windows[1].targets == (0,)
        assert windows[1].context == (1, 2)
        assert windows[0].targets == tuple(range(1, 8))

    def test_coverage(self):
        for direction in ("backward", "forward"):
            for clip_frames in (3, 4, 7):
                for num_frames in range(clip_frames, 30):
                    decoded = []
                    for window in decode_plan(num_frames, clip_frames, direction):
                        assert all(c in decoded for c in window.context)
                        assert list(window.frames) == sorted(window.frames)
                        decoded.extend(window.targets)
                    assert sorted(decoded) == list(range(num_frames))

    def test_forward_starts_at_the_beginning(self):
        assert decode_plan(5, 3, "forward")[0].targets == (0, 1, 2)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            decode_plan(5, 7)
        with self.assertRaises(ValueError):
            decode_plan(5, 3, "sideways")


class TestGenerateFrame(unittest.TestCase):
    def setUp(self):
        self.model = tiny_world_model()
        self.prefix = single_step_prefix(self.model)

    def test_greedy_ignores_seed(self):
        first, profile = generate_frame(
            self.model, self.prefix, 1, torch.Generator().manual_seed(0)
        )
        second, _ = generate_frame(self.model, self.prefix, 1, torch.Generator().manual_seed(1))
        assert np.array_equal(first, second)
        assert np.all(profile.values == 1.0)

    def test_seeded_sampling_is_deterministic(self):
        runs = [
            generate_frame(self.model, self.prefix, None, torch.Generator().manual_seed(3))[0]
            for _ in range(2)
        ]
        assert np.array_equal(runs[0], runs[1])

    def test_perplexity_at_least_one(self):
        tokens, profile = generate_frame(
            self.model, self.prefix, 4, torch.Generator().manual_seed(0)
        )
        assert tokens.shape == (4,)
        assert len(profile) == 4
        assert profile.max() >= profile.mean() >= 1.0

    def test_zero_guidance_matches_unguided(self):
        schedule = GuidanceSchedule(s_hi=0.0, s_lo=0.0, tokens=4, horizon=1)
        unguided, _ = generate_frame(self.model, self.prefix, 4, torch.Generator().manual_seed(5))
        guided, _ = generate_frame(
            self.model,
            self.prefix,
            4,
            torch.Generator().manual_seed(5),
            guidance=schedule,
            negative_text_ids=[1, 2],
        )
        assert np.array_equal(unguided, guided)

    def test_prefix_is_not_modified(self):
        before = self.prefix.image_tokens.clone()
        generate_frame(self.model, self.prefix, 4, torch.Generator().manual_seed(0))
        assert torch.equal(before, self.prefix.image_tokens)

    def test_real_frame_perplexity(self):
        model = tiny_world_model(random_head=False)
        profile = real_frame_perplexity(model, self.prefix, 0)
        assert np.allclose(profile.values, 8.0)
        with self.assertRaises(ValueError):
            real_frame_perplexity(model, self.prefix, 1)


class TestRollout(unittest.TestCase):
    def setUp(self):
        self.model = tiny_world_model()

    def test_sliding_window(self):
        result = rollout(self.model, RolloutConfig(horizon=5, k=4, seed=0, grid_shape=(2, 2)))
        assert result.tokens.shape == (5, 2, 2)
        assert result.plan.evictions == 2
        assert len(result.perplexities) == 5

    def test_deterministic(self):
        config = RolloutConfig(
            horizon=4,
            k=4,
            seed=11,
            positive_prompt="rainy night",
            negative_prompt="sunny day",
            action_override=np.tile([[5.0, 0.01]], (4, 1)),
            guidance=GuidanceSchedule(tokens=4, horizon=4),
        )
        first = rollout(self.model, config).tokens
        assert np.array_equal(first, rollout(self.model, config).tokens)

    def test_with_context(self):
        context = assemble_sequence(
            ["sunny day"] * 2, [np.ones((2, 2), dtype=int)] * 2, np.zeros((2, 2)), self.model.layout
        )
        result = rollout(self.model, RolloutConfig(horizon=3, context=context))
        assert result.plan.evictions == 2
        assert result.plan.first_eviction == 1

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            RolloutConfig(horizon=3, action_override=np.zeros((2, 2)))
        with self.assertRaises(ValueError):
            RolloutConfig(horizon=0)
        with self.assertRaises(ValueError):
            RolloutConfig(horizon=3, guidance=GuidanceSchedule(horizon=2))
        other = assemble_sequence(
            ["sunny"], [np.zeros(3, dtype=int)], None, SequenceLayout(3, 2, 3, 2)
        )
        with self.assertRaises(ValueError):
            rollout(self.model, RolloutConfig(horizon=1, context=other))

    def test_guidance_without_prompt_warns(self):
        config = RolloutConfig(horizon=1, guidance=GuidanceSchedule(tokens=4, horizon=1))
        with self.assertWarns(UserWarning):
            rollout(self.model, config)


class TestVideoDecoding(unittest.TestCase):
    def setUp(self):
        self.decoder = tiny_decoder()
        self.tokens = np.random.default_rng(0).integers(0, 4, size=(3, 4, 4))

    def test_frame_count_and_rate(self):
        video = decode_rollout(self.tokens, self.decoder, token_rate=6.25)
        assert len(video) == 9
        assert video.rate == 25.0
        assert video.frames.min() >= 0.0
        assert video.frames.max() <= 1.0

    def test_deterministic(self):
        first = decode_rollout(self.tokens, self.decoder, seed=3).frames
        second = decode_rollout(self.tokens, self.decoder, seed=3).frames
        assert np.array_equal(first, second)

    def test_interpolation_withholds_tokens(self):
        with patch(
            "WorldSim.inference.video_decoding.sample_clip", wraps=sample_clip
        ) as mocked:
            decode_rollout(np.concatenate([self.tokens, self.tokens[:1]]), self.decoder)
        masks = [call.args[2] for call in mocked.call_args_list]
        interpolation = [m for m in masks if m.task is DecoderTask.INTERPOLATION]
        assert len(interpolation) == 2
        assert all(not any(m.token_mask) for m in interpolation)
        assert [m.task for m in masks[:2]] == [
            DecoderTask.VIDEO_GENERATION,
            DecoderTask.AUTOREGRESSIVE_BACKWARD,
        ]

    def test_media_files(self):
        video = decode_rollout(self.tokens, self.decoder)
        with tempfile.TemporaryDirectory() as directory:
            paths = write_png_frames(video, Path(directory) / "frames")
            assert len(paths) == 9
            assert Image.open(paths[0]).size == (8, 8)
            gif = write_gif(video, Path(directory) / "rollout.gif")
            with Image.open(gif) as image:
                assert image.n_frames >= 1
