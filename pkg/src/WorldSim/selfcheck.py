"""
Fast invariant suite run by ``world-sim selfcheck``.

Every check builds tiny untrained components, so the suite needs no data, checkpoints
or output directory and finishes in seconds on a CPU.
"""

import logging
import tempfile
import time
from pathlib import Path
from typing import Callable, List, NamedTuple

import numpy as np
import torch
from einops import rearrange

from .checkpoint import load_checkpoint
from .config import build_config, config_to_dict
from .factories import model_from_checkpoint, save_model
from .inference import RolloutConfig, cfg_logits, frame_counts, rollout, top_k_filter
from .scaling import fit_power_law
from .synthworld.balancing import compute_bin_weights
from .tokenizer.vq_tokenizer import Codebook, bit_compression, quantize
from .utils.seeding import torch_generator
from .video_decoder.schedule import cosine_schedule, ddim_step, noise, recover_x0, v_target
from .world_model import MultimodalSequence, WorldModel, WorldModelConfig, sequence_length

logger = logging.getLogger(__name__)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    seconds: float
    message: str = ""


class SelfCheckReport(NamedTuple):
    results: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def failures(self) -> List[CheckResult]:
        return [result for result in self.results if not result.passed]


def _tiny_world_model(seed: int = 0) -> WorldModel:
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
    torch.nn.init.normal_(model.head.weight)
    return model


def _random_sequence(model: WorldModel, seed: int) -> MultimodalSequence:
    layout = model.layout
    generator = torch_generator(seed, "selfcheck", "sequence")
    steps = layout.time_steps
    return MultimodalSequence(
        text_ids=torch.randint(
            model.config.vocab_size, (1, steps, layout.text_tokens), generator=generator
        ),
        image_tokens=torch.randint(
            model.config.codebook_size, (1, steps, layout.image_tokens), generator=generator
        ),
        actions=torch.randn(1, steps, layout.action_tokens, generator=generator),
        text_present=torch.ones(1, steps, dtype=torch.bool),
        action_present=torch.ones(1, steps, dtype=torch.bool),
        layout=layout,
    )


def check_arithmetic() -> None:
    assert sequence_length(26, 32, 576, 2) == 15_860
    assert (288 // 16) * (512 // 16) == 576
    assert round(bit_compression(288, 512, 16, 8192), -1) == 470
    assert frame_counts(7) == (7, 13, 25)


def check_schedule() -> None:
    t = torch.linspace(0.0, 1.0, 1000)
    alpha, sigma = cosine_schedule(t)
    assert torch.max(torch.abs(alpha**2 + sigma**2 - 1.0)) <= 1e-6
    generator = torch.Generator().manual_seed(0)
    x0 = torch.randn(8, 3, 4, 4, generator=generator)
    eps = torch.randn(8, 3, 4, 4, generator=generator)
    times = torch.rand(8, generator=generator)
    x_t = noise(x0, eps, times)
    assert torch.max(torch.abs(recover_x0(x_t, v_target(x0, eps, times), times) - x0)) <= 1e-5
    x_t = noise(x0, eps, 0.7)
    stepped = ddim_step(x_t, v_target(x0, eps, 0.7), 0.7, 0.3)
    assert torch.max(torch.abs(stepped - noise(x0, eps, 0.3))) <= 1e-5
    assert torch.equal(ddim_step(x_t, v_target(x0, eps, 0.7), 0.7, 0.7), x_t)


def check_quantizer() -> None:
    torch.manual_seed(0)
    codebook = Codebook(codebook_size=64, code_dim=8, feature_dim=16)
    features = torch.randn(10, 16, 10, 10)
    with torch.no_grad():
        result = quantize(features, codebook)
        projected = rearrange(result.projected, "b e h w -> (b h w) e").double()
        entries = codebook.normalized_entries().double()
    exhaustive = ((projected[:, None] - entries[None]) ** 2).sum(dim=-1).argmin(dim=1)
    assert result.tokens.reshape(-1).tolist() == exhaustive.tolist()


def check_causality() -> None:
    model = _tiny_world_model()
    layout = model.layout
    rng = np.random.default_rng(0)
    with torch.no_grad():
        for trial in range(10):
            seq = _random_sequence(model, trial)
            step = int(rng.integers(layout.time_steps))
            slot = int(rng.integers(layout.image_tokens))
            position = step * layout.step_length + layout.text_tokens + slot
            before = model(seq)
            seq.image_tokens[0, step, slot] = (seq.image_tokens[0, step, slot] + 1) % 8
            after = model(seq)
            assert torch.max(torch.abs(before[:, :position] - after[:, :position])) <= 1e-5


def check_sampling() -> None:
    generator = torch.Generator().manual_seed(0)
    cond = torch.randn(4, 16, generator=generator)
    uncond = torch.randn(4, 16, generator=generator)
    assert torch.equal(cfg_logits(cond, uncond, 0.0), cond)
    probabilities = top_k_filter(cond, 3)
    assert torch.all((probabilities > 0).sum(dim=-1) == 3)
    assert torch.allclose(probabilities.sum(dim=-1), torch.ones(4, dtype=torch.float64))


def check_rollout_determinism() -> None:
    model = _tiny_world_model()
    config = RolloutConfig(horizon=4, k=4, seed=3, positive_prompt="sunny day")
    first = rollout(model, config).tokens
    second = rollout(model, config).tokens
    assert np.array_equal(first, second)


def check_balancing() -> None:
    weights = compute_bin_weights([70, 10, 10, 10], 1.0)
    mass = np.array([0.7, 0.1, 0.1, 0.1]) * weights
    assert np.allclose(mass / mass.sum(), 0.25)
    assert np.allclose(compute_bin_weights([70, 10, 10, 10], 0.0), 1.0)


def check_power_law() -> None:
    compute = np.logspace(6, 9, 12)
    loss = 1.5 + (compute / 1e6) ** -0.3
    fit = fit_power_law(compute, loss)
    assert abs(fit.a - 1e6) / 1e6 < 0.01
    assert abs(fit.b + 0.3) / 0.3 < 0.01
    assert abs(fit.c - 1.5) / 1.5 < 0.01


def check_config_echo() -> None:
    config = build_config(environ={})
    assert build_config(config_to_dict(config), environ={}) == config


def check_checkpoint() -> None:
    model = _tiny_world_model()
    with tempfile.TemporaryDirectory() as directory:
        path = save_model(Path(directory) / "world_model.pt", model, step=1, seed=0)
        loaded = model_from_checkpoint(load_checkpoint(path, "world_model", model.config))
    for name, tensor in model.state_dict().items():
        assert torch.equal(tensor, loaded.state_dict()[name]), name


CHECKS: List[Callable[[], None]] = [
    check_arithmetic,
    check_schedule,
    check_quantizer,
    check_causality,
    check_sampling,
    check_rollout_determinism,
    check_balancing,
    check_power_law,
    check_config_echo,
    check_checkpoint,
]


def run_selfcheck(checks: List[Callable[[], None]] = CHECKS) -> SelfCheckReport:
    results = []
    for check in checks:
        name = check.__name__.replace("check_", "")
        start = time.perf_counter()
        try:
            check()
        except Exception as e:
            message = f"{type(e).__name__}: {e}"
            results.append(CheckResult(name, False, time.perf_counter() - start, message))
            logger.warning("Self-check %s failed: %s", name, message)
            continue
        results.append(CheckResult(name, True, time.perf_counter() - start))
        logger.debug("Self-check %s passed", name)
    return SelfCheckReport(results)
