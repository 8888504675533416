"""
Stage orchestration.

Every stage reads its inputs from, and writes its outputs to, the output root::

    <root>/effective_config.json
    <root>/data/{train,validation}/        episode datasets
    <root>/tokens/{train,validation}/      tokenized episodes
    <root>/checkpoints/<kind>.pt           tokenizer, world_model and decoder
    <root>/metrics/<stage>.jsonl
    <root>/rollouts/seed_<seed>/           token frames, manifest, PNG frames and GIF
    <root>/scaling/                        run records, fit report and plots

Dataset directories are never written by a stage other than generate_data.
"""

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .checkpoint import CheckpointError
from .config import PipelineConfig, config_to_dict
from .factories import load_model, save_model
from .inference import GuidanceSchedule, RolloutConfig, RolloutResult, rollout
from .inference.video_decoding import decode_rollout, write_gif, write_png_frames
from .metrics import MetricsLog
from .plotting.scaling_plot import plot_loss_curves, plot_scaling_fit, save_figure
from .scaling import (
    PowerLawFit,
    RunRecord,
    ScalingReport,
    ScalingStudyResult,
    fit_records,
    read_records,
    run_scaling_study,
)
from .synthworld.balancing import BALANCE_PRESETS, sample_dataset
from .synthworld.dataset_io import (
    MANIFEST_NAME,
    generate_dataset,
    read_dataset,
    read_manifest,
    write_dataset,
)
from .synthworld.world import FrameSequence
from .tokenizer.training import collect_frames, reconstruction_l2, train_tokenizer
from .tokenizer.vq_tokenizer import VQTokenizer, tokenize_frames
from .utils.seeding import derive_seed
from .utils.tensor_io import read_tensor, write_tensor
from .video_decoder.training import DecoderEpisode, train_decoder
from .video_decoder.unet import VideoUNet
from .world_model import (
    MultimodalSequence,
    SequenceLayout,
    TokenizedEpisode,
    WorldModel,
    assemble_sequence,
    build_windows,
    train_world_model,
)
from .world_model.training import WindowDataset, action_statistics

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation")
TOKENS_FORMAT_VERSION = "1.0"
ROLLOUT_FORMAT_VERSION = "1.0"
ROLLOUT_MANIFEST_NAME = "rollout.json"
FIT_REPORT_NAME = "fit.json"
RECORDS_NAME = "records.jsonl"


@dataclass(frozen=True)
class PipelinePaths:
    """Locations of the stage inputs and outputs below one output root."""

    root: Path

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "PipelinePaths":
        return cls(Path(config.output_root))

    def data(self, split: str) -> Path:
        _check_split(split)
        return self.root / "data" / split

    def tokens(self, split: str) -> Path:
        _check_split(split)
        return self.root / "tokens" / split

    def checkpoint(self, kind: str) -> Path:
        return self.root / "checkpoints" / f"{kind}.pt"

    def metrics(self, stage: str) -> Path:
        return self.root / "metrics" / f"{stage}.jsonl"

    def rollout(self, seed: int) -> Path:
        return self.root / "rollouts" / f"seed_{seed}"

    @property
    def scaling(self) -> Path:
        return self.root / "scaling"


def _check_split(split: str) -> None:
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split}")


def stage_metrics(paths: PipelinePaths, stage: str) -> MetricsLog:
    """A fresh metrics file for one run of a stage."""
    path = paths.metrics(stage)
    path.unlink(missing_ok=True)
    return MetricsLog(path)


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generate_data(config: PipelineConfig) -> Dict[str, Path]:
    """
    Render the training and validation splits.

    Training candidates are the dataset indices [0, train_episodes), thinned by the
    balancing preset. The validation split holds the following indices, unbalanced.

    :return: Manifest path per split.
    """
    data = config.data
    paths = PipelinePaths.from_config(config)
    candidates = generate_dataset(data.world, range(data.train_episodes))
    train, spec = candidates, None
    if data.balance_preset is not None:
        spec = BALANCE_PRESETS[data.balance_preset](data.world, data.balance_exponent)
        train = sample_dataset(candidates, spec, derive_seed(config.seed, "balance"))
        if not train:
            raise ValueError(
                f"Balanced sampling kept none of the {len(candidates)} training "
                "candidates; raise data.train_episodes or lower data.balance_exponent"
            )
    manifests = {
        "train": write_dataset(paths.data("train"), train, data.world, spec, "train")
    }
    validation = generate_dataset(data.world, data.validation_indices)
    manifests["validation"] = write_dataset(
        paths.data("validation"), validation, data.world, split="validation"
    )
    return manifests


def tokenize_dataset(
    tokenizer: VQTokenizer,
    dataset_root: Union[str, Path],
    out_root: Union[str, Path],
    source_digest: Optional[str] = None,
) -> Path:
    """
    Tokenize every episode of a dataset directory into `out_root`.

    Each episode directory receives ``tokens.wst`` (T, h, w) int64 and ``actions.wst``
    (T, 2) float32; the manifest holds captions, rates and seeds.

    :param source_digest: Digest of the tokenizer checkpoint, recorded in the manifest.
    :return: Path of the token manifest.
    """
    dataset_root, out_root = Path(dataset_root), Path(out_root)
    if out_root.resolve() == dataset_root.resolve():
        raise ValueError(f"Tokens cannot be written into the dataset {dataset_root}")
    manifest = read_manifest(dataset_root)
    episodes = read_dataset(dataset_root)
    entries = []
    for entry, episode in zip(manifest["episodes"], episodes):
        directory = out_root / entry["directory"]
        directory.mkdir(parents=True, exist_ok=True)
        tokens = tokenize_frames(tokenizer, episode.frames.frames)
        write_tensor(directory / "tokens.wst", tokens)
        write_tensor(
            directory / "actions.wst", episode.actions.as_array().astype(np.float32)
        )
        entries.append(
            {
                "directory": entry["directory"],
                "caption": episode.caption,
                "rate": episode.frames.rate,
                "seed": int(episode.seed),
            }
        )
    token_manifest = {
        "version": TOKENS_FORMAT_VERSION,
        "split": manifest["split"],
        "codebook_size": tokenizer.config.codebook_size,
        "downsample_factor": tokenizer.config.downsample_factor,
        "tokenizer_digest": source_digest,
        "episodes": entries,
    }
    path = out_root / MANIFEST_NAME
    path.write_text(json.dumps(token_manifest, indent=2))
    logger.info("Tokenized %s episodes of %s into %s", len(entries), dataset_root, out_root)
    return path


def read_token_manifest(root: Union[str, Path]) -> dict:
    path = Path(root) / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ValueError(f"No token manifest found at {path}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"Token manifest {path} is not valid JSON") from e
    if manifest.get("version") != TOKENS_FORMAT_VERSION:
        raise ValueError(
            f"Token manifest {path} has version {manifest.get('version')}, expected "
            f"{TOKENS_FORMAT_VERSION}"
        )
    return manifest


def read_tokenized(root: Union[str, Path]) -> List[TokenizedEpisode]:
    root = Path(root)
    episodes = []
    for entry in read_token_manifest(root)["episodes"]:
        directory = root / entry["directory"]
        episodes.append(
            TokenizedEpisode(
                tokens=read_tensor(directory / "tokens.wst"),
                actions=read_tensor(directory / "actions.wst"),
                caption=entry["caption"],
                rate=entry["rate"],
                seed=entry["seed"],
            )
        )
    return episodes


def tokenized_split(
    config: PipelineConfig,
    split: str,
    tokenizer_path: Optional[Union[str, Path]] = None,
    force: bool = False,
) -> List[TokenizedEpisode]:
    """
    Tokens of a split, tokenizing it first when no tokens exist or when they were
    produced by a tokenizer checkpoint other than the current one.
    """
    paths = PipelinePaths.from_config(config)
    root = paths.tokens(split)
    checkpoint = Path(tokenizer_path) if tokenizer_path else paths.checkpoint("tokenizer")
    digest = file_digest(checkpoint) if checkpoint.is_file() else None
    if (root / MANIFEST_NAME).exists():
        recorded = read_token_manifest(root).get("tokenizer_digest")
        if digest is None or recorded == digest:
            return read_tokenized(root)
        logger.info("Tokens of the %s split are stale, tokenizing again", split)
    if digest is None:
        raise CheckpointError(
            f"No tokens for the {split} split and no tokenizer checkpoint at {checkpoint}"
        )
    tokenizer = load_model(checkpoint, "tokenizer", config.tokenizer.model, force)
    tokenize_dataset(tokenizer, paths.data(split), root, source_digest=digest)
    return read_tokenized(root)


def train_tokenizer_stage(config: PipelineConfig, show_progress: bool = True) -> Path:
    """Train the tokenizer on the training split and checkpoint it."""
    paths = PipelinePaths.from_config(config)
    stage = config.tokenizer
    frames, semantics = collect_frames(
        read_dataset(paths.data("train")), stage.training.frame_stride
    )
    torch.manual_seed(derive_seed(config.seed, "tokenizer", "init"))
    tokenizer = VQTokenizer(stage.model)
    metrics = stage_metrics(paths, "tokenizer")
    result = train_tokenizer(
        tokenizer,
        frames,
        semantics,
        stage.loss,
        stage.training,
        derive_seed(config.seed, "tokenizer"),
        metrics=metrics,
        show_progress=show_progress,
    )
    validation_frames, _ = collect_frames(
        read_dataset(paths.data("validation")), stage.training.frame_stride
    )
    validation_l2 = reconstruction_l2(tokenizer, validation_frames)
    metrics.log(result.steps, "tokenizer/validation_l2", validation_l2)
    logger.info("Tokenizer validation reconstruction L2 %s", validation_l2)
    return save_model(
        paths.checkpoint("tokenizer"),
        tokenizer,
        result.steps,
        config.seed,
        extra={"loss_weights": asdict(stage.loss), "validation_l2": validation_l2},
    )


def window_datasets(
    config: PipelineConfig,
    train: Sequence[TokenizedEpisode],
    validation: Sequence[TokenizedEpisode],
) -> Tuple[WindowDataset, WindowDataset]:
    layout = config.world_model.model.layout
    training = config.world_model.training
    return tuple(
        build_windows(episodes, layout, training.subsample_factor, training.window_stride)
        for episodes in (train, validation)
    )


def train_world_model_stage(
    config: PipelineConfig,
    tokenizer_path: Optional[Union[str, Path]] = None,
    force: bool = False,
    show_progress: bool = True,
) -> Path:
    """Train the world model on the tokenized training split and checkpoint it."""
    paths = PipelinePaths.from_config(config)
    train, validation = window_datasets(
        config,
        tokenized_split(config, "train", tokenizer_path, force),
        tokenized_split(config, "validation", tokenizer_path, force),
    )
    torch.manual_seed(derive_seed(config.seed, "world_model", "init"))
    model = WorldModel(config.world_model.model)
    model.set_action_statistics(*action_statistics(train))
    result = train_world_model(
        model,
        train,
        config.world_model.training,
        derive_seed(config.seed, "world_model"),
        validation=validation,
        metrics=stage_metrics(paths, "world_model"),
        show_progress=show_progress,
    )
    return save_model(paths.checkpoint("world_model"), model, result.steps, config.seed)


def train_decoder_stage(
    config: PipelineConfig,
    tokenizer_path: Optional[Union[str, Path]] = None,
    force: bool = False,
    show_progress: bool = True,
) -> Path:
    """
    Train the decoder on the training split and checkpoint its live and EMA weights,
    with the EMA decay, the loss weights and the clip length in the header.
    """
    paths = PipelinePaths.from_config(config)
    episodes = read_dataset(paths.data("train"))
    tokenized = tokenized_split(config, "train", tokenizer_path, force)
    if len(episodes) != len(tokenized):
        raise ValueError(
            f"The training split holds {len(episodes)} episodes but {len(tokenized)} "
            "tokenized ones"
        )
    torch.manual_seed(derive_seed(config.seed, "decoder", "init"))
    model = VideoUNet(config.decoder.model)
    result = train_decoder(
        model,
        [DecoderEpisode(e.frames.frames, t.tokens) for e, t in zip(episodes, tokenized)],
        config.decoder.training,
        derive_seed(config.seed, "decoder"),
        metrics=stage_metrics(paths, "decoder"),
        show_progress=show_progress,
    )
    logger.info("Decoder task counts: %s", result.task_counts)
    training = config.decoder.training
    return save_model(
        paths.checkpoint("decoder"),
        model,
        result.steps,
        config.seed,
        ema_arrays=result.ema.shadow.state_dict(),
        extra={
            "ema_decay": training.ema_decay,
            "loss_weights": {"l1": training.l1_weight, "l2": training.l2_weight},
            "frames": training.frames,
            "token_dropout": training.token_dropout,
        },
    )


def context_sequence(
    episode: TokenizedEpisode, steps: int, layout: SequenceLayout, subsample_factor: int
) -> MultimodalSequence:
    """The first `steps` subsampled steps of an episode with caption and actions."""
    tokens = episode.tokens[::subsample_factor][:steps]
    if len(tokens) < steps:
        raise ValueError(
            f"The context episode has {len(tokens)} steps after subsampling, {steps} "
            "are requested"
        )
    actions = np.asarray(episode.actions, dtype=np.float32)[::subsample_factor][:steps]
    return assemble_sequence(
        [episode.caption] * steps, list(tokens), actions[:, : layout.action_tokens], layout
    )


def constant_actions(horizon: int, speed: float, curvature: float) -> np.ndarray:
    return np.tile(np.array([speed, curvature], dtype=np.float32), (horizon, 1))


class RolloutOutputs(NamedTuple):
    directory: Path
    result: RolloutResult
    video: Optional[FrameSequence]


def run_rollout(
    config: PipelineConfig,
    world_model_path: Optional[Union[str, Path]] = None,
    decoder_path: Optional[Union[str, Path]] = None,
    tokenizer_path: Optional[Union[str, Path]] = None,
    context_episode: Optional[int] = 0,
    actions: Optional[np.ndarray] = None,
    out: Optional[Union[str, Path]] = None,
    force: bool = False,
) -> RolloutOutputs:
    """
    Generate `inference.horizon` token frames and decode them to video.

    :param context_episode: Validation episode providing `inference.context_steps`
        context steps, None for a rollout without context.
    :param actions: (horizon, 2) speed and curvature, None falls back to the constant
        `inference.speed` and `inference.curvature`, or to absent actions.
    :param out: Output directory, by default ``rollouts/seed_<seed>`` below the root.
    """
    inference = config.inference
    paths = PipelinePaths.from_config(config)
    model = load_model(
        world_model_path or paths.checkpoint("world_model"),
        "world_model",
        config.world_model.model,
        force,
    )
    layout = model.layout
    context = None
    if context_episode is not None and inference.context_steps > 0:
        episodes = tokenized_split(config, "validation", tokenizer_path, force)
        if not 0 <= context_episode < len(episodes):
            raise ValueError(
                f"context episode {context_episode} is outside the {len(episodes)} "
                "validation episodes"
            )
        context = context_sequence(
            episodes[context_episode],
            inference.context_steps,
            layout,
            config.world_model.training.subsample_factor,
        )
    if actions is None and inference.speed is not None:
        actions = constant_actions(inference.horizon, inference.speed, inference.curvature)
    guidance = None
    if inference.guidance:
        guidance = GuidanceSchedule(
            s_hi=inference.guidance_hi,
            s_lo=inference.guidance_lo,
            tokens=layout.image_tokens,
            horizon=inference.horizon,
            floor=inference.guidance_floor,
            plateau=inference.guidance_plateau,
        )
    result = rollout(
        model,
        RolloutConfig(
            horizon=inference.horizon,
            k=inference.k,
            seed=derive_seed(config.seed, "rollout"),
            context=context,
            positive_prompt=inference.positive_prompt,
            negative_prompt=inference.negative_prompt,
            action_override=actions,
            guidance=guidance,
            grid_shape=config.grid_shape,
        ),
    )
    directory = Path(out) if out is not None else paths.rollout(config.seed)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / "tokens.wst", result.tokens.astype(np.int64))
    video = None
    decoder_file = Path(decoder_path) if decoder_path else paths.checkpoint("decoder")
    if inference.decode and (decoder_path or decoder_file.is_file()):
        video = _decode(config, decoder_file, result.tokens, directory, force)
    manifest = {
        "version": ROLLOUT_FORMAT_VERSION,
        "config": config_to_dict(config),
        "context_episode": context_episode if context is not None else None,
        "tokens": "tokens.wst",
        "window": {
            "starts": result.plan.starts,
            "evictions": result.plan.evictions,
            "first_eviction": result.plan.first_eviction,
        },
        "perplexities": [profile.values.tolist() for profile in result.perplexities],
        "guidance": guidance.samples()
        if guidance is not None and inference.positive_prompt is not None
        else None,
        "video": None
        if video is None
        else {"frames": len(video), "rate": video.rate, "gif": "rollout.gif"},
    }
    (directory / ROLLOUT_MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    logger.info("Wrote rollout of %s frames to %s", inference.horizon, directory)
    return RolloutOutputs(directory, result, video)


def _decode(config, decoder_file, tokens, directory, force) -> Optional[FrameSequence]:
    inference = config.inference
    if len(tokens) < 2:
        warnings.warn("Video decoding needs at least 2 token frames, skipping it")
        return None
    decoder = load_model(decoder_file, "decoder", config.decoder.model, force)
    video = decode_rollout(
        tokens,
        decoder,
        token_rate=config.token_rate,
        clip_frames=inference.clip_frames,
        direction=inference.decode_direction,
        steps=inference.sampling_steps,
        seed=derive_seed(config.seed, "decode"),
        weight=inference.mix_weight,
        mix_probability=inference.mix_probability,
    )
    write_png_frames(video, directory / "frames")
    write_gif(video, directory / "rollout.gif")
    return video


def write_scaling_report(
    records: Sequence[RunRecord],
    fit: PowerLawFit,
    report: ScalingReport,
    directory: Union[str, Path],
    ema_decay: float = 0.0,
) -> Path:
    """Write the fit report as JSON and the fit and loss-curve figures."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    content = {
        "fit": fit.as_dict(),
        "report": report.as_dict(),
        "runs": [
            {
                "name": record.name,
                "compute": record.compute,
                "failed": record.failed,
                "final_loss": None if record.failed else record.final_loss(ema_decay),
            }
            for record in records
        ],
    }
    path = directory / FIT_REPORT_NAME
    path.write_text(json.dumps(content, indent=2))
    save_figure(
        plot_scaling_fit(records, fit, ema_decay, held_out=report.held_out),
        directory / "scaling_fit.svg",
    )
    save_figure(plot_loss_curves(records, ema_decay), directory / "loss_curves.svg")
    logger.info("Wrote scaling report to %s", path)
    return path


def scaling_study_stage(
    config: PipelineConfig,
    tokenizer_path: Optional[Union[str, Path]] = None,
    force: bool = False,
    show_progress: bool = False,
) -> ScalingStudyResult:
    """Train the size family of `config.scaling`, fit the law and write the report."""
    paths = PipelinePaths.from_config(config)
    train, validation = window_datasets(
        config,
        tokenized_split(config, "train", tokenizer_path, force),
        tokenized_split(config, "validation", tokenizer_path, force),
    )
    result = run_scaling_study(
        config.scaling,
        config.world_model.model,
        train,
        validation,
        seed=config.seed,
        records_path=paths.scaling / RECORDS_NAME,
        metrics=stage_metrics(paths, "scaling"),
        show_progress=show_progress,
    )
    write_scaling_report(
        result.records, result.fit, result.report, paths.scaling, config.scaling.ema_decay
    )
    return result


def fit_scaling_law_stage(
    config: PipelineConfig,
    records_paths: Sequence[Union[str, Path]],
    out: Optional[Union[str, Path]] = None,
) -> Tuple[PowerLawFit, ScalingReport]:
    """Fit the law to previously written run records."""
    scaling = config.scaling
    records = read_records(list(records_paths))
    fit, report = fit_records(
        records,
        ema_decay=scaling.ema_decay,
        holdout_largest=scaling.holdout_largest,
        tolerance=scaling.tolerance,
        monotone_tolerance=scaling.monotone_tolerance,
    )
    directory = Path(out) if out is not None else PipelinePaths.from_config(config).scaling
    write_scaling_report(records, fit, report, directory, scaling.ema_decay)
    return fit, report
