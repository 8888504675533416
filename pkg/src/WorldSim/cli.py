"""
Command line entry point, installed as ``world-sim``.

Exit status: 0 on success, 1 on usage and validation errors, 2 on any other failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import __version__
from .config import PipelineConfig, parse_config, write_effective_config
from .factories import load_model
from .pipeline import (
    SPLITS,
    PipelinePaths,
    file_digest,
    fit_scaling_law_stage,
    generate_data,
    run_rollout,
    scaling_study_stage,
    tokenize_dataset,
    train_decoder_stage,
    train_tokenizer_stage,
    train_world_model_stage,
)
from .selfcheck import run_selfcheck
from .utils.tensor_io import read_tensor

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class UsageError(ValueError):
    """Invalid command line. `usage` is the usage text of the offending parser."""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}", self.format_usage())


def _optional_int(value: str) -> Optional[int]:
    return None if value.lower() == "none" else int(value)


def _optional_path(value: str) -> Optional[Path]:
    return None if value.lower() == "none" else Path(value)


def _common_options() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration entry, e.g. world_model.training.steps=10",
    )
    common.add_argument("--log-level", choices=LOG_LEVELS, default="WARNING")
    common.add_argument(
        "--no-progress", action="store_true", help="Hide the training progress bars"
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="world-sim",
        description="Desk-scale generative world model: data, training, rollouts and "
        "scaling studies",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [_common_options()]

    commands.add_parser("generate-data", parents=common, help="Render the episode splits")
    commands.add_parser("train-tokenizer", parents=common, help="Train the tokenizer")

    tokenize = commands.add_parser(
        "tokenize", parents=common, help="Tokenize episode datasets"
    )
    tokenize.add_argument("--checkpoint", type=Path, help="Tokenizer checkpoint")
    tokenize.add_argument(
        "--dataset", type=Path, help="Dataset directory, both splits when omitted"
    )
    tokenize.add_argument("--out", type=Path, help="Output directory, with --dataset")
    tokenize.add_argument("--force", action="store_true")

    for name, help_text in (
        ("train-world-model", "Train the world model"),
        ("train-decoder", "Train the video decoder"),
        ("scaling-study", "Train the size family and fit the scaling law"),
    ):
        command = commands.add_parser(name, parents=common, help=help_text)
        command.add_argument("--tokenizer", type=Path, help="Tokenizer checkpoint")
        command.add_argument("--force", action="store_true")

    rollout = commands.add_parser(
        "rollout", parents=common, help="Generate frames and decode them to video"
    )
    rollout.add_argument("--world-model", type=Path, required=True)
    rollout.add_argument("--decoder", type=Path)
    rollout.add_argument("--tokenizer", type=Path)
    rollout.add_argument(
        "--context",
        type=_optional_int,
        default=0,
        metavar="EPISODE|none",
        help="Validation episode providing the context steps",
    )
    rollout.add_argument("--horizon", type=int)
    rollout.add_argument("--prompt")
    rollout.add_argument("--negative-prompt")
    rollout.add_argument(
        "--actions",
        type=_optional_path,
        metavar="FILE|none",
        help="Tensor file of (horizon, 2) speed and curvature",
    )
    rollout.add_argument("--k", type=_optional_int, default=argparse.SUPPRESS)
    rollout.add_argument("--guidance", action="store_true")
    rollout.add_argument("--seed", type=int)
    rollout.add_argument("--out", type=Path)
    rollout.add_argument("--force", action="store_true")

    fit = commands.add_parser(
        "fit-scaling-law", parents=common, help="Fit the scaling law to run records"
    )
    fit.add_argument("--records", type=Path, action="append", required=True)
    fit.add_argument("--out", type=Path)

    selfcheck = commands.add_parser("selfcheck", help="Run the fast invariant suite")
    selfcheck.add_argument("--log-level", choices=LOG_LEVELS, default="WARNING")
    return parser


def _load_config(args) -> PipelineConfig:
    config = parse_config(args.config, args.overrides)
    if args.command == "rollout":
        config = _apply_rollout_options(config, args)
    write_effective_config(config)
    return config


def _apply_rollout_options(config: PipelineConfig, args) -> PipelineConfig:
    values = {}
    if args.horizon is not None:
        values["horizon"] = args.horizon
    if args.prompt is not None:
        values["positive_prompt"] = args.prompt
    if args.negative_prompt is not None:
        values["negative_prompt"] = args.negative_prompt
    if "k" in args:
        values["k"] = args.k
    if args.guidance:
        values["guidance"] = True
    config = replace(config, inference=replace(config.inference, **values))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _generate_data(args, config: PipelineConfig) -> int:
    for split, path in generate_data(config).items():
        print(f"{split}: {path}")
    return 0


def _train_tokenizer(args, config: PipelineConfig) -> int:
    print(train_tokenizer_stage(config, show_progress=not args.no_progress))
    return 0


def _tokenize(args, config: PipelineConfig) -> int:
    paths = PipelinePaths.from_config(config)
    checkpoint = args.checkpoint or paths.checkpoint("tokenizer")
    tokenizer = load_model(checkpoint, "tokenizer", config.tokenizer.model, args.force)
    digest = file_digest(checkpoint)
    if args.dataset is not None:
        if args.out is None:
            raise ValueError("--out is required together with --dataset")
        targets = [(args.dataset, args.out)]
    else:
        targets = [(paths.data(split), paths.tokens(split)) for split in SPLITS]
    for dataset, out in targets:
        print(tokenize_dataset(tokenizer, dataset, out, source_digest=digest))
    return 0


def _train_world_model(args, config: PipelineConfig) -> int:
    path = train_world_model_stage(
        config, args.tokenizer, args.force, show_progress=not args.no_progress
    )
    print(path)
    return 0


def _train_decoder(args, config: PipelineConfig) -> int:
    path = train_decoder_stage(
        config, args.tokenizer, args.force, show_progress=not args.no_progress
    )
    print(path)
    return 0


def _rollout(args, config: PipelineConfig) -> int:
    actions = read_tensor(args.actions) if args.actions is not None else None
    outputs = run_rollout(
        config,
        world_model_path=args.world_model,
        decoder_path=args.decoder,
        tokenizer_path=args.tokenizer,
        context_episode=args.context,
        actions=actions,
        out=args.out,
        force=args.force,
    )
    mean_perplexity = [profile.mean() for profile in outputs.result.perplexities]
    print(f"Wrote {len(mean_perplexity)} token frames to {outputs.directory}")
    if outputs.video is not None:
        print(f"Decoded {len(outputs.video)} video frames at {outputs.video.rate} Hz")
    return 0


def _scaling_study(args, config: PipelineConfig) -> int:
    result = scaling_study_stage(
        config, args.tokenizer, args.force, show_progress=not args.no_progress
    )
    _print_fit(result.fit, result.report)
    return 0


def _fit_scaling_law(args, config: PipelineConfig) -> int:
    fit, report = fit_scaling_law_stage(config, args.records, args.out)
    _print_fit(fit, report)
    return 0


def _print_fit(fit, report) -> None:
    print(f"L(C) = {fit.c:.4f} + (C / {fit.a:.4g})^{fit.b:.4f}, residual {fit.residual:.3g}")
    if report.held_out is not None:
        print(
            f"{report.held_out}: predicted {report.predicted:.4f}, actual "
            f"{report.actual:.4f}, relative error {report.relative_error:.1%}"
        )


def _selfcheck(args) -> int:
    report = run_selfcheck()
    for result in report.results:
        status = "PASS" if result.passed else "FAIL"
        line = f"{status} {result.name} ({result.seconds:.2f} s)"
        print(line if result.passed else f"{line}: {result.message}")
    return 0 if report.passed else 2


COMMANDS: Dict[str, Callable[..., int]] = {
    "generate-data": _generate_data,
    "train-tokenizer": _train_tokenizer,
    "tokenize": _tokenize,
    "train-world-model": _train_world_model,
    "train-decoder": _train_decoder,
    "rollout": _rollout,
    "scaling-study": _scaling_study,
    "fit-scaling-law": _fit_scaling_law,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(e.usage or parser.format_usage())
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "selfcheck":
            return _selfcheck(args)
        config = _load_config(args)
        return COMMANDS[args.command](args, config)
    except ValueError as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
