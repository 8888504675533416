"""
Decoding of rollout token frames to video.

Token frames are first decoded to keyframes window by window (backwards from the end
by default), each window after the first reusing two decoded frames as pixel context.
Two interpolation passes then double the frame rate twice, guided by the neighbouring
frames only.
"""

import logging
import math
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import torch
from PIL import Image

from ..synthworld.world import FrameSequence
from ..utils.seeding import numpy_generator, torch_generator
from ..video_decoder import (
    DecoderTask,
    VideoUNet,
    model_space_to_frames,
    sample_clip,
    task_mask,
)
from .rollout import frame_counts

logger = logging.getLogger(__name__)

DIRECTIONS = ("backward", "forward")
OVERLAP_FRAMES = 2


class DecodeWindow(NamedTuple):
    frames: Tuple[int, ...]
    """Ascending frame indices of the clip."""
    targets: Tuple[int, ...]
    """Frames decoded by this window."""
    context: Tuple[int, ...]
    """Previously decoded frames given in pixels."""


def decode_plan(
    num_frames: int, clip_frames: int, direction: str = "backward"
) -> List[DecodeWindow]:
    """
    Windows decoding `num_frames` token frames with clips of at most `clip_frames`.

    The first window decodes `clip_frames` frames at the end (backward) or the start
    (forward). Every later window decodes up to ``clip_frames - 2`` new frames next to
    the already decoded ones, using the two nearest decoded frames as context.
    """
    if clip_frames < 3:
        raise ValueError(f"clip_frames must be at least 3, got {clip_frames}")
    if num_frames < clip_frames:
        raise ValueError(
            f"Cannot decode {num_frames} frames with clips of {clip_frames} frames"
        )
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction}")
    step = clip_frames - OVERLAP_FRAMES
    if direction == "backward":
        first = tuple(range(num_frames - clip_frames, num_frames))
        windows = [DecodeWindow(first, first, ())]
        end = num_frames - clip_frames
        while end > 0:
            targets = tuple(range(max(0, end - step), end))
            context = (end, end + 1)
            windows.append(DecodeWindow(targets + context, targets, context))
            end = targets[0]
    else:
        first = tuple(range(clip_frames))
        windows = [DecodeWindow(first, first, ())]
        start = clip_frames
        while start < num_frames:
            targets = tuple(range(start, min(num_frames, start + step)))
            context = (start - 2, start - 1)
            windows.append(DecodeWindow(context + targets, targets, context))
            start = targets[-1] + 1
    expected = 1 + math.ceil((num_frames - clip_frames) / step)
    if len(windows) != expected:
        raise RuntimeError(f"Decode plan has {len(windows)} windows, expected {expected}")
    return windows


def _window_mask(window: DecodeWindow, direction: str):
    if not window.context:
        return task_mask(DecoderTask.VIDEO_GENERATION, len(window.frames))
    task = (
        DecoderTask.AUTOREGRESSIVE_BACKWARD
        if direction == "backward"
        else DecoderTask.AUTOREGRESSIVE_FORWARD
    )
    return task_mask(task, len(window.frames), context_frames=len(window.context))


def decode_keyframes(
    decoder: VideoUNet,
    token_frames: np.ndarray,
    clip_frames: int = 3,
    direction: str = "backward",
    steps: Optional[int] = None,
    seed: int = 0,
    weight: float = 0.5,
    mix_probability: float = 0.25,
) -> torch.Tensor:
    """(N, h, w) token frames to (N, 3, H, W) model-space frames."""
    config = decoder.config
    tokens = torch.as_tensor(np.asarray(token_frames), dtype=torch.long)
    decoded = torch.zeros(tokens.shape[0], 3, config.height, config.width)
    for index, window in enumerate(decode_plan(tokens.shape[0], clip_frames, direction)):
        mask = _window_mask(window, direction)
        frames = list(window.frames)
        clip = sample_clip(
            decoder,
            tokens[frames][None],
            mask,
            context=decoded[frames][None],
            steps=steps,
            generator=torch_generator(seed, "decode", "window", index),
            weight=weight,
            mix_probability=mix_probability,
            rng=numpy_generator(seed, "decode", "mix", index),
        )
        decoded[list(window.targets)] = clip[0, list(mask.target_indices)]
        logger.debug("Decoded window %s with targets %s", index, window.targets)
    return decoded


def interpolate_frames(
    decoder: VideoUNet,
    frames: torch.Tensor,
    steps: Optional[int] = None,
    seed: int = 0,
    stage: int = 0,
    weight: float = 0.5,
    mix_probability: float = 0.25,
) -> torch.Tensor:
    """
    Insert one frame between every adjacent pair of (M, 3, H, W) frames, giving
    (2M - 1, 3, H, W). No conditioning tokens are used.
    """
    count = frames.shape[0]
    mask = task_mask(DecoderTask.INTERPOLATION, 3)
    if any(mask.token_mask):
        raise RuntimeError("Interpolation must withhold every conditioning token")
    grid = (
        decoder.config.height // decoder.config.downsample_factor,
        decoder.config.width // decoder.config.downsample_factor,
    )
    context = torch.zeros(count - 1, 3, *frames.shape[1:])
    context[:, 0] = frames[:-1]
    context[:, 2] = frames[1:]
    clips = sample_clip(
        decoder,
        torch.zeros(count - 1, 3, *grid, dtype=torch.long),
        mask,
        context=context,
        steps=steps,
        generator=torch_generator(seed, "interpolate", stage),
        weight=weight,
        mix_probability=mix_probability,
        rng=numpy_generator(seed, "interpolate", "mix", stage),
    )
    upsampled = torch.zeros(2 * count - 1, *frames.shape[1:])
    upsampled[0::2] = frames
    upsampled[1::2] = clips[:, 1]
    return upsampled


def decode_rollout(
    token_frames: np.ndarray,
    decoder: VideoUNet,
    token_rate: float = 6.25,
    clip_frames: int = 3,
    direction: str = "backward",
    steps: Optional[int] = None,
    seed: int = 0,
    weight: float = 0.5,
    mix_probability: float = 0.25,
) -> FrameSequence:
    """
    Decode N token frames to 4N - 3 video frames at four times `token_rate`.

    Deterministic for a fixed decoder and seed.
    """
    expected = frame_counts(len(token_frames))
    keyframes = decode_keyframes(
        decoder, token_frames, clip_frames, direction, steps, seed, weight, mix_probability
    )
    frames = keyframes
    for stage in range(2):
        frames = interpolate_frames(
            decoder, frames, steps, seed, stage, weight, mix_probability
        )
        if frames.shape[0] != expected[stage + 1]:
            raise RuntimeError(
                f"Interpolation stage {stage} produced {frames.shape[0]} frames, "
                f"expected {expected[stage + 1]}"
            )
    logger.info(
        "Decoded %s token frames to %s video frames", len(token_frames), frames.shape[0]
    )
    return FrameSequence(model_space_to_frames(frames), rate=4.0 * token_rate)


def _to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png_frames(video: FrameSequence, directory: Union[str, Path]) -> List[Path]:
    """Write every frame as ``frame_00000.png`` into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(_to_uint8(video.frames)):
        path = directory / f"frame_{index:05d}.png"
        Image.fromarray(frame).save(path)
        paths.append(path)
    return paths


def write_gif(video: FrameSequence, path: Union[str, Path]) -> Path:
    """Write the frames as a looping animated GIF at the video's frame rate."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images = [Image.fromarray(frame) for frame in _to_uint8(video.frames)]
    images[0].save(
        path,
        save_all=True,
        append_images=images[1:],
        duration=max(1, round(1000.0 / video.rate)),
        loop=0,
    )
    return path
