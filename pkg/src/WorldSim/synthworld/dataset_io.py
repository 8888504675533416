"""
Dataset directories.

Layout::

    <root>/manifest.json
    <root>/episode_00000/frames.wst     float32 (T, H, W, 3)
    <root>/episode_00000/semantics.wst  uint8 (T, H, W)
    <root>/episode_00000/meta.json      actions, caption, feature record, seed, rate
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from ..utils.data_types import FeatureRecord
from ..utils.seeding import derive_seed
from ..utils.tensor_io import read_tensor, write_tensor
from .balancing import BalanceSpec
from .world import ActionTrace, Episode, FrameSequence, WorldConfig, generate_episode

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"


def episode_seed(world_config: WorldConfig, index: int) -> int:
    """Seed of the episode with the given index in a dataset of `world_config`."""
    return derive_seed(world_config.seed, "episode", index)


def generate_dataset(
    world_config: WorldConfig, indices: Iterable[int]
) -> List[Episode]:
    """Generate the episodes with the given dataset indices."""
    episodes = []
    for index in indices:
        episodes.append(generate_episode(world_config, episode_seed(world_config, index)))
    logger.debug("Generated %s episodes", len(episodes))
    return episodes


def _episode_dir_name(position: int) -> str:
    return f"episode_{position:05d}"


def write_episode(directory: Union[str, Path], episode: Episode) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / "frames.wst", episode.frames.frames.astype(np.float32))
    write_tensor(directory / "semantics.wst", episode.semantics.astype(np.uint8))
    meta = {
        "version": DATASET_FORMAT_VERSION,
        "seed": int(episode.seed),
        "rate": float(episode.frames.rate),
        "caption": episode.caption,
        "metadata": dict(episode.metadata),
        "actions": {
            "speed": [float(v) for v in episode.actions.speed],
            "curvature": [float(v) for v in episode.actions.curvature],
        },
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def read_episode(directory: Union[str, Path]) -> Episode:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"Cannot read episode metadata in {directory}") from e
    if meta.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(
            f"Episode {directory} has format version {meta.get('version')}, "
            f"expected {DATASET_FORMAT_VERSION}"
        )
    return Episode(
        frames=FrameSequence(frames=read_tensor(directory / "frames.wst"), rate=meta["rate"]),
        actions=ActionTrace(
            speed=np.asarray(meta["actions"]["speed"], dtype=float),
            curvature=np.asarray(meta["actions"]["curvature"], dtype=float),
        ),
        semantics=read_tensor(directory / "semantics.wst"),
        metadata=FeatureRecord(meta["metadata"], mutable=False),
        caption=meta["caption"],
        seed=meta["seed"],
    )


def write_dataset(
    root: Union[str, Path],
    episodes: Sequence[Episode],
    world_config: WorldConfig,
    balance_spec: Optional[BalanceSpec] = None,
    split: str = "train",
) -> Path:
    """
    Write episodes and a manifest listing them and the balancing used to select them.

    :return: Path of the manifest.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for position, episode in enumerate(episodes):
        name = _episode_dir_name(position)
        write_episode(root / name, episode)
        entries.append({"directory": name, "seed": int(episode.seed), "caption": episode.caption})
    manifest = {
        "version": DATASET_FORMAT_VERSION,
        "split": split,
        "world": asdict(world_config),
        "balance": None
        if balance_spec is None
        else {
            "features": [[name, list(edges)] for name, edges in balance_spec.features],
            "exponent": balance_spec.exponent,
        },
        "episodes": entries,
    }
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.info("Wrote %s episodes to %s", len(entries), root)
    return manifest_path


def read_manifest(root: Union[str, Path]) -> dict:
    path = Path(root) / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ValueError(f"No dataset manifest found at {path}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"Dataset manifest {path} is not valid JSON") from e
    if manifest.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(
            f"Dataset manifest {path} has version {manifest.get('version')}, "
            f"expected {DATASET_FORMAT_VERSION}"
        )
    return manifest


def read_dataset(root: Union[str, Path]) -> List[Episode]:
    """Read every episode listed in the manifest of a dataset directory."""
    root = Path(root)
    manifest = read_manifest(root)
    return [read_episode(root / entry["directory"]) for entry in manifest["episodes"]]
