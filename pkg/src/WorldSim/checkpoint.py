"""
Single-file checkpoints: named tensors and a JSON header.

The header records the module kind, the format version, a hash of the module
configuration, the training step and the seed the module was created with. Loading
checks the kind and the version, and refuses a configuration hash mismatch unless
forced. Stages may add their training settings as further header entries.
"""

import hashlib
import json
import logging
import os
import pickle
import warnings
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, NamedTuple, Optional, Union

import torch

from .utils.data_types import CheckpointHeader

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = "1.0"
CHECKPOINT_KINDS = ("tokenizer", "world_model", "decoder")
HEADER_FIELDS = ("kind", "version", "config_hash", "config", "step", "seed")


class CheckpointError(ValueError):
    """A checkpoint is missing, corrupt, of the wrong kind or version, or mismatched."""


def config_hash(config: Any) -> str:
    """SHA-256 of the canonical JSON form of a dataclass or mapping."""
    data = asdict(config) if is_dataclass(config) else dict(config)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


class Checkpoint(NamedTuple):
    header: CheckpointHeader
    arrays: Dict[str, torch.Tensor]

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def config(self) -> dict:
        return dict(self.header["config"])


def save_checkpoint(
    path: Union[str, Path],
    kind: str,
    arrays: Mapping[str, torch.Tensor],
    config: Any,
    step: int,
    seed: int,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Write a checkpoint atomically: the data goes to a temporary file that replaces
    `path` once complete.

    :param extra: Further JSON header entries, e.g. the training settings the arrays
        were produced with. They may not reuse the names of the standard entries.
    """
    if kind not in CHECKPOINT_KINDS:
        raise ValueError(f"kind must be one of {CHECKPOINT_KINDS}, got {kind}")
    extra = dict(extra or {})
    reserved = sorted(set(extra) & set(HEADER_FIELDS))
    if reserved:
        raise ValueError(f"extra header entries may not replace {reserved}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": kind,
        "version": CHECKPOINT_FORMAT_VERSION,
        "config_hash": config_hash(config),
        "config": asdict(config) if is_dataclass(config) else dict(config),
        "step": int(step),
        "seed": int(seed),
        **extra,
    }
    payload = {
        "header": json.dumps(header, sort_keys=True),
        "arrays": {name: tensor.detach().cpu().clone() for name, tensor in arrays.items()},
    }
    temporary = path.with_name(path.name + ".tmp")
    torch.save(payload, temporary)
    os.replace(temporary, path)
    logger.info("Wrote %s checkpoint %s at step %s", kind, path, step)
    return path


def load_checkpoint(
    path: Union[str, Path],
    kind: Optional[str] = None,
    config: Any = None,
    force: bool = False,
) -> Checkpoint:
    """
    Read a checkpoint.

    :param kind: Expected module kind, None accepts any kind.
    :param config: Configuration the checkpoint must have been created with. A hash
        mismatch raises CheckpointError, or only warns with `force`.
    :param force: Load despite a configuration hash mismatch.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"No checkpoint found at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError, ValueError) as e:
        raise CheckpointError(f"Checkpoint {path} is corrupt: {e}") from e
    if not isinstance(payload, dict) or set(payload) != {"header", "arrays"}:
        raise CheckpointError(f"Checkpoint {path} does not hold a header and arrays")
    try:
        header = json.loads(payload["header"])
    except (TypeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint {path} has an unreadable header") from e
    if header.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format version {header.get('version')}, expected "
            f"{CHECKPOINT_FORMAT_VERSION}"
        )
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(
            f"Checkpoint {path} holds a {header.get('kind')} module, expected {kind}"
        )
    if config is not None and header.get("config_hash") != config_hash(config):
        message = (
            f"Checkpoint {path} was created with a different {header.get('kind')} "
            "configuration"
        )
        if not force:
            raise CheckpointError(message + "; pass --force to load it anyway")
        warnings.warn(message + "; loading it because of --force")
    return Checkpoint(CheckpointHeader(header, mutable=False), payload["arrays"])
