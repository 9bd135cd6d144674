"""Checkpoint archives.

One archive stores everything needed to resume or evaluate a run: a format
version string, the full training configuration, the network topologies,
all parameter tensors (reconstruction network, both feature branches,
classifier heads), both optimizer states, and the RNG states. Serialization
round-trips every tensor bit-exactly.
"""

from __future__ import annotations

import zipfile
from pathlib import Path

import torch

from .errors import CheckpointIntegrityError, CheckpointVersionError

CHECKPOINT_VERSION = "mrjl-ckpt-v1"

_REQUIRED_KEYS = ("version", "train_config", "rrn_config", "branch_config",
                  "num_classes", "epoch", "model", "optim")


def save_checkpoint(payload: dict, path: str | Path) -> None:
    missing = [k for k in _REQUIRED_KEYS if k not in payload]
    if missing:
        raise ValueError(f"checkpoint payload missing keys: {missing}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    """Load and validate an archive; never mutates anything on failure."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointIntegrityError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (RuntimeError, OSError, EOFError, zipfile.BadZipFile,
            ModuleNotFoundError, AttributeError, KeyError) as exc:
        raise CheckpointIntegrityError(f"checkpoint {path} is corrupt: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointIntegrityError(f"checkpoint {path} is not a recognized archive")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has version {payload['version']!r}, "
            f"this build reads {CHECKPOINT_VERSION!r}"
        )
    missing = [k for k in _REQUIRED_KEYS if k not in payload]
    if missing:
        raise CheckpointIntegrityError(f"checkpoint {path} missing fields: {missing}")
    return payload


def checkpoint_id(path: str | Path, payload: dict) -> str:
    return f"{Path(path).name}@epoch{payload.get('epoch', '?')}"
