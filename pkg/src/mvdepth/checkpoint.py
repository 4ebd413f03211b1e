"""Single-file checkpoint archives (torch.save of a plain dict)."""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import ConfigMismatch

FORMAT_VERSION = 1


def save_checkpoint(ckpt: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(ckpt, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, kind: str | None = None) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if "format_version" not in ckpt:
        raise ConfigMismatch(f"{path} is not a checkpoint archive")
    if ckpt["format_version"] > FORMAT_VERSION:
        raise ConfigMismatch(f"{path} has format_version {ckpt['format_version']} > supported {FORMAT_VERSION}")
    if kind is not None and ckpt.get("kind") != kind:
        raise ConfigMismatch(f"{path} holds a {ckpt.get('kind')!r} checkpoint, expected {kind!r}")
    return ckpt
