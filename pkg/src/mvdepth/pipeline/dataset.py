"""Paired multi-view dataset: render scenes to PNGs and index them in a JSON-lines manifest."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from ..camera import CameraRig, rig_poses
from ..diffusion.text import prompt_batch, tokenize
from ..errors import EmptyDataset
from ..renderer import load_rgb_png, render_pair, save_depth_png, save_rgb_png
from ..scene import DetailedScene, Footprint, dumps_scene, generate_paired_scene, scene_from_dict, scene_prompt

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class ManifestRecord:
    scene_id: str
    split: str
    view_index: int
    azimuth_deg: float
    elevation_deg: float
    shoebox_rgb_path: str
    detail_rgb_path: str
    depth_path: str
    depth_min: float
    depth_max: float
    prompt: str
    root: Path = field(default=Path("."), compare=False, repr=False)

    def resolve(self, key: str) -> Path:
        return self.root / getattr(self, key)

    def to_json(self) -> str:
        doc = asdict(self)
        doc.pop("root")
        return json.dumps(doc, sort_keys=True)


def scene_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed % (1 << 32), k]).generate_state(1, np.uint64)[0])


def split_scenes(n_scenes: int, split_ratio: float, seed: int) -> list[str]:
    """Scene-level train/test assignment ('train' or 'test' per scene index)."""
    if n_scenes == 1:
        return ["train"]
    n_train = min(n_scenes - 1, max(1, int(round(split_ratio * n_scenes))))
    order = np.random.default_rng([seed % (1 << 32), 7]).permutation(n_scenes)
    splits = ["test"] * n_scenes
    for i in order[:n_train]:
        splits[int(i)] = "train"
    return splits


def build_dataset(
    out_dir: str | Path,
    n_scenes: int,
    rig: CameraRig,
    resolution: int,
    split_ratio: float,
    seed: int,
    classes: Sequence[str] = tuple(f.value for f in Footprint),
) -> Path:
    """Generate, render and index ``n_scenes`` paired scenes; returns the manifest path."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must lie in (0, 1)")
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    splits = split_scenes(n_scenes, split_ratio, seed)
    res = (resolution, resolution)
    lines = []
    for k in range(n_scenes):
        shoebox, detailed = generate_paired_scene(scene_seed(seed, k), classes[k % len(classes)])
        sid = shoebox.scene_id
        img_dir = out / "images" / sid
        img_dir.mkdir(parents=True, exist_ok=True)
        _write(out / "scenes" / f"{sid}.json", dumps_scene(detailed))
        prompt = scene_prompt(detailed)
        for v, pose in enumerate(rig_poses(rig, shoebox.bounding_sphere())):
            sb, dt, depth = render_pair(shoebox, detailed, pose, res)
            rel = {name: f"images/{sid}/{name}_{v:03d}.png" for name in ("shoebox", "detail", "depth")}
            try:
                save_rgb_png(sb, out / rel["shoebox"])
                save_rgb_png(dt, out / rel["detail"])
                dmin, dmax = save_depth_png(depth, out / rel["depth"])
            except OSError as exc:
                raise OSError(f"failed writing images under {img_dir}: {exc}") from exc
            rec = ManifestRecord(
                sid, splits[k], v, pose.azimuth, pose.elevation,
                rel["shoebox"], rel["detail"], rel["depth"], dmin, dmax, prompt,
            )
            lines.append(rec.to_json())
    manifest = out / MANIFEST_NAME
    _write(manifest, "\n".join(lines) + "\n")
    logger.info("wrote %d records for %d scenes to %s", len(lines), n_scenes, manifest)
    return manifest


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    path = Path(path)
    root = path.parent
    records = []
    seen = set()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = ManifestRecord(**json.loads(line), root=root)
            key = (rec.scene_id, rec.view_index)
            if key in seen:
                raise ValueError(f"duplicate manifest entry {key}")
            seen.add(key)
            records.append(rec)
    return records


def group_by_scene(records: Iterable[ManifestRecord], split: str | None = None) -> dict[str, list[ManifestRecord]]:
    groups: dict[str, list[ManifestRecord]] = defaultdict(list)
    for rec in records:
        if split is None or rec.split == split:
            groups[rec.scene_id].append(rec)
    return {sid: sorted(recs, key=lambda r: r.view_index) for sid, recs in sorted(groups.items())}


def load_scene(root: str | Path, scene_id: str) -> tuple:
    doc = json.loads((Path(root) / "scenes" / f"{scene_id}.json").read_text())
    return scene_from_dict(doc)


@dataclass(frozen=True, eq=False)
class SceneViews:
    """All loaded views of one scene as tensors, in view order."""

    scene_id: str
    shoebox: torch.Tensor  # (V, 3, H, W)
    detailed: torch.Tensor  # (V, 3, H, W)
    azimuth: torch.Tensor  # (V,)
    view_index: torch.Tensor  # (V,)
    tokens: torch.Tensor  # (L,)
    prompt: str = ""

    def __len__(self) -> int:
        return self.shoebox.shape[0]

    def window(self, start: int, length: int) -> "SceneViews":
        if start < 0 or start + length > len(self):
            raise ValueError(f"window [{start}, {start + length}) outside {len(self)} views")
        sl = slice(start, start + length)
        return SceneViews(
            self.scene_id, self.shoebox[sl], self.detailed[sl], self.azimuth[sl], self.view_index[sl],
            self.tokens, self.prompt,
        )


def _chw(arrays: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrays).transpose(0, 3, 1, 2).copy()).float()


def scene_views_from_records(records: Sequence[ManifestRecord]) -> SceneViews:
    if not records:
        raise EmptyDataset("no records for scene")
    sb = [load_rgb_png(r.resolve("shoebox_rgb_path")).data for r in records]
    dt = [load_rgb_png(r.resolve("detail_rgb_path")).data for r in records]
    return SceneViews(
        records[0].scene_id,
        _chw(sb),
        _chw(dt),
        torch.tensor([r.azimuth_deg for r in records], dtype=torch.float64),
        torch.tensor([r.view_index for r in records]),
        prompt_batch([tokenize(records[0].prompt)])[0],
        records[0].prompt,
    )


def scene_views_from_render(
    detailed: DetailedScene, rig: CameraRig, resolution: int, views: Sequence[int] | None = None
) -> SceneViews:
    """Render directly (no files) the selected rig views of a paired scene."""
    poses = rig_poses(rig, detailed.bounding_sphere())
    idx = list(range(len(poses))) if views is None else list(views)
    sb, dt = [], []
    for v in idx:
        a, b, _ = render_pair(detailed.base, detailed, poses[v], (resolution, resolution))
        sb.append(a.data)
        dt.append(b.data)
    prompt = scene_prompt(detailed)
    return SceneViews(
        detailed.scene_id,
        _chw(sb),
        _chw(dt),
        torch.tensor([poses[v].azimuth for v in idx], dtype=torch.float64),
        torch.tensor(idx),
        prompt_batch([tokenize(prompt)])[0],
        prompt,
    )


def load_split(manifest: str | Path, split: str | None, max_scenes: int | None = None) -> list[SceneViews]:
    groups = group_by_scene(load_manifest(manifest), split)
    items = list(groups.values())[: max_scenes or None]
    return [scene_views_from_records(recs) for recs in items]
