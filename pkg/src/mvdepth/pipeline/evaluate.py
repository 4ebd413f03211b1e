"""Reconstruction / generation metrics for stage-1 and stage-3 outputs."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..depth import DepthBackend, DepthContext, DepthEstimatorConfig, DepthNet, estimate_depth
from ..diffusion.core import Sampler, sample
from ..features import FeatureExtractorConfig, extract, gram
from ..fusion import FusionNet
from ..losses import angle_pair_terms, content_pair_terms
from ..renderer import Image

PSNR_IDENTICAL = math.inf


class Experiment(str, enum.Enum):
    RECONSTRUCTION = "RECONSTRUCTION"
    GENERATION = "GENERATION"


class Stage(str, enum.Enum):
    STAGE1 = "STAGE1"
    STAGE3 = "STAGE3"


def experiment_for_split(split: str) -> Experiment:
    return Experiment.RECONSTRUCTION if split == "train" else Experiment.GENERATION


def psnr(generated: torch.Tensor, reference: torch.Tensor) -> float:
    mse = float(((generated.double() - reference.double()) ** 2).mean())
    return PSNR_IDENTICAL if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def style_pair_terms(g: torch.Tensor, cfg: FeatureExtractorConfig) -> torch.Tensor:
    """||G(phi(g_i)) - G(phi(g_i+1))||^2 per adjacent pair of generated views (layer-summed)."""
    feats = extract(g, cfg)
    total = 0
    for f in feats:
        gm = gram(f)
        total = total + (gm[..., :-1, :, :] - gm[..., 1:, :, :]).pow(2).sum((-1, -2))
    return total


def window_metrics(generated: torch.Tensor, reference: torch.Tensor, cfg: FeatureExtractorConfig) -> dict:
    """Metrics for one (N, 3, H, W) window against its references."""
    g = generated.double()
    r = reference.double()
    per_view = [psnr(g[i], r[i]) for i in range(g.shape[0])]
    finite = [p for p in per_view if math.isfinite(p)]
    if g.shape[0] < 2:
        style = content = angle = 0.0
    else:
        style = float(style_pair_terms(g, cfg).mean())
        content = float(content_pair_terms(g, r, cfg).mean())
        angle = float(angle_pair_terms(g, r).mean())
    return {
        "psnr": psnr(g, r) if finite or not per_view else PSNR_IDENTICAL,
        "psnr_per_view": per_view,
        "style_consistency": style,
        "content_consistency": content,
        "angle_consistency": angle,
    }


METRIC_KEYS = ("psnr", "style_consistency", "content_consistency", "angle_consistency")


@dataclass
class MetricsReport:
    experiment: Experiment
    stage: Stage
    per_scene: list[dict] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        if not self.per_scene:
            return {k: float("nan") for k in METRIC_KEYS}
        return {k: float(np.mean([s[k] for s in self.per_scene])) for k in METRIC_KEYS}

    def per_view_psnr(self) -> list[float]:
        rows = np.array([s["psnr_per_view"] for s in self.per_scene], dtype=float)
        return [float(v) for v in rows.mean(0)] if len(rows) else []

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "stage": self.stage.value,
            "aggregate": self.aggregate,
            "per_scene": self.per_scene,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        doc = json.loads(Path(path).read_text())
        return cls(Experiment(doc["experiment"]), Stage(doc["stage"]), doc["per_scene"])


def stage1_outputs(model, scene_window, schedule, sampler=Sampler.DDIM, steps: int = 50, seed: int = 0):
    """Sample all views of one scene window; returns (N, 3, H, W)."""
    return sample(
        model,
        scene_window.shoebox[None],
        scene_window.azimuth[None],
        scene_window.tokens[None],
        schedule,
        sampler,
        steps,
        seed,
    )[0]


def estimate_window_depth(images: torch.Tensor, depth_cfg: DepthEstimatorConfig, depth_model: DepthNet | None,
                          contexts=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-view relative depth and masks for (N, 3, H, W) images."""
    ds, ms = [], []
    for i in range(images.shape[0]):
        img = Image(images[i].permute(1, 2, 0).numpy().astype(np.float32))
        ctx = contexts[i] if contexts is not None else None
        dm = estimate_depth(img, depth_cfg, ctx=ctx, model=depth_model)
        ds.append(dm.data)
        ms.append(dm.mask)
    return torch.from_numpy(np.stack(ds)).float(), torch.from_numpy(np.stack(ms))


def evaluate(
    scenes,
    split: str,
    stage: Stage | str,
    feat_cfg: FeatureExtractorConfig,
    diffusion_model,
    schedule,
    window_start: int = 0,
    n_views: int | None = None,
    sampler: Sampler | str = Sampler.DDIM,
    sample_steps: int = 50,
    seed: int = 0,
    depth_cfg: DepthEstimatorConfig | None = None,
    depth_model: DepthNet | None = None,
    fusion_model: FusionNet | None = None,
    depth_contexts=None,
    generated_override=None,
) -> MetricsReport:
    """Sample each scene's view window and score it against the detailed references.

    ``generated_override`` maps scene_id -> (N, 3, H, W) tensor and bypasses
    sampling (used to score externally produced or oracle images).
    ``depth_contexts`` maps scene_id -> per-view :class:`DepthContext` list for
    the ORACLE depth backend.
    """
    stage = Stage(stage)
    report = MetricsReport(experiment_for_split(split), stage)
    for sv in scenes:
        n = n_views or (diffusion_model.cfg.n_views_train if diffusion_model is not None else len(sv))
        win = sv.window(window_start, n)
        if generated_override is not None:
            out = generated_override[sv.scene_id]
        else:
            out = stage1_outputs(diffusion_model, win, schedule, sampler, sample_steps, seed)
        if stage is Stage.STAGE3:
            cfg = depth_cfg or DepthEstimatorConfig()
            ctx = None
            if cfg.backend is DepthBackend.ORACLE and depth_contexts is not None:
                ctx = depth_contexts[sv.scene_id][window_start : window_start + n]
            depth, mask = estimate_window_depth(out, cfg, depth_model, ctx)
            with torch.no_grad():
                fusion_model.eval()
                out = fusion_model(out[None].float(), depth[None], mask[None])[0]
        row = {"scene_id": sv.scene_id, "window_start": window_start, **window_metrics(out, win.detailed, feat_cfg)}
        report.per_scene.append(row)
    return report


def depth_contexts_for(records_root, scene_ids, rig, load_scene):
    from ..camera import rig_poses

    out = {}
    for sid in scene_ids:
        _, detailed = load_scene(records_root, sid)
        out[sid] = [DepthContext(detailed, p) for p in rig_poses(rig, detailed.bounding_sphere())]
    return out


def report_summary(report: MetricsReport) -> str:
    agg = report.aggregate
    return f"{report.experiment.value}/{report.stage.value}: " + ", ".join(f"{k}={v:.4g}" for k, v in agg.items())


def save_reports(reports, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rep in reports:
        p = out_dir / f"{rep.experiment.value.lower()}_{rep.stage.value.lower()}.json"
        rep.save(p)
        paths.append(p)
    return paths


__all__ = [
    "Experiment",
    "MetricsReport",
    "Stage",
    "evaluate",
    "psnr",
    "style_pair_terms",
    "window_metrics",
    "asdict",
]
