"""Stage-1 training loop over multi-view scene windows."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import torch

from ..checkpoint import FORMAT_VERSION
from ..errors import ConfigMismatch, EmptyDataset
from ..features import FeatureExtractorConfig, extractor_weights
from ..losses import LossWeights
from .core import MultiViewBatch, training_step
from .schedule import DiffusionSchedule, make_schedule
from .unet import MultiViewUNet, MVUNetConfig

logger = logging.getLogger(__name__)


def collate(scenes: Sequence, n_views: int, generator: torch.Generator) -> MultiViewBatch:
    """Stack one random contiguous ``n_views`` window from each scene."""
    parts = []
    for sv in scenes:
        if len(sv) < n_views:
            raise EmptyDataset(f"scene {sv.scene_id} has {len(sv)} views, need {n_views}")
        start = int(torch.randint(0, len(sv) - n_views + 1, (1,), generator=generator))
        parts.append(sv.window(start, n_views))
    return MultiViewBatch(
        torch.stack([p.shoebox for p in parts]),
        torch.stack([p.detailed for p in parts]),
        torch.stack([p.azimuth for p in parts]),
        torch.stack([p.view_index for p in parts]),
        torch.stack([p.tokens for p in parts]),
    )


def train_diffusion(
    scenes: Sequence,
    unet_cfg: MVUNetConfig,
    schedule: DiffusionSchedule,
    feat_cfg: FeatureExtractorConfig,
    weights: LossWeights,
    lambda_img: float,
    steps: int,
    seed: int,
    lr: float = 2e-3,
    batch_scenes: int = 4,
    grad_clip: float = 1.0,
    log_path: str | Path | None = None,
) -> tuple[MultiViewUNet, list[dict]]:
    """Adam on the noise MSE + image-space objective; deterministic for a fixed seed."""
    if not scenes:
        raise EmptyDataset("no training scenes")
    torch.manual_seed(seed)
    model = MultiViewUNet(unet_cfg, schedule)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps, eta_min=lr * 0.05)
    gen = torch.Generator().manual_seed(seed)
    history = []
    log = open(log_path, "w") if log_path else None
    try:
        for step in range(steps):
            pick = torch.randperm(len(scenes), generator=gen)[:batch_scenes].sort().values
            batch = collate([scenes[int(i)] for i in pick], unet_cfg.n_views_train, gen)
            objective, report, mse = training_step(model, batch, schedule, feat_cfg, weights, lambda_img, gen)
            opt.zero_grad()
            objective.backward()
            if grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
            opt.step()
            sched.step()
            row = {"step": step, "objective": float(objective.detach()), "mse": mse, **asdict(report)}
            history.append(row)
            if log:
                log.write(json.dumps(row) + "\n")
            if step % 100 == 0:
                logger.info("diffusion step %d objective %.5f mse %.5f", step, row["objective"], mse)
    finally:
        if log:
            log.close()
    model.optimizer_state = opt.state_dict()
    return model, history


def diffusion_checkpoint(
    model: MultiViewUNet,
    schedule: DiffusionSchedule,
    feat_cfg: FeatureExtractorConfig,
    config_snapshot: dict,
    global_step: int,
) -> dict:
    state = model.state_dict()
    return {
        "format_version": FORMAT_VERSION,
        "kind": "diffusion",
        "unet_config": model.cfg.to_dict(),
        "model": {k: v for k, v in state.items() if not k.startswith("control.")},
        "control": {k: v for k, v in state.items() if k.startswith("control.")},
        "extractor": {
            "config": {**asdict(feat_cfg), "backend": feat_cfg.backend.value},
            "weights": extractor_weights(feat_cfg),
        },
        "schedule": schedule.params(),
        "config": config_snapshot,
        "optimizer": getattr(model, "optimizer_state", None),
        "global_step": global_step,
    }


def load_diffusion(ckpt: dict, expect: MVUNetConfig | None = None) -> tuple[MultiViewUNet, DiffusionSchedule]:
    cfg = MVUNetConfig(**ckpt["unet_config"])
    if expect is not None and expect != cfg:
        raise ConfigMismatch(f"checkpoint U-Net config {cfg} does not match {expect}")
    s = ckpt["schedule"]
    schedule = make_schedule(s["T"], s["beta_start"], s["beta_end"])
    model = MultiViewUNet(cfg, schedule)
    model.load_state_dict({**ckpt["model"], **ckpt["control"]})
    model.eval()
    return model, schedule
