"""Monocular relative depth: an exact oracle backend and a small learned estimator.

The learned estimator predicts depth only up to an unknown scale and shift;
training and evaluation therefore align predictions to ground truth with a
closed-form least-squares (scale, shift) fit before comparing.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .camera import CameraPose
from .errors import DegenerateFit, EmptyDataset, OracleContextMissing
from .renderer import DepthMap, Image, Scene, render_view

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BACKGROUND_THRESHOLD = 0.99


class DepthBackend(str, enum.Enum):
    ORACLE = "ORACLE"
    LEARNED = "LEARNED"


@dataclass(frozen=True)
class DepthEstimatorConfig:
    backend: DepthBackend = DepthBackend.LEARNED
    levels: int = 3
    base_channels: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "backend", DepthBackend(self.backend))
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


@dataclass(frozen=True, eq=False)
class DepthContext:
    """Ground truth needed by the ORACLE backend."""

    scene: Scene
    pose: CameraPose


def _block(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.BatchNorm2d(c_out),
        nn.SiLU(),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.BatchNorm2d(c_out),
        nn.SiLU(),
    )


class DepthNet(nn.Module):
    """Encoder-decoder with skip connections; one multi-scale feature per level."""

    def __init__(self, cfg: DepthEstimatorConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_channels * 2**i for i in range(cfg.levels)]
        self.enc = nn.ModuleList()
        prev = 3
        for w in widths:
            self.enc.append(_block(prev, w))
            prev = w
        self.dec = nn.ModuleList(_block(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(cfg.levels - 1)))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def features(self, x):
        feats = []
        for i, block in enumerate(self.enc):
            if i > 0:
                x = F.avg_pool2d(x, 2)
            x = block(x)
            feats.append(x)
        return feats

    def forward(self, x):
        """(B, 3, H, W) images -> (B, H, W) positive relative depth."""
        feats = self.features(x)
        h = feats[-1]
        for block, skip in zip(self.dec, reversed(feats[:-1])):
            h = F.interpolate(h, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            h = block(torch.cat([h, skip], dim=1))
        return F.softplus(self.head(h))[:, 0] + 1e-3


def make_depth_net(cfg: DepthEstimatorConfig) -> DepthNet:
    torch.manual_seed(cfg.seed)
    return DepthNet(cfg)


def foreground_mask(rgb: np.ndarray) -> np.ndarray:
    """Pixels that are not the white background."""
    return np.asarray(rgb).min(axis=-1) < BACKGROUND_THRESHOLD


def estimate_depth(
    image: Image,
    cfg: DepthEstimatorConfig,
    ctx: DepthContext | None = None,
    model: DepthNet | None = None,
) -> DepthMap:
    if cfg.backend is DepthBackend.ORACLE:
        if ctx is None:
            raise OracleContextMissing("the ORACLE backend needs the scene and pose")
        return render_view(ctx.scene, ctx.pose, (image.width, image.height))[1]
    if model is None:
        model = make_depth_net(cfg)
    model.eval()
    x = torch.from_numpy(np.ascontiguousarray(image.data.transpose(2, 0, 1))).float()[None]
    with torch.no_grad():
        # average with the mirrored prediction
        pred = (0.5 * (model(x) + model(x.flip(-1)).flip(-1)))[0].double().numpy()
    mask = foreground_mask(image.data)
    return DepthMap(np.where(mask, pred, 0.0), mask, relative=True)


# -- alignment and loss ------------------------------------------------------


def _valid(pred, gt, mask):
    p = getattr(pred, "data", pred)
    g = getattr(gt, "data", gt)
    if mask is None:
        mask = np.ones(np.shape(p), dtype=bool)
        for m in (getattr(pred, "mask", None), getattr(gt, "mask", None)):
            if m is not None:
                mask = mask & m
    return p, g, mask


def align_affine(pred, gt, mask=None) -> tuple[float, float]:
    """Least-squares (scale, shift) minimizing sum((scale * pred + shift - gt)^2) over valid pixels."""
    p, g, mask = _valid(pred, gt, mask)
    p = np.asarray(p, dtype=float)[mask]
    g = np.asarray(g, dtype=float)[mask]
    if p.size < 2:
        raise DegenerateFit(f"only {p.size} valid pixels")
    pc = p - p.mean()
    var = float(pc @ pc)
    if var == 0.0:
        raise DegenerateFit("prediction is constant over valid pixels")
    scale = float(pc @ (g - g.mean())) / var
    return scale, float(g.mean() - scale * p.mean())


def depth_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared residual after affine alignment of ``pred`` to ``gt``.

    Accepts (..., H, W) tensors and returns one value per leading entry.
    Differentiable in ``pred``; the closed-form fit is differentiated through.
    """
    pred = torch.as_tensor(pred)
    gt = torch.as_tensor(gt).to(pred.dtype)
    if mask is None:
        mask = torch.ones_like(pred, dtype=torch.bool)
    m = torch.as_tensor(mask).to(pred.dtype)
    count = m.flatten(-2).sum(-1)
    if (count < 2).any():
        raise DegenerateFit("fewer than 2 valid pixels")
    pm = (pred * m).flatten(-2).sum(-1) / count
    gm = (gt * m).flatten(-2).sum(-1) / count
    pc = (pred - pm[..., None, None]) * m
    gc = (gt - gm[..., None, None]) * m
    var = pc.pow(2).flatten(-2).sum(-1)
    if (var == 0).any():
        raise DegenerateFit("prediction is constant over valid pixels")
    scale = (pc * gc).flatten(-2).sum(-1) / var
    resid = (scale[..., None, None] * pc - gc) * m
    return resid.pow(2).flatten(-2).sum(-1) / count


def normalize_depth(depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Min-max normalize valid depths to [0, 1]; invalid pixels become 0."""
    out = np.zeros(np.shape(depth))
    if mask.any():
        d = depth[mask]
        span = d.max() - d.min()
        out[mask] = (d - d.min()) / span if span > 0 else 0.0
    return out


def aligned_rmse(pred: DepthMap, gt: DepthMap) -> float:
    """RMSE against min-max normalized ground truth after affine alignment."""
    mask = gt.mask & pred.mask
    target = normalize_depth(gt.data, gt.mask)
    s, t = align_affine(pred.data, target, mask)
    resid = s * pred.data[mask] + t - target[mask]
    return float(np.sqrt(np.mean(resid**2)))


# -- training ----------------------------------------------------------------


def _load_depth_records(
    records: Sequence, include_shoebox: bool = True
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    from .renderer import load_depth_png, load_rgb_png

    if not records:
        raise EmptyDataset("no depth training records")
    keys = ("detail_rgb_path", "shoebox_rgb_path") if include_shoebox else ("detail_rgb_path",)
    rgbs, depths, masks = [], [], []
    for key in keys:
        for rec in records:
            # both renders of a view share its depth map
            rgbs.append(load_rgb_png(rec.resolve(key)).data)
            d = load_depth_png(rec.resolve("depth_path"), rec.depth_min, rec.depth_max)
            depths.append(normalize_depth(d.data, d.mask))
            masks.append(d.mask)
    x = torch.from_numpy(np.stack(rgbs).transpose(0, 3, 1, 2)).float()
    return x, torch.from_numpy(np.stack(depths)).float(), torch.from_numpy(np.stack(masks))


def train_estimator(
    records: Sequence,
    epochs: int,
    seed: int,
    cfg: DepthEstimatorConfig | None = None,
    batch_size: int = 4,
    lr: float = 2e-3,
    log_path: str | Path | None = None,
    flip: bool = True,
    include_shoebox: bool = True,
) -> dict:
    """Fit the LEARNED estimator on manifest records; returns a checkpoint dict.

    ``flip`` mirrors a random half of each batch left-right (image and depth
    together), which leaves the depth labels valid. ``include_shoebox`` adds
    the shoebox render of every view as a second input for the same depth.
    """
    cfg = cfg or DepthEstimatorConfig(seed=seed)
    x, y, m = _load_depth_records(records, include_shoebox)
    keep = m.flatten(1).sum(1) >= 2
    x, y, m = x[keep], y[keep], m[keep]
    if len(x) == 0:
        raise EmptyDataset("no record has enough valid depth pixels")
    torch.manual_seed(seed)
    model = DepthNet(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    steps_per_epoch = (len(x) + batch_size - 1) // batch_size
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, epochs * steps_per_epoch))
    gen = torch.Generator().manual_seed(seed)
    history = []
    log = open(log_path, "w") if log_path else None
    try:
        for epoch in range(epochs):
            order = torch.randperm(len(x), generator=gen)
            total, seen = 0.0, 0
            model.train()
            for i in range(0, len(x), batch_size):
                idx = order[i : i + batch_size]
                xb, yb, mb = x[idx], y[idx], m[idx]
                if flip:
                    f = torch.rand(len(idx), generator=gen) < 0.5
                    xb = torch.where(f[:, None, None, None], xb.flip(-1), xb)
                    yb = torch.where(f[:, None, None], yb.flip(-1), yb)
                    mb = torch.where(f[:, None, None], mb.flip(-1), mb)
                loss = depth_loss(model(xb), yb, mb).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                sched.step()
                total += float(loss.detach()) * len(idx)
                seen += len(idx)
            history.append(total / seen)
            logger.info("depth epoch %d loss %.6f", epoch, history[-1])
            if log:
                log.write(json.dumps({"epoch": epoch, "depth_loss": history[-1]}) + "\n")
    finally:
        if log:
            log.close()
    return {
        "format_version": FORMAT_VERSION,
        "kind": "depth",
        "config": {**asdict(cfg), "backend": cfg.backend.value},
        "model": model.state_dict(),
        "history": history,
        "seed": seed,
    }


def load_estimator(ckpt: dict) -> DepthNet:
    cfg = DepthEstimatorConfig(**ckpt["config"])
    model = DepthNet(cfg)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model
