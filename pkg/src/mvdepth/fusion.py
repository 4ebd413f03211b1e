"""Depth-aware multi-view refinement.

A small U-Net refines every view of a bundle. At the configured levels each
view's image tokens query a shared latent space built from the depth
features of all N views. Attention outputs and the final head are
zero-initialized residuals, so an untrained network is the identity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .blocks import Attention, ResBlock, norm, zero_module
from .depth import normalize_depth
from .errors import EmptyDataset, ViewMisalignment
from .features import FeatureExtractorConfig
from .losses import LossWeights, image_space_loss, perceptual_loss, report_from_terms
from .renderer import DepthMap, Image, ViewBundle, ViewRecord

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class FusionConfig:
    base_channels: int = 16
    channel_multipliers: tuple[int, ...] = (1, 2)
    attention_levels: tuple[int, ...] = (1,)
    shared_latent_dim: int = 16
    heads: int = 2
    residual_attention: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers", tuple(self.channel_multipliers))
        object.__setattr__(self, "attention_levels", tuple(self.attention_levels))
        if self.shared_latent_dim < 8:
            raise ValueError("shared_latent_dim must be >= 8")
        if not self.attention_levels:
            raise ValueError("depth-aware attention needs at least one level")
        if any(not 0 <= lvl < len(self.channel_multipliers) for lvl in self.attention_levels):
            raise ValueError("attention level out of range")
        if not self.residual_attention:
            raise ValueError("depth-aware attention is always residual")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_multipliers]


def depth_input(depth: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """(..., H, W) relative depth + mask -> (..., 2, H, W): per-view normalized depth, mask."""
    m = mask.to(depth.dtype)
    big = torch.finfo(depth.dtype).max
    flat_d = depth.flatten(-2)
    flat_m = mask.flatten(-2)
    lo = torch.where(flat_m, flat_d, torch.full_like(flat_d, big)).min(-1).values
    hi = torch.where(flat_m, flat_d, torch.full_like(flat_d, -big)).max(-1).values
    empty = ~flat_m.any(-1)
    lo = torch.where(empty, torch.zeros_like(lo), lo)
    span = torch.where(empty | (hi <= lo), torch.ones_like(hi), hi - lo)
    norm_d = (depth - lo[..., None, None]) / span[..., None, None] * m
    return torch.stack([norm_d, m], dim=-3)


class DepthEncoder(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.blocks = nn.ModuleList()
        self.proj = nn.ModuleList()
        prev = 2
        for c in cfg.channels:
            self.blocks.append(nn.Sequential(nn.Conv2d(prev, c, 3, padding=1), nn.SiLU(), nn.Conv2d(c, c, 3, padding=1)))
            self.proj.append(nn.Conv2d(c, cfg.shared_latent_dim, 1))
            prev = c

    def forward(self, x):
        """(M, 2, H, W) -> list of (M, D, H / 2^l, W / 2^l)."""
        feats = []
        for lvl, (block, proj) in enumerate(zip(self.blocks, self.proj)):
            if lvl > 0:
                x = F.avg_pool2d(x, 2)
            x = block(x)
            feats.append(proj(x))
        return feats


def encode_depth(encoder: DepthEncoder, depth: torch.Tensor, mask: torch.Tensor) -> list[torch.Tensor]:
    """Shared-latent depth features per level for (..., H, W) depths."""
    x = depth_input(depth, mask)
    lead = x.shape[:-3]
    feats = encoder(x.reshape(-1, *x.shape[-3:]))
    return [f.reshape(*lead, *f.shape[1:]) for f in feats]


class DepthAwareCrossAttention(nn.Module):
    """Image tokens of each view attend to depth features of all views; zero-init residual."""

    def __init__(self, channels: int, latent_dim: int, heads: int):
        super().__init__()
        self.norm = norm(channels)
        self.attn = Attention(channels, context_dim=latent_dim, heads=heads)
        zero_module(self.attn.out)

    def forward(self, h: torch.Tensor, depth_feat: torch.Tensor) -> torch.Tensor:
        """h: (B, N, C, H, W) image features; depth_feat: (B, N, D, H, W)."""
        if h.shape[:2] != depth_feat.shape[:2] or h.shape[-2:] != depth_feat.shape[-2:]:
            raise ViewMisalignment(f"image features {tuple(h.shape)} vs depth features {tuple(depth_feat.shape)}")
        b, n, c, hh, ww = h.shape
        q = self.norm(h.reshape(b * n, c, hh, ww)).reshape(b, n, c, hh * ww).permute(0, 1, 3, 2).reshape(b, -1, c)
        d = depth_feat.shape[2]
        ctx = depth_feat.reshape(b, n, d, hh * ww).permute(0, 1, 3, 2).reshape(b, -1, d)
        out = self.attn(q, ctx)
        out = out.reshape(b, n, hh * ww, c).permute(0, 1, 3, 2).reshape(b, n, c, hh, ww)
        return h + out


def depth_aware_cross_attention(layer: DepthAwareCrossAttention, image_tokens, depth_features):
    return layer(image_tokens, depth_features)


class FusionNet(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.depth_encoder = DepthEncoder(cfg)
        self.conv_in = nn.Conv2d(3, ch[0], 3, padding=1)
        self.enc = nn.ModuleList()
        self.enc_attn = nn.ModuleDict()
        self.dec = nn.ModuleList()
        self.dec_attn = nn.ModuleDict()
        prev = ch[0]
        for lvl, c in enumerate(ch):
            self.enc.append(ResBlock(prev, c))
            if lvl in cfg.attention_levels:
                self.enc_attn[str(lvl)] = DepthAwareCrossAttention(c, cfg.shared_latent_dim, cfg.heads)
            prev = c
        for lvl in reversed(range(len(ch) - 1)):
            self.dec.append(ResBlock(prev + ch[lvl], ch[lvl]))
            if lvl in cfg.attention_levels:
                self.dec_attn[str(lvl)] = DepthAwareCrossAttention(ch[lvl], cfg.shared_latent_dim, cfg.heads)
            prev = ch[lvl]
        self.out_norm = norm(ch[0])
        self.head = zero_module(nn.Conv2d(ch[0], 3, 3, padding=1))

    def forward(self, images: torch.Tensor, depth: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """images (B, N, 3, H, W) in [0, 1]; depth, mask (B, N, H, W) -> refined images."""
        if images.shape[:2] != depth.shape[:2] or images.shape[-2:] != depth.shape[-2:]:
            raise ViewMisalignment(f"images {tuple(images.shape)} vs depths {tuple(depth.shape)}")
        b, n, c, hh, ww = images.shape
        dfeat = encode_depth(self.depth_encoder, depth.to(images.dtype), mask)
        h = self.conv_in(images.reshape(b * n, c, hh, ww))
        skips = []
        for lvl, block in enumerate(self.enc):
            if lvl > 0:
                h = F.avg_pool2d(h, 2)
            h = block(h)
            if str(lvl) in self.enc_attn:
                h = self.enc_attn[str(lvl)](h.reshape(b, n, *h.shape[1:]), dfeat[lvl]).reshape(b * n, *h.shape[1:])
            skips.append(h)
        for block, lvl in zip(self.dec, reversed(range(len(self.enc) - 1))):
            h = F.interpolate(h, scale_factor=2.0, mode="nearest")
            h = block(torch.cat([h, skips[lvl]], dim=1))
            if str(lvl) in self.dec_attn:
                h = self.dec_attn[str(lvl)](h.reshape(b, n, *h.shape[1:]), dfeat[lvl]).reshape(b * n, *h.shape[1:])
        delta = self.head(F.silu(self.out_norm(h)))
        return (images + delta.reshape(b, n, c, hh, ww)).clamp(0.0, 1.0)


def make_fusion_net(cfg: FusionConfig, seed: int = 0) -> FusionNet:
    torch.manual_seed(seed)
    return FusionNet(cfg)


def refine_bundle(model: FusionNet, images: ViewBundle, depths: Sequence[DepthMap]) -> ViewBundle:
    """One forward pass over all views; returns a bundle with refined RGB."""
    if len(depths) != len(images):
        raise ViewMisalignment(f"{len(images)} images but {len(depths)} depth maps")
    x = torch.from_numpy(images.rgb_array().transpose(0, 3, 1, 2).copy()).float()[None]
    d = torch.from_numpy(np.stack([dm.data for dm in depths])).float()[None]
    m = torch.from_numpy(np.stack([dm.mask for dm in depths]))[None]
    model.eval()
    with torch.no_grad():
        out = model(x, d, m)[0].numpy().transpose(0, 2, 3, 1)
    views = tuple(
        ViewRecord(v.view_index, v.pose, Image(out[k].astype(np.float32)), v.depth) for k, v in enumerate(images.views)
    )
    return ViewBundle(images.scene_id, views)


@dataclass(frozen=True, eq=False)
class FusionSample:
    """One scene window: stage-1 images, estimated depth (+ mask), reference images."""

    images: torch.Tensor  # (N, 3, H, W)
    depth: torch.Tensor  # (N, H, W)
    mask: torch.Tensor  # (N, H, W) bool
    reference: torch.Tensor  # (N, 3, H, W)


def fusion_objective(out, reference, feat_cfg, w, lambda_consistency):
    recon = perceptual_loss(out, reference, feat_cfg)
    total, terms = image_space_loss(out, reference, feat_cfg, w)
    return (recon + lambda_consistency * total).mean(), terms


def train_fusion(
    samples: Sequence[FusionSample],
    steps: int,
    w: LossWeights | None = None,
    seed: int = 0,
    cfg: FusionConfig | None = None,
    feat_cfg: FeatureExtractorConfig | None = None,
    lambda_consistency: float = 1e-5,
    lr: float = 2e-3,
    log_path: str | Path | None = None,
) -> dict:
    """Full-batch training of the refinement net; returns a checkpoint dict.

    The objective is the perceptual reconstruction to the references plus
    ``lambda_consistency`` times the weighted image-space loss.
    """
    if not samples:
        raise EmptyDataset("no fusion training samples")
    cfg = cfg or FusionConfig()
    feat_cfg = feat_cfg or FeatureExtractorConfig()
    w = w or LossWeights()
    x = torch.stack([s.images for s in samples]).float()
    d = torch.stack([s.depth for s in samples]).float()
    m = torch.stack([s.mask for s in samples])
    ref = torch.stack([s.reference for s in samples]).float()
    model = make_fusion_net(cfg, seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    log = open(log_path, "w") if log_path else None
    try:
        for step in range(steps):
            out = model(x, d, m)
            loss, terms = fusion_objective(out, ref, feat_cfg, w, lambda_consistency)
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(float(loss.detach()))
            if log:
                rep = report_from_terms(terms, w)
                log.write(json.dumps({"step": step, "objective": history[-1], **asdict(rep)}) + "\n")
    finally:
        if log:
            log.close()
    logger.info("fusion objective %.4f -> %.4f", history[0], history[-1])
    return {
        "format_version": FORMAT_VERSION,
        "kind": "fusion",
        "config": asdict(cfg),
        "model": model.state_dict(),
        "history": history,
        "seed": seed,
        "lambda_consistency": lambda_consistency,
        "weights": asdict(w),
    }


def load_fusion(ckpt: dict) -> FusionNet:
    model = FusionNet(FusionConfig(**ckpt["config"]))
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model


def fusion_sample_from_arrays(images, depth, mask, reference) -> FusionSample:
    t = lambda a: torch.from_numpy(np.ascontiguousarray(a))  # noqa: E731
    return FusionSample(t(images).float(), t(depth).float(), t(mask).bool(), t(reference).float())


def normalized_depth_stack(depths: Sequence[DepthMap]) -> np.ndarray:
    return np.stack([normalize_depth(dm.data, dm.mask) for dm in depths])
