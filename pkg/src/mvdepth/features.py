"""Fixed random conv features and Gram matrices.

A seeded, frozen stack of 3x3 conv -> ReLU -> 2x average-pool layers stands
in for a pretrained VGG. The stack is deterministic for a given seed and
differentiable with respect to its input.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ImageTooSmall


class FeatureBackend(str, enum.Enum):
    TINY_CONV = "TINY_CONV"
    IDENTITY = "IDENTITY"


@dataclass(frozen=True)
class FeatureExtractorConfig:
    backend: FeatureBackend = FeatureBackend.TINY_CONV
    seed: int = 0
    layer_count: int = 3

    def __post_init__(self):
        object.__setattr__(self, "backend", FeatureBackend(self.backend))
        if self.backend is FeatureBackend.TINY_CONV and self.layer_count < 1:
            raise ValueError("TINY_CONV needs layer_count >= 1")


def layer_widths(layer_count: int) -> list[int]:
    return [16 * 2**i for i in range(layer_count)]


@functools.lru_cache(maxsize=32)
def _conv_weights(seed: int, layer_count: int, in_channels: int) -> tuple[tuple[torch.Tensor, torch.Tensor], ...]:
    gen = torch.Generator().manual_seed(seed)
    params = []
    c_in = in_channels
    for c_out in layer_widths(layer_count):
        std = (2.0 / (c_in * 9)) ** 0.5
        w = torch.randn(c_out, c_in, 3, 3, generator=gen, dtype=torch.float64) * std
        b = torch.randn(c_out, generator=gen, dtype=torch.float64) * 0.01
        params.append((w, b))
        c_in = c_out
    return tuple(params)


def extractor_weights(cfg: FeatureExtractorConfig, in_channels: int = 3) -> list[dict[str, np.ndarray]]:
    """Weights of the TINY_CONV stack as plain arrays (for checkpoints)."""
    if cfg.backend is FeatureBackend.IDENTITY:
        return []
    return [
        {"weight": w.numpy().copy(), "bias": b.numpy().copy()}
        for w, b in _conv_weights(cfg.seed, cfg.layer_count, in_channels)
    ]


def as_image_tensor(image) -> torch.Tensor:
    """Accept a tensor (..., C, H, W), an ``Image`` or an (H, W, C) array."""
    if isinstance(image, torch.Tensor):
        return image
    data = getattr(image, "data", image)
    arr = np.asarray(data)
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(arr, -1, -3)))


def extract(image, cfg: FeatureExtractorConfig) -> list[torch.Tensor]:
    """Feature maps of ``image`` for every extractor layer.

    Works on any leading batch shape: input (..., C, H, W) gives a list of
    (..., C_l, H_l, W_l) tensors. IDENTITY returns the input itself as the
    single layer.
    """
    x = as_image_tensor(image)
    if cfg.backend is FeatureBackend.IDENTITY:
        return [x]
    lead = x.shape[:-3]
    c, h, w = x.shape[-3:]
    factor = 2**cfg.layer_count
    if h < factor or w < factor:
        raise ImageTooSmall(f"{h}x{w} input cannot be halved {cfg.layer_count} times")
    feats = []
    out = x.reshape(-1, c, h, w)
    for weight, bias in _conv_weights(cfg.seed, cfg.layer_count, c):
        out = F.conv2d(out, weight.to(out.dtype), bias.to(out.dtype), padding=1)
        out = F.avg_pool2d(F.relu(out), 2)
        feats.append(out.reshape(*lead, *out.shape[1:]))
    return feats


def gram(f: torch.Tensor) -> torch.Tensor:
    """Gram matrix F F^T / (C H W) of a (..., C, H, W) feature map."""
    f = torch.as_tensor(f)
    c, h, w = f.shape[-3:]
    flat = f.reshape(*f.shape[:-3], c, h * w)
    return flat @ flat.transpose(-1, -2) / (c * h * w)
