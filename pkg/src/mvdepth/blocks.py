"""Small building blocks shared by the diffusion, depth and fusion networks."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def norm(channels: int) -> nn.GroupNorm:
    groups = math.gcd(8, channels)
    return nn.GroupNorm(groups, channels)


def sinusoidal_embedding(values: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = values.to(torch.float64).unsqueeze(-1) * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def azimuth_features(azimuth_deg: torch.Tensor, dim: int) -> torch.Tensor:
    """Fourier features sin/cos(k * azimuth), k = 1..dim/2; periodic on the ring."""
    k = torch.arange(1, dim // 2 + 1, dtype=torch.float64)
    ang = torch.deg2rad(azimuth_deg.to(torch.float64)).unsqueeze(-1) * k
    return torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int | None = None):
        super().__init__()
        self.norm1 = norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out) if emb_dim else None
        self.norm2 = norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.emb is not None:
            h = h + self.emb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Attention(nn.Module):
    """Multi-head attention on token sequences with an optional key padding mask."""

    def __init__(self, dim: int, context_dim: int | None = None, heads: int = 4):
        super().__init__()
        context_dim = context_dim or dim
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(context_dim, dim, bias=False)
        self.v = nn.Linear(context_dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, context=None, key_mask=None):
        context = x if context is None else context
        b, n, d = x.shape
        h = self.heads

        def split(t):
            return t.reshape(b, -1, h, d // h).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(context)), split(self.v(context))
        mask = None if key_mask is None else key_mask[:, None, None, :]
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.out(out.transpose(1, 2).reshape(b, n, d))


def views_to_tokens(h: torch.Tensor, n_views: int) -> torch.Tensor:
    """(B*N, C, H, W) -> (B, N*H*W, C): one joint token sequence per scene."""
    bn, c, hh, ww = h.shape
    return h.reshape(bn // n_views, n_views, c, hh * ww).permute(0, 1, 3, 2).reshape(bn // n_views, -1, c)


def tokens_to_views(t: torch.Tensor, n_views: int, hh: int, ww: int) -> torch.Tensor:
    b, _, c = t.shape
    return t.reshape(b, n_views, hh * ww, c).permute(0, 1, 3, 2).reshape(b * n_views, c, hh, ww)
