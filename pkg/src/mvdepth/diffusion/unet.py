"""Multi-view noise-prediction U-Net with a zero-initialized conditioning branch.

Tensors are laid out (B, N, C, H, W): B scenes, N views each. Convolutions
and norms run per view; cross-view attention flattens all N views of a
scene into one token sequence, so every view attends to every other view.
Each view is tagged with an embedding of its azimuth, which makes the
network equivariant to a joint permutation of views and azimuths.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..blocks import (
    Attention,
    ResBlock,
    azimuth_features,
    norm,
    sinusoidal_embedding,
    tokens_to_views,
    views_to_tokens,
    zero_module,
)
from .text import TextEncoder

# What the raw network output estimates; predict_eps always returns noise.
PARAMETERIZATIONS = ("eps", "v", "x0")


@dataclass(frozen=True)
class MVUNetConfig:
    base_channels: int = 16
    channel_multipliers: tuple[int, ...] = (1, 2, 2)
    attention_levels: tuple[int, ...] = (2,)
    view_embedding_dim: int = 16
    text_embedding_dim: int = 32
    n_views_train: int = 6
    heads: int = 4
    text_seed: int = 0
    parameterization: str = "v"

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        object.__setattr__(self, "channel_multipliers", tuple(self.channel_multipliers))
        object.__setattr__(self, "attention_levels", tuple(self.attention_levels))
        if len(self.channel_multipliers) < 2:
            raise ValueError("the U-Net needs at least two levels")
        if not self.attention_levels:
            raise ValueError("enable cross-view attention on at least one level")
        if any(not 0 <= lvl < len(self.channel_multipliers) for lvl in self.attention_levels):
            raise ValueError("attention level out of range")
        if self.n_views_train < 2:
            raise ValueError("n_views_train must be >= 2")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_multipliers]

    @property
    def emb_dim(self) -> int:
        return self.base_channels * 4

    def to_dict(self) -> dict:
        return asdict(self)


class MultiViewAttention(nn.Module):
    """Joint self-attention over all views' tokens, then text cross-attention."""

    def __init__(self, channels: int, emb_dim: int, text_dim: int, heads: int):
        super().__init__()
        self.norm = norm(channels)
        self.view_tag = nn.Linear(emb_dim, channels)
        self.self_attn = Attention(channels, heads=heads)
        self.text_norm = nn.LayerNorm(channels)
        self.text_attn = Attention(channels, context_dim=text_dim, heads=heads)

    def forward(self, h, n_views, view_emb, text_tokens, text_mask):
        bn, c, hh, ww = h.shape
        x = self.norm(h) + self.view_tag(view_emb)[:, :, None, None]
        tokens = views_to_tokens(x, n_views)
        residual = views_to_tokens(h, n_views)
        tokens = residual + self.self_attn(tokens)
        tokens = tokens + self.text_attn(self.text_norm(tokens), text_tokens, text_mask)
        return tokens_to_views(tokens, n_views, hh, ww)


class Encoder(nn.Module):
    def __init__(self, cfg: MVUNetConfig):
        super().__init__()
        ch = cfg.channels
        self.conv_in = nn.Conv2d(3, ch[0], 3, padding=1)
        self.res = nn.ModuleList()
        self.attn = nn.ModuleDict()
        self.down = nn.ModuleList()
        prev = ch[0]
        for lvl, c in enumerate(ch):
            self.res.append(ResBlock(prev, c, cfg.emb_dim))
            if lvl in cfg.attention_levels:
                self.attn[str(lvl)] = MultiViewAttention(c, cfg.emb_dim, cfg.text_embedding_dim, cfg.heads)
            if lvl < len(ch) - 1:
                self.down.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            prev = c
        self.mid1 = ResBlock(ch[-1], ch[-1], cfg.emb_dim)
        self.mid_attn = MultiViewAttention(ch[-1], cfg.emb_dim, cfg.text_embedding_dim, cfg.heads)
        self.mid2 = ResBlock(ch[-1], ch[-1], cfg.emb_dim)

    def forward(self, h, emb, n_views, view_emb, text_tokens, text_mask):
        skips = []
        for lvl, res in enumerate(self.res):
            h = res(h, emb)
            if str(lvl) in self.attn:
                h = self.attn[str(lvl)](h, n_views, view_emb, text_tokens, text_mask)
            skips.append(h)
            if lvl < len(self.down):
                h = self.down[lvl](h)
        h = self.mid1(h, emb)
        h = self.mid_attn(h, n_views, view_emb, text_tokens, text_mask)
        h = self.mid2(h, emb)
        return h, skips


class ControlBranch(nn.Module):
    """Trainable encoder copy fed with shoebox images; outputs leave through zero convs."""

    def __init__(self, cfg: MVUNetConfig):
        super().__init__()
        ch = cfg.channels
        self.hint = nn.Sequential(
            nn.Conv2d(3, ch[0], 3, padding=1), nn.SiLU(), nn.Conv2d(ch[0], ch[0], 3, padding=1)
        )
        self.encoder = Encoder(cfg)
        self.zero_skips = nn.ModuleList([zero_module(nn.Conv2d(c, c, 1)) for c in ch])
        self.zero_mid = zero_module(nn.Conv2d(ch[-1], ch[-1], 1))

    def forward(self, x, cond, emb, n_views, view_emb, text_tokens, text_mask):
        h = self.encoder.conv_in(x) + self.hint(cond)
        mid, skips = self.encoder(h, emb, n_views, view_emb, text_tokens, text_mask)
        return self.zero_mid(mid), [z(s) for z, s in zip(self.zero_skips, skips)]


class MultiViewUNet(nn.Module):
    """Noise predictor. For ``v`` / ``x0`` parameterizations the raw output is
    converted to noise with the schedule's cumulative alphas, which must be
    attached via ``schedule`` (or :meth:`attach_schedule`)."""

    def __init__(self, cfg: MVUNetConfig, schedule=None):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("alphas_cumprod", torch.zeros(0, dtype=torch.float64), persistent=False)
        if schedule is not None:
            self.attach_schedule(schedule)
        ch = cfg.channels
        e = cfg.emb_dim
        self.time_mlp = nn.Sequential(nn.Linear(cfg.base_channels, e), nn.SiLU(), nn.Linear(e, e))
        self.view_mlp = nn.Sequential(nn.Linear(cfg.view_embedding_dim, e), nn.SiLU(), nn.Linear(e, e))
        self.text = TextEncoder(cfg.text_embedding_dim, cfg.text_seed)
        self.text_proj = nn.Linear(cfg.text_embedding_dim, e)
        self.encoder = Encoder(cfg)
        self.up = nn.ModuleList()
        self.dec_res = nn.ModuleList()
        self.dec_attn = nn.ModuleDict()
        prev = ch[-1]
        for lvl in reversed(range(len(ch))):
            c = ch[lvl]
            self.up.append(nn.Conv2d(prev, prev, 3, padding=1) if lvl < len(ch) - 1 else nn.Identity())
            self.dec_res.append(ResBlock(prev + c, c, e))
            if lvl in cfg.attention_levels:
                self.dec_attn[str(lvl)] = MultiViewAttention(c, e, cfg.text_embedding_dim, cfg.heads)
            prev = c
        self.out_norm = norm(ch[0])
        self.conv_out = nn.Conv2d(ch[0], 3, 3, padding=1)
        self.control = ControlBranch(cfg)
        # ControlNet-style: the branch starts as a copy of the main encoder.
        self.control.encoder.load_state_dict(self.encoder.state_dict())

    def attach_schedule(self, schedule) -> None:
        self.alphas_cumprod = torch.as_tensor(schedule.alphas_cumprod, dtype=torch.float64).clone()

    def _to_eps(self, out, x_t, t):
        if self.cfg.parameterization == "eps":
            return out
        if self.alphas_cumprod.numel() == 0:
            raise RuntimeError(f"{self.cfg.parameterization!r} parameterization needs an attached schedule")
        b = x_t.shape[0]
        ab = self.alphas_cumprod[torch.as_tensor(t).reshape(-1).expand(b)].to(x_t.dtype).view(b, 1, 1, 1, 1)
        if self.cfg.parameterization == "v":
            return ab.sqrt() * out + (1 - ab).sqrt() * x_t
        return (x_t - ab.sqrt() * out) / (1 - ab).sqrt()

    def embeddings(self, t, azimuth, tokens):
        b, n = azimuth.shape
        dtype = self.conv_out.weight.dtype
        t = torch.as_tensor(t).reshape(-1).expand(b)
        t_emb = self.time_mlp(sinusoidal_embedding(t, self.cfg.base_channels).to(dtype))
        v_emb = self.view_mlp(azimuth_features(azimuth, self.cfg.view_embedding_dim).to(dtype))
        text_tokens, text_mask, pooled = self.text(tokens)
        emb = (t_emb + self.text_proj(pooled))[:, None, :] + v_emb  # (B, N, E)
        return emb.reshape(b * n, -1), v_emb.reshape(b * n, -1), text_tokens, text_mask

    def forward(self, x_t, t, cond, azimuth, tokens, use_control: bool = True):
        """Predict noise for ``x_t`` (B, N, 3, H, W) given shoebox views ``cond``."""
        b, n, c, hh, ww = x_t.shape
        emb, v_emb, text_tokens, text_mask = self.embeddings(t, azimuth, tokens)
        x = x_t.reshape(b * n, c, hh, ww)
        ctx = (n, v_emb, text_tokens, text_mask)
        h, skips = self.encoder(self.encoder.conv_in(x), emb, *ctx)
        if use_control:
            ctrl_mid, ctrl_skips = self.control(x, cond.reshape(b * n, c, hh, ww), emb, *ctx)
            h = h + ctrl_mid
            skips = [s + cs for s, cs in zip(skips, ctrl_skips)]
        for i, lvl in enumerate(reversed(range(len(skips)))):
            if i > 0:
                h = self.up[i](F.interpolate(h, scale_factor=2.0, mode="nearest"))
            h = self.dec_res[i](torch.cat([h, skips[lvl]], dim=1), emb)
            if str(lvl) in self.dec_attn:
                h = self.dec_attn[str(lvl)](h, *ctx)
        out = self.conv_out(F.silu(self.out_norm(h)))
        return self._to_eps(out.reshape(b, n, c, hh, ww), x_t, t)
