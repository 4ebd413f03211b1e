"""Image-space multi-view consistency losses.

All functions take generated views ``g`` and reference views ``r`` as
tensors shaped (..., N, C, H, W): N views per scene, any leading batch
shape. They return one value per batch element (a 0-dim tensor for a single
scene) and are differentiable with respect to ``g``.

Norms are squared L2 over all elements, without normalization by element
count; multi-layer features are summed over layers with equal weight.
Adjacent-view terms run over pairs (i, i + 1) for i < N; ``wrap=True`` also
adds the closing pair (N, 1) of a full ring.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch

from .errors import ResolutionMismatch, ViewCountMismatch
from .features import FeatureExtractorConfig, as_image_tensor, extract, gram


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e9
    beta: float = 100.0
    gamma: float = 1.0
    delta: float = 10.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) < 0:
            raise ValueError("loss weights must be nonnegative")

    def __add__(self, other: "LossWeights") -> "LossWeights":
        return LossWeights(
            self.alpha + other.alpha, self.beta + other.beta, self.gamma + other.gamma, self.delta + other.delta
        )


@dataclass(frozen=True)
class LossReport:
    style: float
    percep: float
    content_cos: float
    angle_cos: float
    total: float

    def to_json(self, step: int) -> str:
        return json.dumps({"step": step, **asdict(self)})


def _check(g, r) -> tuple[torch.Tensor, torch.Tensor]:
    g, r = as_image_tensor(g), as_image_tensor(r)
    if g.dim() < 4 or r.dim() < 4:
        raise ValueError("expected (..., N, C, H, W) view stacks")
    if g.shape[:-3] != r.shape[:-3]:
        raise ViewCountMismatch(f"generated views {tuple(g.shape[:-3])} vs reference {tuple(r.shape[:-3])}")
    if g.shape[-3:] != r.shape[-3:]:
        raise ResolutionMismatch(f"generated {tuple(g.shape[-3:])} vs reference {tuple(r.shape[-3:])}")
    return g, r.to(g.dtype)


def _sqnorm(x: torch.Tensor) -> torch.Tensor:
    """Squared L2 norm over the trailing (C, H, W) dims."""
    return x.pow(2).flatten(-3).sum(-1)


def _pairs(n: int, wrap: bool) -> tuple[list[int], list[int]]:
    first = list(range(n - 1))
    second = list(range(1, n))
    if wrap and n > 2:
        first.append(n - 1)
        second.append(0)
    return first, second


def _adjacent_sqdist(feats: list[torch.Tensor], wrap: bool) -> torch.Tensor:
    """Layer-summed ||f_i - f_{i+1}||^2, shape (..., P)."""
    n = feats[0].shape[-4]
    a, b = _pairs(n, wrap)
    total = 0
    for f in feats:
        total = total + _sqnorm(f[..., a, :, :, :] - f[..., b, :, :, :])
    return total


def _style_from_feats(fg, fr) -> torch.Tensor:
    total = 0
    for a, b in zip(fg, fr):
        diff = gram(a) - gram(b)
        total = total + diff.pow(2).sum((-1, -2)).sum(-1)
    return total


def _percep_from_feats(fg, fr) -> torch.Tensor:
    total = 0
    for a, b in zip(fg, fr):
        total = total + _sqnorm(a - b).sum(-1)
    return total


def _content_terms_from_feats(fg, fr, wrap) -> torch.Tensor:
    return (_adjacent_sqdist(fg, wrap) - _adjacent_sqdist(fr, wrap)).pow(2)


def style_loss(g, r, cfg: FeatureExtractorConfig) -> torch.Tensor:
    g, r = _check(g, r)
    return _style_from_feats(extract(g, cfg), extract(r, cfg))


def perceptual_loss(g, r, cfg: FeatureExtractorConfig) -> torch.Tensor:
    g, r = _check(g, r)
    return _percep_from_feats(extract(g, cfg), extract(r, cfg))


def content_pair_terms(g, r, cfg: FeatureExtractorConfig, wrap: bool = False) -> torch.Tensor:
    """Per adjacent pair (||phi(g_i)-phi(g_i+1)||^2 - ||phi(r_i)-phi(r_i+1)||^2)^2."""
    g, r = _check(g, r)
    return _content_terms_from_feats(extract(g, cfg), extract(r, cfg), wrap)


def angle_pair_terms(g, r, wrap: bool = False) -> torch.Tensor:
    """Per adjacent pair (||g_i-g_i+1||^2 - ||r_i-r_i+1||^2)^2 over raw pixels."""
    g, r = _check(g, r)
    return (_adjacent_sqdist([g], wrap) - _adjacent_sqdist([r], wrap)).pow(2)


def content_consistency_loss(g, r, cfg: FeatureExtractorConfig, wrap: bool = False) -> torch.Tensor:
    return content_pair_terms(g, r, cfg, wrap).sum(-1)


def angle_alignment_loss(g, r, wrap: bool = False) -> torch.Tensor:
    return angle_pair_terms(g, r, wrap).sum(-1)


def image_space_loss(
    g, r, cfg: FeatureExtractorConfig, w: LossWeights | None = None, wrap: bool = False
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted total and the four terms as tensors (features extracted once)."""
    w = w or LossWeights()
    g, r = _check(g, r)
    fg = extract(g, cfg)
    fr = extract(r, cfg)
    terms = {
        "style": _style_from_feats(fg, fr),
        "percep": _percep_from_feats(fg, fr),
        "content_cos": _content_terms_from_feats(fg, fr, wrap).sum(-1),
        "angle_cos": (_adjacent_sqdist([g], wrap) - _adjacent_sqdist([r], wrap)).pow(2).sum(-1),
    }
    total = (
        w.alpha * terms["style"]
        + w.beta * terms["percep"]
        + w.gamma * terms["content_cos"]
        + w.delta * terms["angle_cos"]
    )
    return total, terms


def report_from_terms(terms: dict[str, torch.Tensor], w: LossWeights | None = None) -> LossReport:
    """Collapse (possibly batched) term tensors into a float report, averaging over the batch."""
    w = w or LossWeights()
    v = {k: float(t.detach().double().mean()) for k, t in terms.items()}
    total = w.alpha * v["style"] + w.beta * v["percep"] + w.gamma * v["content_cos"] + w.delta * v["angle_cos"]
    return LossReport(total=total, **v)


def total_loss(g, r, cfg: FeatureExtractorConfig, w: LossWeights | None = None, wrap: bool = False) -> LossReport:
    _, terms = image_space_loss(g, r, cfg, w, wrap)
    return report_from_terms(terms, w)
