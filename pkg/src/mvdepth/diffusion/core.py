"""Noise prediction, the two-part training objective, and DDPM/DDIM sampling."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import StepsExceedT, ViewMisalignment
from ..features import FeatureExtractorConfig
from ..losses import LossReport, LossWeights, image_space_loss, report_from_terms
from .schedule import DiffusionSchedule, predict_x0, q_sample
from .unet import MultiViewUNet


class Sampler(str, enum.Enum):
    DDPM = "DDPM"
    DDIM = "DDIM"


@dataclass(frozen=True, eq=False)
class MultiViewBatch:
    """Aligned shoebox/detailed views of B scenes.

    shoebox, detailed: (B, N, 3, H, W) in [0, 1]; azimuth: (B, N) degrees;
    view_index: (B, N); tokens: (B, L) prompt ids.
    """

    shoebox: torch.Tensor
    detailed: torch.Tensor
    azimuth: torch.Tensor
    view_index: torch.Tensor
    tokens: torch.Tensor

    def to(self, dtype) -> "MultiViewBatch":
        return MultiViewBatch(
            self.shoebox.to(dtype), self.detailed.to(dtype), self.azimuth, self.view_index, self.tokens
        )


def predict_eps(
    model: MultiViewUNet,
    x_t: torch.Tensor,
    t,
    cond: torch.Tensor,
    tokens: torch.Tensor,
    azimuth: torch.Tensor,
    cond_azimuth: torch.Tensor | None = None,
    use_control: bool = True,
) -> torch.Tensor:
    if cond.shape != x_t.shape:
        raise ViewMisalignment(f"cond {tuple(cond.shape)} vs noisy views {tuple(x_t.shape)}")
    if cond_azimuth is not None and not torch.equal(torch.as_tensor(cond_azimuth), torch.as_tensor(azimuth)):
        raise ViewMisalignment("conditioning views and noisy views come from different poses")
    return model(x_t, t, cond, azimuth, tokens, use_control=use_control)


def training_step(
    model: MultiViewUNet,
    batch: MultiViewBatch,
    schedule: DiffusionSchedule,
    feat_cfg: FeatureExtractorConfig,
    w: LossWeights,
    lambda_img: float,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, LossReport, float]:
    """Noise MSE plus ``lambda_img`` times the image-space loss on the x0 estimate.

    Returns (objective, image-space report, noise MSE).
    """
    x0 = batch.detailed
    b = x0.shape[0]
    t = torch.randint(0, schedule.T, (b,), generator=generator)
    noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, noise, schedule)
    eps_hat = predict_eps(model, x_t, t, batch.shoebox, batch.tokens, batch.azimuth)
    mse = F.mse_loss(eps_hat, noise)
    objective = mse
    if lambda_img > 0:
        x0_hat = predict_x0(x_t, eps_hat, t, schedule)
        total, terms = image_space_loss(x0_hat, x0, feat_cfg, w)
        objective = objective + lambda_img * total.mean()
    else:
        with torch.no_grad():
            x0_hat = predict_x0(x_t, eps_hat, t, schedule)
            total, terms = image_space_loss(x0_hat, x0, feat_cfg, w)
    return objective, report_from_terms(terms, w), float(mse.detach())


def sampling_timesteps(schedule: DiffusionSchedule, steps: int) -> list[int]:
    if steps < 1 or steps > schedule.T:
        raise StepsExceedT(f"{steps} sampling steps for a {schedule.T}-step schedule")
    ts = np.unique(np.round(np.linspace(0, schedule.T - 1, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


@torch.no_grad()
def sample(
    model: MultiViewUNet,
    cond: torch.Tensor,
    azimuth: torch.Tensor,
    tokens: torch.Tensor,
    schedule: DiffusionSchedule,
    sampler: Sampler | str = Sampler.DDIM,
    steps: int = 50,
    seed: int = 0,
    eta: float | None = None,
) -> torch.Tensor:
    """Generate all N views of each scene jointly; returns (B, N, 3, H, W) in [0, 1].

    DDPM is the eta = 1 (ancestral) member of the DDIM family on the same
    strided timestep sequence; DDIM defaults to eta = 0 (deterministic).
    """
    sampler = Sampler(sampler)
    if eta is None:
        eta = 1.0 if sampler is Sampler.DDPM else 0.0
    ts = sampling_timesteps(schedule, steps)
    gen = torch.Generator().manual_seed(int(seed))
    dtype = model.conv_out.weight.dtype
    cond = cond.to(dtype)
    x = torch.randn(cond.shape, generator=gen, dtype=dtype)
    abar = schedule.alphas_cumprod
    for i, t in enumerate(ts):
        tt = torch.full((cond.shape[0],), t, dtype=torch.long)
        eps = predict_eps(model, x, tt, cond, tokens, azimuth)
        x0 = predict_x0(x, eps, t, schedule)
        ab = float(abar[t])
        eps = (x - ab**0.5 * x0) / (1.0 - ab) ** 0.5
        if i == len(ts) - 1:
            x = x0
            break
        ab_prev = float(abar[ts[i + 1]])
        sigma = eta * ((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev)) ** 0.5
        x = ab_prev**0.5 * x0 + max(1 - ab_prev - sigma**2, 0.0) ** 0.5 * eps
        if sigma > 0:
            x = x + sigma * torch.randn(x.shape, generator=gen, dtype=dtype)
    return x.clamp(0.0, 1.0)
