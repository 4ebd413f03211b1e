"""Linear DDPM noise schedule and the forward / inverse noising algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidRange, StepOutOfRange


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    T: int
    betas: np.ndarray
    alphas_cumprod: np.ndarray
    beta_start: float
    beta_end: float

    def _check_step(self, t) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if (t < 0).any() or (t >= self.T).any():
            raise StepOutOfRange(f"timestep {t.tolist()} outside [0, {self.T})")
        return t

    def abar(self, t, like: torch.Tensor) -> torch.Tensor:
        """alpha-bar at ``t`` broadcast against ``like`` (t scalar or per leading batch entry)."""
        t = self._check_step(t)
        ab = torch.as_tensor(self.alphas_cumprod, dtype=like.dtype)[t]
        return ab.reshape(ab.shape + (1,) * (like.dim() - ab.dim()))

    def params(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def make_schedule(T: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    if T < 1 or not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidRange(f"need T >= 1 and 0 < beta_start <= beta_end < 1, got {T}, {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas_cumprod = np.cumprod(1.0 - betas)
    return DiffusionSchedule(T, betas, alphas_cumprod, float(beta_start), float(beta_end))


def q_sample(x0: torch.Tensor, t, noise: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, per view."""
    if noise.shape != x0.shape:
        raise ValueError("noise must match x0 in shape")
    ab = schedule.abar(t, x0)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise


def predict_x0(x_t: torch.Tensor, eps_hat: torch.Tensor, t, schedule: DiffusionSchedule, clamp: bool = True) -> torch.Tensor:
    ab = schedule.abar(t, x_t)
    x0 = (x_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt()
    return x0.clamp(0.0, 1.0) if clamp else x0
