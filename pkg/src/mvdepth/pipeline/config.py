"""Pipeline configuration: one YAML file, nested per stage, validated by pydantic."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..camera import CameraRig
from ..depth import DepthEstimatorConfig
from ..diffusion.schedule import make_schedule
from ..diffusion.unet import MVUNetConfig
from ..features import FeatureExtractorConfig
from ..fusion import FusionConfig
from ..losses import LossWeights


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RigSection(_Section):
    n_views: int = Field(60, ge=1)
    azimuth_step: float = Field(6.0, gt=0)
    elevation: float = Field(30.0, gt=0, lt=90)
    fov_y: float = Field(40.0, gt=0, lt=180)
    radius_factor: float = Field(2.5, gt=1)

    def build(self) -> CameraRig:
        return CameraRig(
            n_views=self.n_views,
            azimuth_step=self.azimuth_step,
            elevation=self.elevation,
            fov_y=self.fov_y,
            radius_factor=self.radius_factor,
        )


class DatasetSection(_Section):
    n_scenes: int = Field(210, ge=1)
    resolution: int = Field(64, ge=8)
    split_ratio: float = Field(0.9, gt=0, lt=1)
    classes: list[Literal["I", "L", "U", "O", "COMPLEX"]] = ["I", "L", "U", "O", "COMPLEX"]
    rig: RigSection = RigSection()


class FeaturesSection(_Section):
    backend: Literal["TINY_CONV", "IDENTITY"] = "TINY_CONV"
    seed: int = 0
    layer_count: int = Field(3, ge=1)

    def build(self) -> FeatureExtractorConfig:
        return FeatureExtractorConfig(self.backend, self.seed, self.layer_count)


class LossSection(_Section):
    alpha: float = Field(1e9, ge=0)
    beta: float = Field(100.0, ge=0)
    gamma: float = Field(1.0, ge=0)
    delta: float = Field(10.0, ge=0)

    def build(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.delta)


class UNetSection(_Section):
    base_channels: int = Field(16, ge=8)
    channel_multipliers: list[int] = [1, 2, 2]
    attention_levels: list[int] = [2]
    view_embedding_dim: int = Field(16, ge=2)
    text_embedding_dim: int = Field(32, ge=4)
    n_views_train: int = Field(6, ge=2)
    heads: int = Field(4, ge=1)
    text_seed: int = 0
    parameterization: Literal["eps", "v", "x0"] = "v"

    def build(self) -> MVUNetConfig:
        return MVUNetConfig(**self.model_dump())


class DiffusionSection(_Section):
    unet: UNetSection = UNetSection()
    T: int = Field(200, ge=1)
    beta_start: float = Field(5e-4, gt=0, lt=1)
    beta_end: float = Field(0.1, gt=0, lt=1)
    lambda_img: float = Field(1e-10, ge=0)
    train_steps: int = Field(2000, ge=1)
    lr: float = Field(1e-3, gt=0)
    batch_scenes: int = Field(4, ge=1)
    max_train_scenes: Optional[int] = Field(None, ge=1)
    sampler: Literal["DDPM", "DDIM"] = "DDIM"
    sample_steps: int = Field(50, ge=1)

    @field_validator("beta_end")
    @classmethod
    def _ordered(cls, v, info):
        start = info.data.get("beta_start")
        if start is not None and v < start:
            raise ValueError("beta_end must be >= beta_start")
        return v

    def schedule(self):
        return make_schedule(self.T, self.beta_start, self.beta_end)


class DepthSection(_Section):
    backend: Literal["ORACLE", "LEARNED"] = "LEARNED"
    levels: int = Field(3, ge=1)
    base_channels: int = Field(16, ge=4)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(4, ge=1)
    lr: float = Field(2e-3, gt=0)

    def build(self, seed: int) -> DepthEstimatorConfig:
        return DepthEstimatorConfig(self.backend, self.levels, self.base_channels, seed)


class FusionSection(_Section):
    base_channels: int = Field(16, ge=4)
    channel_multipliers: list[int] = [1, 2]
    attention_levels: list[int] = [1]
    shared_latent_dim: int = Field(16, ge=8)
    heads: int = Field(2, ge=1)
    train_steps: int = Field(200, ge=1)
    lambda_consistency: float = Field(1e-5, ge=0)
    lr: float = Field(2e-3, gt=0)
    max_train_scenes: Optional[int] = Field(4, ge=1)

    def build(self) -> FusionConfig:
        return FusionConfig(
            self.base_channels,
            tuple(self.channel_multipliers),
            tuple(self.attention_levels),
            self.shared_latent_dim,
            self.heads,
        )


class EvaluateSection(_Section):
    window_start: int = Field(0, ge=0)
    max_scenes: Optional[int] = Field(None, ge=1)
    stages: list[Literal["STAGE1", "STAGE3"]] = ["STAGE1", "STAGE3"]


class PipelineConfig(_Section):
    seed: int = 0
    dataset: DatasetSection = DatasetSection()
    features: FeaturesSection = FeaturesSection()
    losses: LossSection = LossSection()
    diffusion: DiffusionSection = DiffusionSection()
    depth: DepthSection = DepthSection()
    fusion: FusionSection = FusionSection()
    evaluate: EvaluateSection = EvaluateSection()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    return PipelineConfig.model_validate(doc)


def config_schema() -> dict:
    return PipelineConfig.model_json_schema()
