"""Command line entry point: one subcommand per stage plus ``pipeline`` for all of them.

Artifacts under ``--out``::

    dataset/manifest.jsonl            dataset/images/..., dataset/scenes/...
    checkpoints/{diffusion,depth,fusion}.pt
    logs/{diffusion,depth,fusion}.jsonl
    generated/<split>_<stage>/<scene_id>/view_XXX.png
    metrics/<experiment>_<stage>.json
    plots/*.png

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pydantic
import torch
import yaml

from ..checkpoint import load_checkpoint, save_checkpoint
from ..depth import DepthBackend, load_estimator, train_estimator
from ..diffusion.train import diffusion_checkpoint, load_diffusion, train_diffusion
from ..errors import ConfigMismatch, EmptyDataset, MVDepthError
from ..fusion import FusionSample, load_fusion, train_fusion
from ..renderer import Image, save_rgb_png
from .config import PipelineConfig, config_schema, load_config
from .dataset import MANIFEST_NAME, build_dataset, load_manifest, load_scene, load_split
from .evaluate import (
    MetricsReport,
    Stage,
    depth_contexts_for,
    estimate_window_depth,
    evaluate,
    report_summary,
    save_reports,
    stage1_outputs,
)
from .plots import plot_all

logger = logging.getLogger("mvdepth")

STAGES = ("dataset", "train-diffusion", "train-depth", "train-fusion", "evaluate", "plot")


class Workspace:
    def __init__(self, out: str | Path):
        self.root = Path(out)

    @property
    def manifest(self) -> Path:
        return self.root / "dataset" / MANIFEST_NAME

    def checkpoint(self, kind: str) -> Path:
        return self.root / "checkpoints" / f"{kind}.pt"

    def log(self, kind: str) -> Path:
        p = self.root / "logs" / f"{kind}.jsonl"
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def metrics(self) -> Path:
        return self.root / "metrics"

    @property
    def plots(self) -> Path:
        return self.root / "plots"

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run the '{stage}' stage first")
        return path


# -- stages --------------------------------------------------------------------


def run_dataset(cfg: PipelineConfig, ws: Workspace) -> Path:
    d = cfg.dataset
    return build_dataset(
        ws.root / "dataset", d.n_scenes, d.rig.build(), d.resolution, d.split_ratio, cfg.seed, d.classes
    )


def run_train_diffusion(cfg: PipelineConfig, ws: Workspace) -> Path:
    dc = cfg.diffusion
    scenes = load_split(ws.require(ws.manifest, "dataset"), "train", dc.max_train_scenes)
    schedule = dc.schedule()
    feat_cfg = cfg.features.build()
    model, history = train_diffusion(
        scenes,
        dc.unet.build(),
        schedule,
        feat_cfg,
        cfg.losses.build(),
        dc.lambda_img,
        dc.train_steps,
        cfg.seed,
        lr=dc.lr,
        batch_scenes=dc.batch_scenes,
        log_path=ws.log("diffusion"),
    )
    ckpt = diffusion_checkpoint(model, schedule, feat_cfg, cfg.model_dump(mode="json"), len(history))
    return save_checkpoint(ckpt, ws.checkpoint("diffusion"))


def run_train_depth(cfg: PipelineConfig, ws: Workspace) -> Path:
    records = [r for r in load_manifest(ws.require(ws.manifest, "dataset")) if r.split == "train"]
    dcfg = cfg.depth.build(cfg.seed)
    ckpt = train_estimator(
        records,
        cfg.depth.epochs,
        cfg.seed,
        dcfg,
        batch_size=cfg.depth.batch_size,
        lr=cfg.depth.lr,
        log_path=ws.log("depth"),
    )
    return save_checkpoint(ckpt, ws.checkpoint("depth"))


def _load_diffusion(cfg: PipelineConfig, ws: Workspace):
    ckpt = load_checkpoint(ws.require(ws.checkpoint("diffusion"), "train-diffusion"), "diffusion")
    return load_diffusion(ckpt, expect=cfg.diffusion.unet.build())


def _load_depth(cfg: PipelineConfig, ws: Workspace):
    dcfg = cfg.depth.build(cfg.seed)
    if dcfg.backend is DepthBackend.ORACLE:
        return dcfg, None
    ckpt = load_checkpoint(ws.require(ws.checkpoint("depth"), "train-depth"), "depth")
    model = load_estimator(ckpt)
    if model.cfg != dcfg:
        raise ConfigMismatch(f"depth checkpoint config {model.cfg} does not match {dcfg}")
    return dcfg, model


def _depth_contexts(cfg, ws, dcfg, scenes):
    if dcfg.backend is not DepthBackend.ORACLE:
        return None
    return depth_contexts_for(ws.root / "dataset", [s.scene_id for s in scenes], cfg.dataset.rig.build(), load_scene)


def run_train_fusion(cfg: PipelineConfig, ws: Workspace) -> Path:
    fc = cfg.fusion
    model, schedule = _load_diffusion(cfg, ws)
    dcfg, depth_model = _load_depth(cfg, ws)
    scenes = load_split(ws.manifest, "train", fc.max_train_scenes)
    contexts = _depth_contexts(cfg, ws, dcfg, scenes)
    start, n = cfg.evaluate.window_start, model.cfg.n_views_train
    samples = []
    for sv in scenes:
        win = sv.window(start, n)
        out = stage1_outputs(model, win, schedule, cfg.diffusion.sampler, cfg.diffusion.sample_steps, cfg.seed)
        ctx = contexts[sv.scene_id][start : start + n] if contexts else None
        depth, mask = estimate_window_depth(out, dcfg, depth_model, ctx)
        samples.append(FusionSample(out.float(), depth, mask, win.detailed))
    ckpt = train_fusion(
        samples,
        fc.train_steps,
        cfg.losses.build(),
        cfg.seed,
        fc.build(),
        cfg.features.build(),
        fc.lambda_consistency,
        fc.lr,
        log_path=ws.log("fusion"),
    )
    return save_checkpoint(ckpt, ws.checkpoint("fusion"))


def run_evaluate(cfg: PipelineConfig, ws: Workspace, splits=("train", "test")) -> list[Path]:
    model, schedule = _load_diffusion(cfg, ws)
    ec = cfg.evaluate
    stages = [Stage(s) for s in ec.stages]
    dcfg, depth_model, fusion = None, None, None
    if Stage.STAGE3 in stages:
        dcfg, depth_model = _load_depth(cfg, ws)
        fusion = load_fusion(load_checkpoint(ws.require(ws.checkpoint("fusion"), "train-fusion"), "fusion"))
    reports = []
    for split in splits:
        scenes = load_split(ws.require(ws.manifest, "dataset"), split, ec.max_scenes)
        if not scenes:
            logger.warning("split %s is empty; skipped", split)
            continue
        contexts = _depth_contexts(cfg, ws, dcfg, scenes) if dcfg is not None else None
        # stage-1 samples are shared by both stages
        generated = {
            sv.scene_id: stage1_outputs(
                model, sv.window(ec.window_start, model.cfg.n_views_train), schedule,
                cfg.diffusion.sampler, cfg.diffusion.sample_steps, cfg.seed,
            )
            for sv in scenes
        }
        for stage in stages:
            rep = evaluate(
                scenes, split, stage, cfg.features.build(), model, schedule,
                window_start=ec.window_start, depth_cfg=dcfg, depth_model=depth_model,
                fusion_model=fusion, depth_contexts=contexts, generated_override=generated,
            )
            logger.info(report_summary(rep))
            reports.append(rep)
    return save_reports(reports, ws.metrics)


def run_generate(cfg: PipelineConfig, ws: Workspace, split: str = "test", stage: str = "STAGE1") -> list[Path]:
    """Write sampled view windows of every scene in ``split`` as PNGs."""
    model, schedule = _load_diffusion(cfg, ws)
    ec = cfg.evaluate
    stage = Stage(stage)
    scenes = load_split(ws.require(ws.manifest, "dataset"), split, ec.max_scenes)
    if stage is Stage.STAGE3:
        dcfg, depth_model = _load_depth(cfg, ws)
        fusion = load_fusion(load_checkpoint(ws.require(ws.checkpoint("fusion"), "train-fusion"), "fusion"))
        contexts = _depth_contexts(cfg, ws, dcfg, scenes)
    paths = []
    n = model.cfg.n_views_train
    for sv in scenes:
        win = sv.window(ec.window_start, n)
        out = stage1_outputs(model, win, schedule, cfg.diffusion.sampler, cfg.diffusion.sample_steps, cfg.seed)
        if stage is Stage.STAGE3:
            ctx = contexts[sv.scene_id][ec.window_start : ec.window_start + n] if contexts else None
            depth, mask = estimate_window_depth(out, dcfg, depth_model, ctx)
            with torch.no_grad():
                out = fusion(out[None].float(), depth[None], mask[None])[0]
        d = ws.root / "generated" / f"{split}_{stage.value.lower()}" / sv.scene_id
        for k in range(n):
            img = Image(out[k].permute(1, 2, 0).numpy().astype(np.float32))
            paths.append(save_rgb_png(img, d / f"view_{int(win.view_index[k]):03d}.png"))
    return paths


def run_plot(cfg: PipelineConfig, ws: Workspace) -> list[Path]:
    reports = [MetricsReport.load(p) for p in sorted(ws.metrics.glob("*.json"))] if ws.metrics.exists() else []
    logs = [p for p in sorted((ws.root / "logs").glob("*.jsonl"))] if (ws.root / "logs").exists() else []
    return plot_all(reports, logs, ws.plots)


def _done(stage: str, ws: Workspace, cfg: PipelineConfig) -> bool:
    if stage == "dataset":
        return ws.manifest.exists()
    if stage == "train-diffusion":
        return ws.checkpoint("diffusion").exists()
    if stage == "train-depth":
        return cfg.depth.backend == "ORACLE" or ws.checkpoint("depth").exists()
    if stage == "train-fusion":
        return ws.checkpoint("fusion").exists()
    if stage == "evaluate":
        return ws.metrics.exists() and any(ws.metrics.glob("*.json"))
    return False


RUNNERS = {
    "dataset": run_dataset,
    "train-diffusion": run_train_diffusion,
    "train-depth": run_train_depth,
    "train-fusion": run_train_fusion,
    "evaluate": run_evaluate,
    "plot": run_plot,
}


def run_pipeline(cfg: PipelineConfig, ws: Workspace, force: bool = False) -> None:
    """Run every stage in order, skipping stages whose artifact already exists."""
    for stage in STAGES:
        if not force and _done(stage, ws, cfg):
            logger.info("stage %s: artifact present, skipped", stage)
            continue
        logger.info("stage %s: running", stage)
        try:
            RUNNERS[stage](cfg, ws)
        except Exception as exc:
            raise StageFailed(stage, exc) from exc


class StageFailed(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvdepth", description=__doc__.splitlines()[0])
    parser.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    for name in (*STAGES, "generate", "pipeline"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, required=True, help="artifact directory")
        if name in ("generate",):
            p.add_argument("--split", choices=("train", "test"), default="test")
            p.add_argument("--stage", choices=("STAGE1", "STAGE3"), default="STAGE1")
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "test"), default=None, help="default: both")
        if name == "pipeline":
            p.add_argument("--force", action="store_true", help="rerun stages with existing artifacts")
    return parser


def _configure(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.print_schema:
        print(json.dumps(config_schema(), indent=1))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = _configure(args)
    except (pydantic.ValidationError, yaml.YAMLError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    ws = Workspace(args.out)
    try:
        if args.command == "pipeline":
            run_pipeline(cfg, ws, force=args.force)
        elif args.command == "generate":
            run_generate(cfg, ws, args.split, args.stage)
        elif args.command == "evaluate":
            run_evaluate(cfg, ws, (args.split,) if args.split else ("train", "test"))
        else:
            RUNNERS[args.command](cfg, ws)
    except StageFailed as exc:
        print(str(exc), file=sys.stderr)
        return 1 if isinstance(exc.cause, (ConfigMismatch, pydantic.ValidationError)) else 2
    except ConfigMismatch as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    except (MVDepthError, EmptyDataset, OSError, RuntimeError, ValueError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
