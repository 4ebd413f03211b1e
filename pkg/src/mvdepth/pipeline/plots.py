"""PNG figures: loss curves, per-view PSNR bars, reconstruction vs generation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import EmptyInput  # noqa: E402
from .evaluate import METRIC_KEYS, MetricsReport  # noqa: E402

LOSS_TERMS = ("objective", "mse", "style", "percep", "content_cos", "angle_cos", "total", "depth_loss")


def read_log(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_loss_curves(log_path: str | Path, out_path: str | Path) -> Path:
    rows = read_log(log_path)
    if not rows:
        raise EmptyInput(f"empty loss log {log_path}")
    x_key = "step" if "step" in rows[0] else "epoch"
    terms = [k for k in LOSS_TERMS if k in rows[0]]
    fig, axes = plt.subplots(len(terms), 1, figsize=(6, 2 * len(terms)), sharex=True, squeeze=False)
    xs = [r[x_key] for r in rows]
    for ax, k in zip(axes[:, 0], terms):
        ys = np.array([r[k] for r in rows], dtype=float)
        ax.plot(xs, ys, lw=0.8)
        if (ys > 0).all():
            ax.set_yscale("log")
        ax.set_ylabel(k)
    axes[-1, 0].set_xlabel(x_key)
    fig.suptitle(Path(log_path).stem)
    return _save(fig, out_path)


def plot_per_view(report: MetricsReport, out_path: str | Path) -> Path:
    vals = report.per_view_psnr()
    if not vals:
        raise EmptyInput("report has no scenes")
    fig, ax = plt.subplots(figsize=(6, 3))
    finite = [v if np.isfinite(v) else np.nan for v in vals]
    ax.bar(range(len(finite)), finite)
    ax.set_xlabel("view in window")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"{report.experiment.value} {report.stage.value}")
    return _save(fig, out_path)


def plot_comparison(reports: Sequence[MetricsReport], out_path: str | Path) -> Path:
    """Grouped bars of every aggregate metric, one bar per report."""
    if not reports:
        raise EmptyInput("no reports to compare")
    fig, axes = plt.subplots(1, len(METRIC_KEYS), figsize=(3 * len(METRIC_KEYS), 3))
    labels = [f"{r.experiment.value[:5]}\n{r.stage.value}" for r in reports]
    for ax, key in zip(axes, METRIC_KEYS):
        vals = [r.aggregate[key] for r in reports]
        ax.bar(range(len(vals)), [v if np.isfinite(v) else np.nan for v in vals], color="C0")
        ax.set_xticks(range(len(vals)), labels, fontsize=7)
        ax.set_title(key, fontsize=9)
    fig.tight_layout()
    return _save(fig, out_path)


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def plot_all(reports: Sequence[MetricsReport], log_paths: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    if not reports and not log_paths:
        raise EmptyInput("nothing to plot")
    out_dir = Path(out_dir)
    paths = [plot_loss_curves(p, out_dir / f"loss_{Path(p).stem}.png") for p in log_paths]
    for r in reports:
        paths.append(plot_per_view(r, out_dir / f"views_{r.experiment.value.lower()}_{r.stage.value.lower()}.png"))
    if reports:
        paths.append(plot_comparison(reports, out_dir / "comparison.png"))
    return paths
