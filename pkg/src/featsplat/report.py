"""CSV records and matplotlib figures for `eval` and `split-stats`."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import psnr, ssim  # noqa: E402

EVAL_FIELDS = ("view", "split", "psnr", "ssim")
SPLIT_FIELDS = ("iteration", "candidates", "created", "coarse", "fine", "fine_cloned", "fine_split", "fine_pruned")


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return v


def write_csv(path, fields, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in fields})
    return path


def eval_rows(names, splits, renders, targets) -> list[dict]:
    """One record per view plus a mean record per split and overall.

    Means of PSNR are taken over finite values; if every view is identical to
    its target the aggregate stays at the +inf sentinel.
    """
    rows = []
    for name, split, r, t in zip(names, splits, renders, targets):
        rows.append({"view": name, "split": split, "psnr": psnr(r, t), "ssim": ssim(r, t)})
    for label in sorted({row["split"] for row in rows}) + ["all"]:
        sel = [row for row in rows if label in ("all", row["split"])]
        if not sel:
            continue
        rows.append({"view": f"mean_{label}", "split": label, "psnr": _mean_psnr(sel), "ssim": float(np.mean([r["ssim"] for r in sel]))})
    return rows


def _mean_psnr(rows) -> float:
    vals = [r["psnr"] for r in rows]
    finite = [v for v in vals if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def plot_eval(rows, path) -> Path:
    per_view = [r for r in rows if not r["view"].startswith("mean_")]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    names = [r["view"] for r in per_view]
    colors = ["tab:orange" if r["split"] == "test" else "tab:blue" for r in per_view]
    cap = max([r["psnr"] for r in per_view if math.isfinite(r["psnr"])], default=60.0) + 5
    axes[0].bar(names, [min(r["psnr"], cap) for r in per_view], color=colors)
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].bar(names, [r["ssim"] for r in per_view], color=colors)
    axes[1].set_ylabel("SSIM")
    axes[1].set_ylim(0, 1.0)
    for ax in axes:
        ax.tick_params(axis="x", labelrotation=60, labelsize=7)
    fig.suptitle("per-view quality (orange = held out)")
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(render, target, path, title: str = "") -> Path:
    err = np.abs(np.asarray(render) - np.asarray(target)).mean(axis=-1)
    fig, axes = plt.subplots(1, 3, figsize=(8, 3))
    for ax, img, label in zip(axes, (render, target, err), ("render", "target", "abs error")):
        ax.imshow(np.clip(img, 0, 1), cmap="magma" if img is err else None, interpolation="nearest")
        ax.set_title(label)
        ax.axis("off")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def split_rows(events) -> list[dict]:
    return [{k: e.get(k, 0) for k in SPLIT_FIELDS} for e in events]


def plot_split_stats(rows, path) -> Path:
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.2))
    it = [r["iteration"] for r in rows]
    ax0.plot(it, [r["coarse"] for r in rows], marker="o", label="coarse")
    ax0.plot(it, [r["fine"] for r in rows], marker="o", label="fine")
    ax0.set_xlabel("iteration")
    ax0.set_ylabel("Gaussians")
    ax0.legend()
    ax1.bar(it, [r["candidates"] for r in rows], width=max(1, (it[1] - it[0]) * 0.8) if len(it) > 1 else 1.0)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("coarse Gaussians split")
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
