"""Two-stage coarse-to-fine optimization.

Stage 1 fits a coarse model to the low-resolution views. Stage 2 renders at
the super-resolved size, supervises with pseudo-HR labels plus the pooled
LR consistency term, and periodically splits coarse Gaussians that are too
big for the detail they cover.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import Config, LearningRates
from .data import Dataset
from .decoder import Decoder
from .densify import GssConfig, GssState, Remap, accumulate, densify_fine, densify_tier, run_gss
from .field import FeatureField
from .losses import loss_hr_and_grad, total_loss_and_grad
from .model import GAUSSIAN_PARAMS, Model
from .optim import OptimState, exponential_lr, optimizer_step
from .scene import GaussianSet, Tier, inverse_sigmoid

log = logging.getLogger(__name__)

_ROW_PARAMS = tuple(f"gaussians.{k}" for k in GAUSSIAN_PARAMS)


class Stage(enum.Enum):
    COARSE_LR = "coarse_lr"
    FINE_HR = "fine_hr"


@dataclass
class StagePlan:
    stage: Stage
    iterations: int
    gss_interval: int = 100
    coarse_finetune_lr_scale: float = 0.1
    densify: bool = True
    densify_interval: int = 100
    densify_until: float = 0.6

    def __post_init__(self):
        if self.gss_interval <= 0 or self.densify_interval <= 0:
            raise ValueError("intervals must be positive")

    @classmethod
    def from_config(cls, cfg: Config, stage: Stage) -> "StagePlan":
        if stage is Stage.COARSE_LR:
            s = cfg.stage1
            return cls(stage, s.iterations, densify=s.densify, densify_interval=s.densify_interval, densify_until=s.densify_until)
        s = cfg.stage2
        return cls(stage, s.iterations, gss_interval=cfg.gss.interval, coarse_finetune_lr_scale=s.coarse_finetune_lr_scale)


@dataclass
class History:
    losses: list = field(default_factory=list)
    events: list = field(default_factory=list)


def _knn_scale(points: np.ndarray, k: int = 3) -> np.ndarray:
    if len(points) < 2:
        return np.full(len(points), 0.1)
    d2 = np.sum((points[:, None] - points[None]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    k = min(k, len(points) - 1)
    nearest = np.sort(d2, axis=1)[:, :k]
    return np.sqrt(np.maximum(nearest.mean(axis=1), 1e-7))


def init_gaussians(points: np.ndarray, init_opacity: float = 0.1) -> GaussianSet:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    scale = _knn_scale(points)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianSet(points.copy(), np.repeat(np.log(scale)[:, None], 3, axis=1), rot, np.full(n, inverse_sigmoid(init_opacity)))


def init_model(cfg: Config, points: np.ndarray | None, rng: np.random.Generator) -> Model:
    if points is None:
        d = rng.normal(size=(cfg.init.n_random_points, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        points = d * cfg.init.random_radius * rng.uniform(0, 1, (len(d), 1)) ** (1 / 3)
    gaussians = init_gaussians(points, cfg.init.init_opacity)
    field_ = FeatureField(cfg.field, rng)
    decoder = Decoder(cfg.decoder, rng)
    return Model(gaussians, field_, decoder)


def learning_rates(model: Model, lr: LearningRates, step: int, total: int, coarse_scale: float | None = None) -> dict:
    """Per-parameter learning rates; with ``coarse_scale`` coarse rows and shared networks are slowed down."""
    rates = {
        "gaussians.positions": exponential_lr(step, total, lr.position, lr.position_final),
        "gaussians.log_scales": lr.scale,
        "gaussians.rotations": lr.rotation,
        "gaussians.opacity_logits": lr.opacity,
    }
    shared = {}
    for name in model.field.params():
        shared[name] = lr.tables if name == "field.tables" else lr.mlp
    for name in model.decoder.params():
        shared[name] = lr.decoder
    if coarse_scale is not None:
        rows = np.where(model.gaussians.tier == Tier.FINE, 1.0, coarse_scale)
        rates = {k: v * rows for k, v in rates.items()}
        shared = {k: v * coarse_scale for k, v in shared.items()}
    rates.update(shared)
    return rates


def _apply_remap(model: Model, gaussians: GaussianSet, optim: OptimState, remap: Remap) -> None:
    model.gaussians = gaussians
    optim.remap_rows(_ROW_PARAMS, remap.keep, remap.n_new)


def _next_view(order: list, train: list, rng: np.random.Generator) -> int:
    if not order:
        order.extend(int(i) for i in rng.permutation(train))
    return order.pop()


def train_stage1(
    dataset: Dataset,
    model: Model,
    plan: StagePlan,
    cfg: Config,
    rng: np.random.Generator,
    optim: OptimState | None = None,
    threads: int = 0,
    callback: Callable | None = None,
):
    """Fit the coarse model to LR views. Returns (model, optim, history)."""
    optim = optim if optim is not None else OptimState()
    hist = History()
    state = GssState.zeros(len(model.gaussians))
    train = dataset.train_indices
    order: list = []
    until = plan.densify_until * plan.iterations
    for it in range(plan.iterations):
        i = _next_view(order, train, rng)
        rgb, rec = model.render(dataset.views[i].camera, threads)
        loss, d_rgb = loss_hr_and_grad(rgb, dataset.lr_image(i), cfg.loss)
        grads, rg = model.backward(rec, d_rgb)
        accumulate(state, rg.mean2d, rg.covered, model.gaussians.opacities, grads["gaussians.positions"])
        optimizer_step(model.params(), grads, optim, learning_rates(model, cfg.lr, it, plan.iterations))
        model.gaussians.normalize_rotations()
        hist.losses.append(float(loss))

        done = it + 1
        if plan.densify and done % plan.densify_interval == 0 and done <= until:
            g, state, remap = densify_tier(model.gaussians, state, cfg.gss, rng, Tier.COARSE)
            _apply_remap(model, g, optim, remap)
            state.reset()
            log.debug("stage1 it=%d densify %s -> %d Gaussians", done, remap.counts, len(g))
        if callback is not None:
            callback(it, loss, model)
        if done % 100 == 0:
            log.info("stage1 it=%d loss=%.5f n=%d", done, np.mean(hist.losses[-100:]), len(model.gaussians))
    return model, optim, hist


def train_stage2(
    dataset: Dataset,
    pseudo_hr_provider: Callable[[int], np.ndarray],
    model: Model,
    plan: StagePlan,
    gss_cfg: GssConfig,
    cfg: Config,
    rng: np.random.Generator,
    optim: OptimState | None = None,
    threads: int = 0,
    callback: Callable | None = None,
):
    """Coarse-to-fine refinement at the super-resolved size. Returns (model, optim, history)."""
    optim = optim if optim is not None else OptimState()
    hist = History()
    factor = dataset.sr_factor
    state = GssState.zeros(len(model.gaussians))
    train = dataset.train_indices
    order: list = []
    for it in range(plan.iterations):
        i = _next_view(order, train, rng)
        cam = dataset.views[i].camera.scaled(factor, cfg.hr_principal_point)
        rgb, rec = model.render(cam, threads)
        loss, d_rgb = total_loss_and_grad(rgb, pseudo_hr_provider(i), dataset.lr_image(i), factor, cfg.loss)
        grads, rg = model.backward(rec, d_rgb)
        accumulate(state, rg.mean2d, rg.covered, model.gaussians.opacities, grads["gaussians.positions"])
        rates = learning_rates(model, cfg.lr, it, plan.iterations, plan.coarse_finetune_lr_scale)
        optimizer_step(model.params(), grads, optim, rates)
        model.gaussians.normalize_rotations()
        hist.losses.append(float(loss))

        done = it + 1
        if done % plan.gss_interval == 0:
            g, state, fine_remap = densify_fine(model.gaussians, state, gss_cfg, rng)
            _apply_remap(model, g, optim, fine_remap)
            g, state, remap = run_gss(model.gaussians, state, model.field, gss_cfg, rng)
            _apply_remap(model, g, optim, remap)
            event = {
                "iteration": done,
                "candidates": remap.counts["split"],
                "created": remap.counts["created"],
                "coarse": model.gaussians.count(Tier.COARSE),
                "fine": model.gaussians.count(Tier.FINE),
                "fine_cloned": fine_remap.counts["cloned"],
                "fine_split": fine_remap.counts["split"],
                "fine_pruned": fine_remap.counts["pruned"],
            }
            hist.events.append(event)
            log.info("stage2 it=%d loss=%.5f gss=%s", done, np.mean(hist.losses[-100:]), event)
        if callback is not None:
            callback(it, loss, model)
    return model, optim, hist
