"""Gradient-guided selective splitting of coarse Gaussians and fine-tier densification.

A coarse Gaussian is split when its view-averaged screen-space positional
gradient and its scale both exceed thresholds. Children are drawn from the
parent's own 3D density and shrunk by 1 / (0.8 * n_split). Children carry no
appearance: they read their features from the shared field at render time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import GaussianSet, Tier, quat_to_rotmat, sigmoid


@dataclass
class GssConfig:
    tau_p: float = 0.0002
    tau_s: float = 0.01
    n_split: int = 5
    interval: int = 100
    prune_opacity: float = 0.005
    scale_norm: str = "euclidean"  # or "max"
    fine_split_factor: float = 1.6
    clone_nudge: float = 0.5  # fraction of the largest scale to move a clone along -grad

    def __post_init__(self):
        if self.tau_p <= 0 or self.tau_s <= 0:
            raise ValueError("thresholds must be positive")
        if self.n_split < 2:
            raise ValueError("n_split must be at least 2")
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if self.scale_norm not in ("euclidean", "max"):
            raise ValueError("scale_norm must be 'euclidean' or 'max'")

    @property
    def child_scale_divisor(self) -> float:
        return 0.8 * self.n_split

    @staticmethod
    def splits_for_factor(sr_factor: int) -> int:
        return {2: 5, 4: 7}.get(sr_factor, 5)


@dataclass
class GssState:
    grad_norm_sum: np.ndarray
    view_count: np.ndarray
    max_opacity_seen: np.ndarray
    pos_grad_sum: np.ndarray = None  # (N, 3) world-space position gradient, for clone nudging

    def __post_init__(self):
        if self.pos_grad_sum is None:
            self.pos_grad_sum = np.zeros((len(self.grad_norm_sum), 3))

    @classmethod
    def zeros(cls, n: int) -> "GssState":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n))

    def __len__(self):
        return len(self.grad_norm_sum)

    def average(self) -> np.ndarray:
        return np.where(self.view_count > 0, self.grad_norm_sum / np.maximum(self.view_count, 1), 0.0)

    def reset(self) -> None:
        self.grad_norm_sum[:] = 0.0
        self.view_count[:] = 0
        self.max_opacity_seen[:] = 0.0
        self.pos_grad_sum[:] = 0.0

    def remap(self, keep: np.ndarray, n_new: int) -> "GssState":
        def grow(a):
            old = a[keep]
            return np.concatenate([old, np.zeros((n_new,) + old.shape[1:], dtype=old.dtype)])

        return GssState(grow(self.grad_norm_sum), grow(self.view_count), grow(self.max_opacity_seen), grow(self.pos_grad_sum))


def accumulate(state: GssState, dmean2d, covered, opacities=None, dpositions=None) -> GssState:
    """Add one view's screen-space gradient norms for the covered Gaussians."""
    dmean2d = np.asarray(dmean2d, dtype=np.float64).reshape(-1, 2)
    covered = np.asarray(covered, dtype=bool)
    if len(dmean2d) != len(state) or len(covered) != len(state):
        raise ValueError("accumulator length does not match the Gaussian count")
    norm = np.hypot(dmean2d[:, 0], dmean2d[:, 1])
    state.grad_norm_sum[covered] += norm[covered]
    state.view_count[covered] += 1
    if opacities is not None:
        np.maximum(state.max_opacity_seen, np.where(covered, opacities, 0.0), out=state.max_opacity_seen)
    if dpositions is not None:
        state.pos_grad_sum[covered] += dpositions[covered]
    return state


def scale_norms(gaussians: GaussianSet, kind: str = "euclidean") -> np.ndarray:
    s = gaussians.scales
    return np.linalg.norm(s, axis=1) if kind == "euclidean" else s.max(axis=1)


def select_candidates(gaussians: GaussianSet, state: GssState, cfg: GssConfig) -> np.ndarray:
    avg = state.average()
    mask = (
        (gaussians.tier == Tier.COARSE)
        & (state.view_count > 0)
        & (avg > cfg.tau_p)
        & (scale_norms(gaussians, cfg.scale_norm) > cfg.tau_s)
    )
    return np.flatnonzero(mask)


def sample_from_gaussian(gaussians: GaussianSet, index: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from N(position, Sigma) of one Gaussian."""
    rot = quat_to_rotmat(gaussians.rotations[index])
    z = rng.standard_normal((n, 3)) * gaussians.scales[index]
    return gaussians.positions[index] + z @ rot.T


def split_coarse(gaussians: GaussianSet, index: int, field, cfg: GssConfig, rng: np.random.Generator) -> GaussianSet:
    """Children of one coarse Gaussian; the caller removes the parent.

    ``field`` is only read (children query it at render time), never written.
    """
    n = cfg.n_split
    pos = sample_from_gaussian(gaussians, index, n, rng)
    return GaussianSet(
        pos,
        np.repeat(gaussians.log_scales[index : index + 1] - np.log(cfg.child_scale_divisor), n, axis=0),
        np.repeat(gaussians.rotations[index : index + 1], n, axis=0),
        np.repeat(gaussians.opacity_logits[index : index + 1], n),
        np.full(n, Tier.FINE, dtype=np.uint8),
    )


@dataclass
class Remap:
    """How a densification step rearranged rows: ``keep`` old rows, then ``n_new`` appended."""

    keep: np.ndarray
    n_new: int
    counts: dict = field(default_factory=dict)


def run_gss(gaussians: GaussianSet, state: GssState, field, cfg: GssConfig, rng: np.random.Generator):
    """Split every selected coarse Gaussian into ``n_split`` fine ones and reset the accumulator.

    Returns (new GaussianSet, new GssState, Remap).
    """
    cand = select_candidates(gaussians, state, cfg)
    keep_mask = np.ones(len(gaussians), dtype=bool)
    keep_mask[cand] = False
    keep = np.flatnonzero(keep_mask)
    out = gaussians.take(keep)
    for i in cand:
        out = out.concat(split_coarse(gaussians, int(i), field, cfg, rng))
    n_new = len(cand) * cfg.n_split
    new_state = state.remap(keep, n_new)
    new_state.reset()
    counts = {"split": int(len(cand)), "created": int(n_new)}
    return out, new_state, Remap(keep, n_new, counts)


def densify_tier(gaussians: GaussianSet, state: GssState, cfg: GssConfig, rng: np.random.Generator, tier: Tier):
    """Clone / split / prune on one tier, leaving the other tier untouched.

    High-gradient small Gaussians are cloned (nudged against the accumulated
    position gradient), high-gradient large ones are split in two with scale
    divided by ``fine_split_factor``, then low-opacity ones of this tier are pruned.
    Returns (new GaussianSet, new GssState, Remap).
    """
    n = len(gaussians)
    avg = state.average()
    norms = scale_norms(gaussians, cfg.scale_norm)
    in_tier = gaussians.tier == tier
    hot = in_tier & (state.view_count > 0) & (avg > cfg.tau_p)
    clone = np.flatnonzero(hot & (norms <= cfg.tau_s))
    split = np.flatnonzero(hot & (norms > cfg.tau_s))

    new_parts = []
    if len(clone):
        cl = gaussians.take(clone)
        g = state.pos_grad_sum[clone]
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        unit = np.where(gn > 0, g / np.maximum(gn, 1e-30), 0.0)
        cl.positions = cl.positions - cfg.clone_nudge * cl.scales.max(axis=1, keepdims=True) * unit
        new_parts.append(cl)
    for i in split:
        pos = sample_from_gaussian(gaussians, int(i), 2, rng)
        new_parts.append(
            GaussianSet(
                pos,
                np.repeat(gaussians.log_scales[i : i + 1] - np.log(cfg.fine_split_factor), 2, axis=0),
                np.repeat(gaussians.rotations[i : i + 1], 2, axis=0),
                np.repeat(gaussians.opacity_logits[i : i + 1], 2),
                np.full(2, tier, dtype=np.uint8),
            )
        )

    keep_mask = np.ones(n, dtype=bool)
    keep_mask[split] = False
    prune = in_tier & (sigmoid(gaussians.opacity_logits) < cfg.prune_opacity)
    keep_mask &= ~prune
    keep = np.flatnonzero(keep_mask)

    out = gaussians.take(keep)
    n_new = 0
    for part in new_parts:
        if cfg.prune_opacity > 0:
            part = part.take(np.flatnonzero(part.opacities >= cfg.prune_opacity))
        out = out.concat(part)
        n_new += len(part)
    new_state = state.remap(keep, n_new)
    counts = {"cloned": int(len(clone)), "split": int(len(split)), "pruned": int(np.count_nonzero(prune))}
    return out, new_state, Remap(keep, n_new, counts)


def densify_fine(gaussians: GaussianSet, state: GssState, cfg: GssConfig, rng: np.random.Generator):
    return densify_tier(gaussians, state, cfg, rng, Tier.FINE)
