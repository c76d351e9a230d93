"""Adaptive-moment optimizer with named parameter groups."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)

    def remap_rows(self, names, keep: np.ndarray, n_new: int) -> None:
        """Follow a change of per-Gaussian rows: keep ``keep`` rows, append ``n_new`` fresh ones."""
        for name in names:
            for buf in (self.exp_avg, self.exp_avg_sq):
                if name not in buf:
                    continue
                old = buf[name][keep]
                buf[name] = np.concatenate([old, np.zeros((n_new,) + old.shape[1:])])


def optimizer_step(params: dict, grads: dict, state: OptimState, lrs: dict) -> None:
    """One in-place update of every array in ``params`` that has a gradient.

    ``lrs[name]`` is a scalar or an array broadcastable over the parameter's
    leading axis (per-row learning rates).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.exp_avg.get(name)
        if m is None or m.shape != p.shape:
            m = state.exp_avg[name] = np.zeros_like(p)
            state.exp_avg_sq[name] = np.zeros_like(p)
        v = state.exp_avg_sq[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        lr = np.asarray(lrs.get(name, 0.0), dtype=np.float64)
        if lr.ndim == 1 and p.ndim > 1:
            lr = lr.reshape((-1,) + (1,) * (p.ndim - 1))
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def exponential_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    if total <= 0:
        return lr_init
    t = min(max(step / total, 0.0), 1.0)
    return float(np.exp((1 - t) * np.log(lr_init) + t * np.log(lr_final)))
