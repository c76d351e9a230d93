"""Image losses, SSIM and average pooling. Images are float arrays (H, W, C).

Every loss has a ``*_and_grad`` twin returning (value, dL/d_render).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotDivisible, ShapeMismatch, TooSmall

C1 = 0.01**2
C2 = 0.03**2


@dataclass
class LossConfig:
    lambda_reg: float = 0.2
    lambda_ssim: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_ssim"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} != {b.shape}")


# ---------------------------------------------------------------------------
# L1
# ---------------------------------------------------------------------------


def l1_loss(a, b) -> float:
    a, b = _as_image(a), _as_image(b)
    _check_same(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_loss_and_grad(a, b):
    a, b = _as_image(a), _as_image(b)
    _check_same(a, b)
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


# ---------------------------------------------------------------------------
# SSIM (valid windows only)
# ---------------------------------------------------------------------------


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    ho, wo = x.shape[0] - k + 1, x.shape[1] - k + 1
    tmp = sum(g[i] * x[i : i + ho] for i in range(k))
    return sum(g[j] * tmp[:, j : j + wo] for j in range(k))


def _filter_adjoint(y: np.ndarray, g: np.ndarray, shape) -> np.ndarray:
    k = len(g)
    ho, wo = y.shape[0], y.shape[1]
    tmp = np.zeros((ho, shape[1]) + y.shape[2:])
    for j in range(k):
        tmp[:, j : j + wo] += g[j] * y
    out = np.zeros(shape)
    for i in range(k):
        out[i : i + ho] += g[i] * tmp
    return out


def _ssim_terms(a, b, window: int, sigma: float):
    a, b = _as_image(a), _as_image(b)
    _check_same(a, b)
    if a.shape[0] < window or a.shape[1] < window:
        raise TooSmall(f"SSIM needs images of at least {window}x{window}, got {a.shape[:2]}")
    g = gaussian_window(window, sigma)
    mu_a, mu_b = _filter(a, g), _filter(b, g)
    e_aa, e_bb, e_ab = _filter(a * a, g), _filter(b * b, g), _filter(a * b, g)
    num1 = 2 * mu_a * mu_b + C1
    num2 = 2 * (e_ab - mu_a * mu_b) + C2
    den1 = mu_a**2 + mu_b**2 + C1
    den2 = (e_aa - mu_a**2) + (e_bb - mu_b**2) + C2
    smap = num1 * num2 / (den1 * den2)
    return a, b, g, mu_a, mu_b, num1, num2, den1, den2, smap


def ssim(a, b, window: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM over all valid 11x11 Gaussian windows and channels, [0, 1] data range."""
    return float(np.mean(_ssim_terms(a, b, window, sigma)[-1]))


def ssim_and_grad(a, b, window: int = 11, sigma: float = 1.5):
    """SSIM and its gradient with respect to ``a``."""
    a, b, g, mu_a, mu_b, n1, n2, d1, d2, smap = _ssim_terms(a, b, window, sigma)
    upstream = 1.0 / smap.size
    s = smap * upstream
    d_mu_a = s * (2 * mu_b / n1 - 2 * mu_b / n2 - 2 * mu_a / d1 + 2 * mu_a / d2)
    d_e_ab = s * 2.0 / n2
    d_e_aa = -s / d2
    grad = (
        _filter_adjoint(d_mu_a, g, a.shape)
        + 2 * a * _filter_adjoint(d_e_aa, g, a.shape)
        + b * _filter_adjoint(d_e_ab, g, a.shape)
    )
    return float(np.mean(smap)), grad


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def avg_pool_downsample(img, factor: int) -> np.ndarray:
    img = _as_image(img)
    h, w, c = img.shape
    if factor < 1 or h % factor or w % factor:
        raise NotDivisible(f"{h}x{w} is not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def avg_pool_backward(d_out: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(d_out, factor, axis=0), factor, axis=1) / (factor * factor)


def block_replicate(img, factor: int) -> np.ndarray:
    img = _as_image(img)
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


# ---------------------------------------------------------------------------
# composite losses
# ---------------------------------------------------------------------------


def _blend_and_grad(render, target, cfg: LossConfig, need_grad: bool):
    lam = cfg.lambda_ssim
    if need_grad:
        l1, g1 = l1_loss_and_grad(render, target)
    else:
        l1, g1 = l1_loss(render, target), None
    if lam == 0.0:
        return (1 - lam) * l1, g1
    if need_grad:
        s, gs = ssim_and_grad(render, target, cfg.ssim_window, cfg.ssim_sigma)
        return (1 - lam) * l1 + lam * (1 - s), (1 - lam) * g1 - lam * gs
    s = ssim(render, target, cfg.ssim_window, cfg.ssim_sigma)
    return (1 - lam) * l1 + lam * (1 - s), None


def loss_hr(render, pseudo, cfg: LossConfig) -> float:
    """(1 - lambda_ssim) * L1 + lambda_ssim * (1 - SSIM)."""
    return float(_blend_and_grad(render, pseudo, cfg, False)[0])


def loss_hr_and_grad(render, pseudo, cfg: LossConfig):
    return _blend_and_grad(render, pseudo, cfg, True)


def loss_reg(render_hr, gt_lr, factor: int, cfg: LossConfig) -> float:
    """Same blend, between the average-pooled render and the true low-res image."""
    pooled = avg_pool_downsample(render_hr, factor)
    return float(_blend_and_grad(pooled, gt_lr, cfg, False)[0])


def loss_reg_and_grad(render_hr, gt_lr, factor: int, cfg: LossConfig):
    pooled = avg_pool_downsample(render_hr, factor)
    val, g = _blend_and_grad(pooled, _as_image(gt_lr), cfg, True)
    return val, avg_pool_backward(g, factor)


def total_loss(render_hr, pseudo_hr, gt_lr, factor: int, cfg: LossConfig) -> float:
    lr = cfg.lambda_reg
    v_hr = loss_hr(render_hr, pseudo_hr, cfg)
    if lr == 0.0:
        return float((1 - lr) * v_hr)
    return float((1 - lr) * v_hr + lr * loss_reg(render_hr, gt_lr, factor, cfg))


def total_loss_and_grad(render_hr, pseudo_hr, gt_lr, factor: int, cfg: LossConfig):
    lr = cfg.lambda_reg
    v_hr, g_hr = loss_hr_and_grad(render_hr, pseudo_hr, cfg)
    if lr == 0.0:
        return (1 - lr) * v_hr, (1 - lr) * g_hr
    v_reg, g_reg = loss_reg_and_grad(render_hr, gt_lr, factor, cfg)
    return (1 - lr) * v_hr + lr * v_reg, (1 - lr) * g_hr + lr * g_reg
