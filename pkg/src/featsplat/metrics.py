"""Image quality metrics on [0, 1] images."""

import math

import numpy as np

from .errors import ShapeMismatch
from .losses import ssim

__all__ = ["psnr", "ssim"]


def psnr(a, b) -> float:
    """10 log10(1 / MSE); identical images give ``math.inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} != {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
