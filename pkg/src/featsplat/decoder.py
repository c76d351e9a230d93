"""Convolutional image decoder: 16-channel feature map -> RGB.

conv_in (3x3, 16->256) -> ReLU -> bottleneck [1x1 256->64, ReLU, 3x3 64->64,
ReLU, 1x1 64->256] + skip -> ReLU -> conv_out (1x1, 256->3) -> sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch

LAYERS = ("conv_in", "reduce", "mid", "expand", "conv_out")


@dataclass
class DecoderConfig:
    in_channels: int = 16
    width: int = 256
    bottleneck_width: int = 64
    in_kernel: int = 3
    mid_kernel: int = 3


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(H, W, C) -> (H*W, k*k*C) with zero padding k//2."""
    if k == 1:
        return x.reshape(-1, x.shape[2])
    h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, k * k * c)


def _col2im(cols: np.ndarray, h: int, w: int, c: int, k: int) -> np.ndarray:
    if k == 1:
        return cols.reshape(h, w, c)
    p = k // 2
    out = np.zeros((h + 2 * p, w + 2 * p, c))
    cols = cols.reshape(h, w, k, k, c)
    for i in range(k):
        for j in range(k):
            out[i : i + h, j : j + w] += cols[:, :, i, j]
    return out[p : p + h, p : p + w]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-size convolution; weight is (k, k, C_in, C_out)."""
    k, _, cin, cout = weight.shape
    h, w, _ = x.shape
    return (_im2col(x, k) @ weight.reshape(k * k * cin, cout) + bias).reshape(h, w, cout)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class DecoderRecord:
    cols: dict
    pre: dict
    shape: tuple
    out: np.ndarray


class Decoder:
    def __init__(self, cfg: DecoderConfig | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg or DecoderConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.cfg
        shapes = {
            "conv_in": (c.in_kernel, c.in_kernel, c.in_channels, c.width),
            "reduce": (1, 1, c.width, c.bottleneck_width),
            "mid": (c.mid_kernel, c.mid_kernel, c.bottleneck_width, c.bottleneck_width),
            "expand": (1, 1, c.bottleneck_width, c.width),
            "conv_out": (1, 1, c.width, 3),
        }
        self.weights = {}
        for name in LAYERS:
            shp = shapes[name]
            fan_in = shp[0] * shp[1] * shp[2]
            self.weights[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shp)
            self.weights[f"{name}.b"] = np.zeros(shp[3])

    def params(self) -> dict[str, np.ndarray]:
        return {f"decoder.{k}": v for k, v in self.weights.items()}

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.weights.values()))

    def _conv(self, name, x, cols, pre):
        wt = self.weights[f"{name}.w"]
        k = wt.shape[0]
        col = _im2col(x, k)
        cols[name] = col
        z = col @ wt.reshape(-1, wt.shape[3]) + self.weights[f"{name}.b"]
        pre[name] = z
        return z.reshape(x.shape[0], x.shape[1], -1)

    def forward(self, fmap: np.ndarray):
        fmap = np.asarray(fmap, dtype=np.float64)
        if fmap.ndim != 3 or fmap.shape[2] != self.cfg.in_channels:
            raise ShapeMismatch(f"decoder expects (H, W, {self.cfg.in_channels}), got {fmap.shape}")
        if min(fmap.shape[:2]) < 3:
            raise ShapeMismatch(f"decoder needs H, W >= 3, got {fmap.shape[:2]}")
        cols, pre = {}, {}
        a1 = np.maximum(self._conv("conv_in", fmap, cols, pre), 0.0)
        a2 = np.maximum(self._conv("reduce", a1, cols, pre), 0.0)
        a3 = np.maximum(self._conv("mid", a2, cols, pre), 0.0)
        z4 = self._conv("expand", a3, cols, pre)
        z5 = z4 + a1
        pre["skip"] = z5
        a5 = np.maximum(z5, 0.0)
        out = sigmoid(self._conv("conv_out", a5, cols, pre))
        return out, DecoderRecord(cols, pre, fmap.shape, out)

    def decode(self, fmap: np.ndarray) -> np.ndarray:
        return self.forward(fmap)[0]

    def _conv_back(self, name, d_z, cols, grads, h, w):
        wt = self.weights[f"{name}.w"]
        k, _, cin, cout = wt.shape
        d_z = d_z.reshape(-1, cout)
        grads[f"decoder.{name}.w"] = (cols[name].T @ d_z).reshape(wt.shape)
        grads[f"decoder.{name}.b"] = d_z.sum(axis=0)
        return _col2im(d_z @ wt.reshape(-1, cout).T, h, w, cin, k)

    def backward(self, rec: DecoderRecord, d_out: np.ndarray):
        """Returns (param grads, dL/dfeature_map)."""
        h, w, _ = rec.shape
        grads = {}
        d_z6 = (d_out * rec.out * (1.0 - rec.out)).reshape(h * w, -1)
        d_a5 = self._conv_back("conv_out", d_z6, rec.cols, grads, h, w)
        d_z5 = d_a5 * (rec.pre["skip"] > 0)
        d_a3 = self._conv_back("expand", d_z5, rec.cols, grads, h, w)
        d_z3 = d_a3.reshape(h * w, -1) * (rec.pre["mid"] > 0)
        d_a2 = self._conv_back("mid", d_z3, rec.cols, grads, h, w)
        d_z2 = d_a2.reshape(h * w, -1) * (rec.pre["reduce"] > 0)
        d_a1 = self._conv_back("reduce", d_z2, rec.cols, grads, h, w) + d_z5
        d_z1 = d_a1.reshape(h * w, -1) * (rec.pre["conv_in"] > 0)
        d_in = self._conv_back("conv_in", d_z1, rec.cols, grads, h, w)
        return grads, d_in
