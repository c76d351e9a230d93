"""Tile-based differentiable feature rasterizer.

Splats are sorted once per view by (depth, index). Each 16x16 tile blends
the splats whose footprint square overlaps it, front to back:

    F(pixel) = sum_i f_i a_i prod_{j<i} (1 - a_j)

A splat contributes to a pixel only inside its footprint square and when its
alpha reaches 1/255. A pixel stops blending once its transmittance has
dropped below 1e-4, so the splats it skips carry less than 1e-4 of weight.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import Camera, GaussianSet, footprint_radius, project_gaussians, view_directions

TILE = 16
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


@dataclass
class FeatureMap:
    data: np.ndarray  # (H, W, C)
    transmittance: np.ndarray  # (H, W) final transmittance per pixel

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def accum_alpha(self) -> np.ndarray:
        return 1.0 - self.transmittance

    def dump(self, path) -> None:
        """Debug dump: three little-endian int32 (H, W, C) then float32 data, row-major."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3i", *self.data.shape))
            fh.write(self.data.astype("<f4").tobytes())

    @staticmethod
    def load_dump(path) -> np.ndarray:
        raw = Path(path).read_bytes()
        h, w, c = struct.unpack("<3i", raw[:12])
        return np.frombuffer(raw[12:], dtype="<f4").reshape(h, w, c)


@dataclass
class SplatList:
    """Visible splats in blend order plus per-tile index lists into that order."""

    index: np.ndarray  # (M,) Gaussian index of each sorted splat
    mean2d: np.ndarray  # (M, 2)
    conic: np.ndarray  # (M, 2, 2) inverse 2D covariance
    depth: np.ndarray
    opacity: np.ndarray
    radius: np.ndarray
    width: int
    height: int
    tiles: list = field(default_factory=list)  # [(x0, x1, y0, y1, sorted positions)]


def _sort_order(depth: np.ndarray, index: np.ndarray) -> np.ndarray:
    return np.lexsort((index, depth))


def build_splats(mean2d, cov2d, depth, opacity, valid, width: int, height: int) -> SplatList:
    idx = np.flatnonzero(valid)
    order = idx[_sort_order(depth[idx], idx)]
    cov = cov2d[order]
    conic = np.linalg.inv(cov) if len(order) else np.zeros((0, 2, 2))
    radius = footprint_radius(cov)
    mu = mean2d[order]
    sl = SplatList(order, mu, conic, depth[order], opacity[order], radius, width, height)

    nx = (width + TILE - 1) // TILE
    ny = (height + TILE - 1) // TILE
    buckets = [[] for _ in range(nx * ny)]
    lo = np.floor((mu - radius[:, None]) / TILE).astype(np.int64)
    hi = np.floor((mu + radius[:, None]) / TILE).astype(np.int64)
    for k in range(len(order)):
        x0, y0 = max(lo[k, 0], 0), max(lo[k, 1], 0)
        x1, y1 = min(hi[k, 0], nx - 1), min(hi[k, 1], ny - 1)
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                buckets[ty * nx + tx].append(k)
    for t, ids in enumerate(buckets):
        if ids:
            ty, tx = divmod(t, nx)
            sl.tiles.append(
                (tx * TILE, min(width, tx * TILE + TILE), ty * TILE, min(height, ty * TILE + TILE), np.array(ids))
            )
    return sl


def evaluate_alpha(mean2d, conic, opacity: float, pixel) -> float:
    """Clamped alpha of one splat at one pixel position (no footprint or skip test)."""
    d = np.asarray(pixel, dtype=np.float64) - np.asarray(mean2d, dtype=np.float64)
    q = d @ np.asarray(conic, dtype=np.float64) @ d
    return float(min(opacity * np.exp(-0.5 * q), ALPHA_MAX))


@dataclass
class _TileState:
    ids: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    gauss: np.ndarray
    raw: np.ndarray
    alpha: np.ndarray
    active: np.ndarray
    t_excl: np.ndarray
    keep: np.ndarray
    weight: np.ndarray


@dataclass
class RasterRecord:
    splats: SplatList
    features: np.ndarray  # (N, C) per Gaussian
    n_gaussians: int
    tiles: list  # _TileState per entry of splats.tiles
    threads: int = 0


def _tile_forward(sl: SplatList, feats_sorted: np.ndarray, tile):
    x0, x1, y0, y1, ids = tile
    cols = np.arange(x0, x1) + 0.5
    rows = np.arange(y0, y1) + 0.5
    px = np.tile(cols, len(rows))
    py = np.repeat(rows, len(cols))
    mu = sl.mean2d[ids]
    con = sl.conic[ids]
    dx = px[None, :] - mu[:, 0:1]
    dy = py[None, :] - mu[:, 1:2]
    q = con[:, 0, 0, None] * dx * dx + (con[:, 0, 1, None] + con[:, 1, 0, None]) * dx * dy + con[:, 1, 1, None] * dy * dy
    gauss = np.exp(-0.5 * q)
    raw = sl.opacity[ids, None] * gauss
    r = sl.radius[ids, None]
    inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    alpha = np.minimum(raw, ALPHA_MAX)
    active = inside & (alpha >= ALPHA_MIN)
    alpha = np.where(active, alpha, 0.0)
    t_incl = np.cumprod(1.0 - alpha, axis=0)
    t_excl = np.vstack([np.ones((1, px.size)), t_incl[:-1]])
    keep = t_excl >= T_MIN
    weight = np.where(keep, alpha * t_excl, 0.0)
    out = weight.T @ feats_sorted[ids]
    t_final = np.prod(np.where(keep, 1.0 - alpha, 1.0), axis=0)
    st = _TileState(ids, dx, dy, gauss, raw, alpha, active, t_excl, keep, weight)
    return out, t_final, st


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def rasterize(splats: SplatList, features: np.ndarray, threads: int = 0):
    """Blend per-Gaussian ``features`` (N, C). Returns (FeatureMap, RasterRecord)."""
    features = np.asarray(features, dtype=np.float64)
    n, c = features.shape
    h, w = splats.height, splats.width
    data = np.zeros((h, w, c))
    trans = np.ones((h, w))
    feats_sorted = features[splats.index]
    results = _map(lambda t: _tile_forward(splats, feats_sorted, t), splats.tiles, threads)
    states = []
    for tile, (out, t_final, st) in zip(splats.tiles, results):
        x0, x1, y0, y1, _ = tile
        data[y0:y1, x0:x1] = out.reshape(y1 - y0, x1 - x0, c)
        trans[y0:y1, x0:x1] = t_final.reshape(y1 - y0, x1 - x0)
        states.append(st)
    return FeatureMap(data, trans), RasterRecord(splats, features, n, states, threads)


def _tile_backward(sl: SplatList, feats_sorted: np.ndarray, tile, st: _TileState, d_map: np.ndarray):
    x0, x1, y0, y1, ids = tile
    g = d_map[y0:y1, x0:x1].reshape(-1, d_map.shape[2])
    f = feats_sorted[ids]
    contrib = f @ g.T  # (n, P)
    d_feat = st.weight @ g
    wc = st.weight * contrib
    suffix = np.cumsum(wc[::-1], axis=0)[::-1] - wc
    live = st.keep & st.active
    d_alpha = np.where(live, st.t_excl * contrib - suffix / (1.0 - st.alpha), 0.0)
    d_raw = np.where(st.raw < ALPHA_MAX, d_alpha, 0.0)
    d_opac = np.sum(d_raw * st.gauss, axis=1)
    common = d_raw * st.raw
    con = sl.conic[ids]
    sym = con[:, 0, 1, None] + con[:, 1, 0, None]
    d_mu = np.stack(
        [
            np.sum(common * 0.5 * (2 * con[:, 0, 0, None] * st.dx + sym * st.dy), axis=1),
            np.sum(common * 0.5 * (sym * st.dx + 2 * con[:, 1, 1, None] * st.dy), axis=1),
        ],
        axis=1,
    )
    d_con = np.empty((len(ids), 2, 2))
    d_con[:, 0, 0] = np.sum(-0.5 * common * st.dx * st.dx, axis=1)
    d_con[:, 0, 1] = np.sum(-0.5 * common * st.dx * st.dy, axis=1)
    d_con[:, 1, 0] = d_con[:, 0, 1]
    d_con[:, 1, 1] = np.sum(-0.5 * common * st.dy * st.dy, axis=1)
    covered = np.any(st.weight > 0, axis=1)
    return d_feat, d_opac, d_mu, d_con, covered


@dataclass
class RasterGrads:
    features: np.ndarray  # (N, C)
    opacity: np.ndarray  # (N,) w.r.t. the activated opacity
    mean2d: np.ndarray  # (N, 2) pixel units
    conic: np.ndarray  # (N, 2, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    covered: np.ndarray  # (N,) bool


def rasterize_backward(rec: RasterRecord, d_map: np.ndarray) -> RasterGrads:
    sl = rec.splats
    m = len(sl.index)
    c = rec.features.shape[1]
    feats_sorted = rec.features[sl.index]
    d_feat = np.zeros((m, c))
    d_opac = np.zeros(m)
    d_mu = np.zeros((m, 2))
    d_con = np.zeros((m, 2, 2))
    covered = np.zeros(m, dtype=bool)
    parts = _map(
        lambda pair: _tile_backward(sl, feats_sorted, pair[0], pair[1], d_map),
        list(zip(sl.tiles, rec.tiles)),
        rec.threads,
    )
    # per-tile buffers reduced in tile order
    for tile, (df, do, dm, dc, cov) in zip(sl.tiles, parts):
        ids = tile[4]
        d_feat[ids] += df
        d_opac[ids] += do
        d_mu[ids] += dm
        d_con[ids] += dc
        covered[ids] |= cov
    con_t = np.swapaxes(sl.conic, -1, -2)
    d_cov = -con_t @ d_con @ con_t

    n = rec.n_gaussians
    out = RasterGrads(np.zeros((n, c)), np.zeros(n), np.zeros((n, 2)), np.zeros((n, 2, 2)), np.zeros((n, 2, 2)), np.zeros(n, dtype=bool))
    out.features[sl.index] = d_feat
    out.opacity[sl.index] = d_opac
    out.mean2d[sl.index] = d_mu
    out.conic[sl.index] = d_con
    out.cov2d[sl.index] = d_cov
    out.covered[sl.index] = covered
    return out


def rasterize_bruteforce(mean2d, cov2d, depth, opacity, valid, features, width: int, height: int) -> FeatureMap:
    """Per-pixel reference blend: global sort, no tiling, no early termination."""
    features = np.asarray(features, dtype=np.float64)
    c = features.shape[1]
    order = sorted((i for i in range(len(depth)) if valid[i]), key=lambda i: (depth[i], i))
    conics = {i: np.linalg.inv(cov2d[i]) for i in order}
    radii = {i: float(footprint_radius(cov2d[i])) for i in order}
    data = np.zeros((height, width, c))
    trans = np.ones((height, width))
    for row in range(height):
        for col in range(width):
            pix = np.array([col + 0.5, row + 0.5])
            t = 1.0
            acc = np.zeros(c)
            for i in order:
                if abs(pix[0] - mean2d[i][0]) > radii[i] or abs(pix[1] - mean2d[i][1]) > radii[i]:
                    continue
                a = evaluate_alpha(mean2d[i], conics[i], opacity[i], pix)
                if a < ALPHA_MIN:
                    continue
                acc += features[i] * a * t
                t *= 1.0 - a
            data[row, col] = acc
            trans[row, col] = t
    return FeatureMap(data, trans)


# ---------------------------------------------------------------------------
# convenience wrappers over scene + field
# ---------------------------------------------------------------------------


def _project_with_features(gaussians: GaussianSet, field, camera: Camera):
    proj = project_gaussians(gaussians.positions, gaussians.log_scales, gaussians.rotations, camera)
    n = len(gaussians)
    feats = np.zeros((n, field.out_dim))
    vis = np.flatnonzero(proj.valid)
    if len(vis):
        dirs, _ = view_directions(gaussians.positions[vis], camera.center)
        feats[vis], _ = field.forward(gaussians.positions[vis], dirs)
    return proj, feats


def render_features(gaussians: GaussianSet, field, camera: Camera, threads: int = 0) -> FeatureMap:
    proj, feats = _project_with_features(gaussians, field, camera)
    sl = build_splats(proj.mean2d, proj.cov2d, proj.depth, gaussians.opacities, proj.valid, camera.width, camera.height)
    fmap, _ = rasterize(sl, feats, threads)
    return fmap


def render_features_bruteforce(gaussians: GaussianSet, field, camera: Camera) -> FeatureMap:
    proj, feats = _project_with_features(gaussians, field, camera)
    return rasterize_bruteforce(
        proj.mean2d, proj.cov2d, proj.depth, gaussians.opacities, proj.valid, feats, camera.width, camera.height
    )
