"""Latent feature field: contraction, multi-resolution hash grid, SH view encoding, tiny MLP.

Every Gaussian gets its feature vector by querying this field at its center,
so appearance storage does not grow with the number of primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotUnit

PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)

# unit-cube corner offsets, bit k of the corner id selects axis k
_CORNERS = np.array([[(c >> k) & 1 for k in range(3)] for c in range(8)], dtype=np.int64)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


@dataclass
class FieldConfig:
    n_levels: int = 16
    log2_table_size: int = 19
    feature_dim: int = 2
    base_resolution: int = 16
    max_resolution: int = 2048
    hidden_dim: int = 64
    out_dim: int = 16
    sh_degree: int = 3
    init_scale: float = 1e-4

    @property
    def table_size(self) -> int:
        return 1 << self.log2_table_size


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------


def contract(p) -> np.ndarray:
    """Radial squeeze of R^3 into the open ball of radius 2; identity on the unit ball."""
    p = np.asarray(p, dtype=np.float64)
    n = np.linalg.norm(p, axis=-1, keepdims=True)
    safe = np.maximum(n, 1.0)
    return np.where(n <= 1.0, p, (2.0 - 1.0 / safe) * (p / safe))


def contract_backward(p: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    # the inside-branch Jacobian is used on the seam |p| == 1
    n = np.linalg.norm(p, axis=-1, keepdims=True)
    safe = np.maximum(n, 1.0)
    s = 2.0 / safe - 1.0 / safe**2
    k = -2.0 / safe**3 + 2.0 / safe**4
    outside = s * d_out + k * p * np.sum(p * d_out, axis=-1, keepdims=True)
    return np.where(n <= 1.0, d_out, outside)


# ---------------------------------------------------------------------------
# hash grid
# ---------------------------------------------------------------------------


def hash_index(cell, table_size: int) -> np.ndarray:
    """Spatial hash of integer grid cells (..., 3) into [0, table_size)."""
    c = np.asarray(cell, dtype=np.int64).astype(np.uint64)
    h = (c[..., 0] * PRIMES[0]) ^ (c[..., 1] * PRIMES[1]) ^ (c[..., 2] * PRIMES[2])
    return (h % np.uint64(table_size)).astype(np.int64)


def level_resolutions(cfg: FieldConfig) -> np.ndarray:
    if cfg.n_levels == 1:
        return np.array([cfg.base_resolution], dtype=np.int64)
    growth = np.exp((np.log(cfg.max_resolution) - np.log(cfg.base_resolution)) / (cfg.n_levels - 1))
    res = np.round(cfg.base_resolution * growth ** np.arange(cfg.n_levels)).astype(np.int64)
    if np.any(np.diff(res) <= 0):
        raise ValueError("grid resolutions must be strictly increasing")
    return res


def _corner_lookup(pc: np.ndarray, resolution: int, table_size: int):
    """Cell corners, hash indices and trilinear weights for contracted points (N, 3)."""
    u = (pc + 2.0) * (resolution / 4.0)
    base = np.floor(u)
    frac = u - base
    corners = base.astype(np.int64)[:, None, :] + _CORNERS[None]
    idx = hash_index(corners, table_size)
    per_axis = np.where(_CORNERS[None].astype(bool), frac[:, None, :], 1.0 - frac[:, None, :])
    weights = np.prod(per_axis, axis=2)
    return idx, weights, frac


def grid_interpolate(table: np.ndarray, resolution: int, p_contracted) -> np.ndarray:
    """Trilinear blend of the 8 hashed corner entries around one contracted point."""
    pc = np.asarray(p_contracted, dtype=np.float64).reshape(1, 3)
    idx, w, _ = _corner_lookup(pc, resolution, len(table))
    return (w[0, :, None] * table[idx[0]]).sum(axis=0)


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------


def _sh_basis(d: np.ndarray) -> np.ndarray:
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    c2, c3 = SH_C2, SH_C3
    out = [
        np.full_like(x, SH_C0),
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        c2[0] * x * y,
        c2[1] * y * z,
        c2[2] * (2 * zz - xx - yy),
        c2[3] * x * z,
        c2[4] * (xx - yy),
        c3[0] * y * (3 * xx - yy),
        c3[1] * x * y * z,
        c3[2] * y * (4 * zz - xx - yy),
        c3[3] * z * (2 * zz - 3 * xx - 3 * yy),
        c3[4] * x * (4 * zz - xx - yy),
        c3[5] * z * (xx - yy),
        c3[6] * x * (xx - 3 * yy),
    ]
    return np.stack(out, axis=-1)


def _sh_jacobian(d: np.ndarray) -> np.ndarray:
    """(..., 16, 3) partial derivatives of each basis function w.r.t. (x, y, z)."""
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    c2, c3 = SH_C2, SH_C3
    zero = np.zeros_like(x)
    c1 = np.full_like(x, SH_C1)
    rows = [
        (zero, zero, zero),
        (zero, -c1, zero),
        (zero, zero, c1),
        (-c1, zero, zero),
        (c2[0] * y, c2[0] * x, zero),
        (zero, c2[1] * z, c2[1] * y),
        (-2 * c2[2] * x, -2 * c2[2] * y, 4 * c2[2] * z),
        (c2[3] * z, zero, c2[3] * x),
        (2 * c2[4] * x, -2 * c2[4] * y, zero),
        (6 * c3[0] * x * y, c3[0] * (3 * xx - 3 * yy), zero),
        (c3[1] * y * z, c3[1] * x * z, c3[1] * x * y),
        (-2 * c3[2] * x * y, c3[2] * (4 * zz - xx - 3 * yy), 8 * c3[2] * y * z),
        (-6 * c3[3] * x * z, -6 * c3[3] * y * z, c3[3] * (6 * zz - 3 * xx - 3 * yy)),
        (c3[4] * (4 * zz - 3 * xx - yy), -2 * c3[4] * x * y, 8 * c3[4] * x * z),
        (2 * c3[5] * x * z, -2 * c3[5] * y * z, c3[5] * (xx - yy)),
        (c3[6] * (3 * xx - 3 * yy), -6 * c3[6] * x * y, zero),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def sh_encode(d, degree: int = 3, tol: float = 1e-6) -> np.ndarray:
    """Real SH basis values up to ``degree`` for unit direction(s) ``d``."""
    d = np.asarray(d, dtype=np.float64)
    if not 0 <= degree <= 3:
        raise ValueError("SH degree must be in 0..3")
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > tol):
        raise NotUnit("view direction must be unit length")
    return _sh_basis(d)[..., : (degree + 1) ** 2]


# ---------------------------------------------------------------------------
# the field
# ---------------------------------------------------------------------------


@dataclass
class FieldRecord:
    positions: np.ndarray
    contracted: np.ndarray
    dirs: np.ndarray
    flat_idx: np.ndarray  # (L, N, 8) into the flattened (L*T) table
    weights: np.ndarray  # (L, N, 8)
    frac: np.ndarray  # (L, N, 3)
    mlp_in: np.ndarray
    hidden_pre: np.ndarray


class FeatureField:
    """Hash-grid feature field shared by the whole scene."""

    def __init__(self, cfg: FieldConfig | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg or FieldConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.cfg
        self.resolutions = level_resolutions(c)
        s = c.init_scale
        self.tables = rng.uniform(-s, s, size=(c.n_levels, c.table_size, c.feature_dim))
        in_dim = self.in_dim
        b1 = 1.0 / np.sqrt(in_dim)
        b2 = 1.0 / np.sqrt(c.hidden_dim)
        self.mlp = {
            "w1": rng.uniform(-b1, b1, size=(in_dim, c.hidden_dim)),
            "b1": rng.uniform(-b1, b1, size=c.hidden_dim),
            "w2": rng.uniform(-b2, b2, size=(c.hidden_dim, c.out_dim)),
            "b2": rng.uniform(-b2, b2, size=c.out_dim),
        }

    @property
    def n_sh(self) -> int:
        return (self.cfg.sh_degree + 1) ** 2

    @property
    def in_dim(self) -> int:
        return self.cfg.n_levels * self.cfg.feature_dim + self.n_sh

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def parameter_count(self) -> int:
        return int(self.tables.size + sum(v.size for v in self.mlp.values()))

    def params(self) -> dict[str, np.ndarray]:
        out = {"field.tables": self.tables}
        out.update({f"field.mlp.{k}": v for k, v in self.mlp.items()})
        return out

    # -- single-point helpers ------------------------------------------------

    def grid_interpolate(self, level: int, p_contracted) -> np.ndarray:
        return grid_interpolate(self.tables[level], int(self.resolutions[level]), p_contracted)

    def view_independent_feature(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
        feats, _ = self._grid_features(contract(p))
        return feats[0] if feats.shape[0] == 1 else feats

    def feature(self, p, d) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
        out, _ = self.forward(p, d)
        return out[0] if out.shape[0] == 1 else out

    # -- batched forward / backward -------------------------------------------

    def _grid_features(self, pc: np.ndarray):
        c = self.cfg
        n = len(pc)
        t = c.table_size
        flat_idx = np.empty((c.n_levels, n, 8), dtype=np.int64)
        weights = np.empty((c.n_levels, n, 8))
        frac = np.empty((c.n_levels, n, 3))
        for lvl, res in enumerate(self.resolutions):
            idx, w, f = _corner_lookup(pc, int(res), t)
            flat_idx[lvl] = idx + lvl * t
            weights[lvl] = w
            frac[lvl] = f
        flat_tables = self.tables.reshape(-1, c.feature_dim)
        per_level = np.einsum("lnc,lncd->lnd", weights, flat_tables[flat_idx])
        feats = np.transpose(per_level, (1, 0, 2)).reshape(n, -1)
        return feats, (flat_idx, weights, frac)

    def forward(self, positions: np.ndarray, dirs: np.ndarray):
        pc = contract(positions)
        grid, (flat_idx, weights, frac) = self._grid_features(pc)
        sh = sh_encode(dirs, self.cfg.sh_degree)
        x = np.concatenate([grid, sh], axis=1)
        h = x @ self.mlp["w1"] + self.mlp["b1"]
        out = np.maximum(h, 0.0) @ self.mlp["w2"] + self.mlp["b2"]
        rec = FieldRecord(positions, pc, dirs, flat_idx, weights, frac, x, h)
        return out, rec

    def backward(self, rec: FieldRecord, d_out: np.ndarray):
        """Returns (param grads, d_positions, d_dirs)."""
        c = self.cfg
        n = len(rec.positions)
        a = np.maximum(rec.hidden_pre, 0.0)
        grads = {
            "field.mlp.w2": a.T @ d_out,
            "field.mlp.b2": d_out.sum(axis=0),
        }
        d_h = (d_out @ self.mlp["w2"].T) * (rec.hidden_pre > 0)
        grads["field.mlp.w1"] = rec.mlp_in.T @ d_h
        grads["field.mlp.b1"] = d_h.sum(axis=0)
        d_x = d_h @ self.mlp["w1"].T

        n_grid = c.n_levels * c.feature_dim
        d_grid = d_x[:, :n_grid].reshape(n, c.n_levels, c.feature_dim).transpose(1, 0, 2)
        d_sh = d_x[:, n_grid:]

        # table scatter-add; bincount accumulates in a fixed order
        vals = rec.weights[..., None] * d_grid[:, :, None, :]  # (L, N, 8, D)
        flat = rec.flat_idx.ravel()
        size = c.n_levels * c.table_size
        d_tab = np.stack(
            [np.bincount(flat, weights=vals[..., k].ravel(), minlength=size) for k in range(c.feature_dim)],
            axis=-1,
        )
        grads["field.tables"] = d_tab.reshape(self.tables.shape)

        # position gradient through the trilinear weights
        flat_tables = self.tables.reshape(-1, c.feature_dim)
        corner_vals = flat_tables[rec.flat_idx]  # (L, N, 8, D)
        g_corner = np.einsum("lncd,lnd->lnc", corner_vals, d_grid)  # dL/dw
        d_pc = np.zeros((n, 3))
        bits = _CORNERS.astype(bool)
        for k in range(3):
            others = [j for j in range(3) if j != k]
            f = rec.frac
            partial = np.ones_like(rec.weights)
            for j in others:
                partial = partial * np.where(bits[None, None, :, j], f[:, :, None, j], 1.0 - f[:, :, None, j])
            sign = np.where(bits[:, k], 1.0, -1.0)
            dw_du = partial * sign
            d_u = np.sum(g_corner * dw_du, axis=2)  # (L, N)
            d_pc[:, k] = np.sum(d_u * (self.resolutions[:, None] / 4.0), axis=0)
        d_pos = contract_backward(rec.positions, d_pc)

        jac = _sh_jacobian(rec.dirs)[:, : self.n_sh, :]
        d_dirs = np.einsum("ns,nsk->nk", d_sh, jac)
        return grads, d_pos, d_dirs
