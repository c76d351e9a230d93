"""Gaussian primitives, pinhole cameras and the 3D -> 2D projection math."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, DegenerateDirection

NEAR_PLANE = 0.01
LOWPASS = 0.3  # added to the 2D covariance diagonal, pixels^2
FOOTPRINT_SIGMAS = 3.0


class Tier(enum.IntEnum):
    COARSE = 0
    FINE = 1


@dataclass
class GaussianSet:
    """Structure-of-arrays storage for N anisotropic Gaussians.

    Appearance is not stored here: colors/features come from the shared
    feature field queried at the Gaussian centers.
    """

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) quaternion (w, x, y, z)
    opacity_logits: np.ndarray  # (N,)
    tier: np.ndarray = None  # (N,) uint8, Tier values

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        if self.tier is None:
            self.tier = np.full(n, Tier.COARSE, dtype=np.uint8)
        self.tier = np.asarray(self.tier, dtype=np.uint8).reshape(n)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def count(self, tier: Tier) -> int:
        return int(np.count_nonzero(self.tier == tier))

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.tier.copy(),
        )

    def take(self, index) -> "GaussianSet":
        return GaussianSet(
            self.positions[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.tier[index],
        )

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        return GaussianSet(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.tier, other.tier]),
        )

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "positions": self.positions,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
            "opacity_logits": self.opacity_logits,
            "tier": self.tier,
        }


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y / (1.0 - y))


@dataclass
class Camera:
    """Pinhole camera. Pixel (col, row) has its center at (col + 0.5, row + 0.5)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("camera rotation must be orthonormal with det +1")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def scaled(self, s: float, principal_point: str = "multiply") -> "Camera":
        """Same pose, intrinsics and image size multiplied by ``s``.

        ``principal_point="multiply"`` scales cx, cy by ``s`` (exact when pixel centers sit
        at +0.5); ``"center"`` uses ``s * c + (s - 1) / 2`` for integer-centered pixels.
        """
        if principal_point == "multiply":
            shift = 0.0
        elif principal_point == "center":
            shift = (s - 1) / 2
        else:
            raise ValueError(f"unknown principal_point convention {principal_point!r}")
        return Camera(
            self.fx * s,
            self.fy * s,
            self.cx * s + shift,
            self.cy * s + shift,
            int(round(self.width * s)),
            int(round(self.height * s)),
            self.rotation.copy(),
            self.translation.copy(),
        )

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera (rotation, translation) for a camera at ``eye`` facing ``target``.

    Camera axes follow the OpenCV convention: +x right, +y down, +z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return rot, -rot @ eye


# ---------------------------------------------------------------------------
# rotations and covariances
# ---------------------------------------------------------------------------


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions (w, x, y, z), normalized internally -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def quat_to_rotmat_backward(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the raw (unnormalized) quaternion given dL/dR."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = np.moveaxis(qn, -1, 0)
    g = d_rot
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    dqn = np.stack([dw, dx, dy, dz], axis=-1)
    return (dqn - qn * np.sum(qn * dqn, axis=-1, keepdims=True)) / norm


def compute_cov3d(log_scale, rotation) -> np.ndarray:
    """Sigma = R S S^T R^T. Works on a single Gaussian or a batch."""
    m = quat_to_rotmat(rotation) * np.exp(np.asarray(log_scale, dtype=np.float64))[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def compute_cov3d_backward(log_scale, rotation, d_cov):
    """Returns (d_log_scale, d_rotation) for upstream dL/dSigma."""
    rot = quat_to_rotmat(rotation)
    s = np.exp(log_scale)
    m = rot * s[..., None, :]
    d_m = (d_cov + np.swapaxes(d_cov, -1, -2)) @ m
    d_s = np.sum(d_m * rot, axis=-2)
    d_rot = d_m * s[..., None, :]
    return d_s * s, quat_to_rotmat_backward(rotation, d_rot)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


class Projection(NamedTuple):
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


class ProjectedSet(NamedTuple):
    """Batched projection output; rows with ``valid == False`` are culled."""

    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    depth: np.ndarray  # (N,)
    valid: np.ndarray  # (N,) bool
    t_cam: np.ndarray  # (N, 3)
    jac: np.ndarray  # (N, 2, 3)
    cov3d: np.ndarray  # (N, 3, 3)


def project_gaussians(positions, log_scales, rotations, camera: Camera) -> ProjectedSet:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    t = camera.world_to_camera(positions)
    valid = t[:, 2] > NEAR_PLANE
    tz = np.where(valid, t[:, 2], 1.0)
    tx, ty = t[:, 0], t[:, 1]
    mean2d = np.stack([camera.fx * tx / tz + camera.cx, camera.fy * ty / tz + camera.cy], axis=1)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / tz
    jac[:, 0, 2] = -camera.fx * tx / tz**2
    jac[:, 1, 1] = camera.fy / tz
    jac[:, 1, 2] = -camera.fy * ty / tz**2
    cov3d = compute_cov3d(log_scales, rotations).reshape(n, 3, 3)
    tmat = jac @ camera.rotation
    cov2d = tmat @ cov3d @ np.swapaxes(tmat, -1, -2) + LOWPASS * np.eye(2)
    return ProjectedSet(mean2d, cov2d, t[:, 2].copy(), valid, t, jac, cov3d)


def project_gaussian(gaussians: GaussianSet, index: int, camera: Camera) -> Projection:
    proj = project_gaussians(
        gaussians.positions[index : index + 1],
        gaussians.log_scales[index : index + 1],
        gaussians.rotations[index : index + 1],
        camera,
    )
    if not proj.valid[0]:
        raise BehindCamera(f"Gaussian {index} has camera-space z={proj.depth[0]:.4g}")
    return Projection(proj.mean2d[0], proj.cov2d[0], float(proj.depth[0]))


def project_backward(proj: ProjectedSet, log_scales, rotations, camera: Camera, d_mean2d, d_cov2d):
    """Chain dL/dmean2d (N,2) and dL/dcov2d (N,2,2) back to world-space parameters.

    Returns (d_positions, d_log_scales, d_rotations). Culled rows get zeros.
    """
    n = len(proj.depth)
    d_mean2d = np.where(proj.valid[:, None], d_mean2d, 0.0)
    d_cov2d = np.where(proj.valid[:, None, None], d_cov2d, 0.0)
    tx, ty = proj.t_cam[:, 0], proj.t_cam[:, 1]
    tz = np.where(proj.valid, proj.t_cam[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy
    w = camera.rotation

    tmat = proj.jac @ w
    gt = np.swapaxes(d_cov2d, -1, -2)
    d_cov3d = np.swapaxes(tmat, -1, -2) @ d_cov2d @ tmat
    d_tmat = d_cov2d @ tmat @ np.swapaxes(proj.cov3d, -1, -2) + gt @ tmat @ proj.cov3d
    d_j = d_tmat @ w.T

    d_t = np.zeros((n, 3))
    d_t[:, 0] = d_mean2d[:, 0] * fx / tz
    d_t[:, 1] = d_mean2d[:, 1] * fy / tz
    d_t[:, 2] = -d_mean2d[:, 0] * fx * tx / tz**2 - d_mean2d[:, 1] * fy * ty / tz**2
    d_t[:, 0] += -d_j[:, 0, 2] * fx / tz**2
    d_t[:, 1] += -d_j[:, 1, 2] * fy / tz**2
    d_t[:, 2] += (
        -d_j[:, 0, 0] * fx / tz**2
        - d_j[:, 1, 1] * fy / tz**2
        + d_j[:, 0, 2] * 2 * fx * tx / tz**3
        + d_j[:, 1, 2] * 2 * fy * ty / tz**3
    )
    d_pos = d_t @ w
    d_ls, d_rot = compute_cov3d_backward(log_scales, rotations, d_cov3d)
    return d_pos, d_ls, d_rot


def footprint_radius(cov2d: np.ndarray) -> np.ndarray:
    """3 sigma along the major axis of each 2x2 covariance."""
    a = cov2d[..., 0, 0]
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    return FOOTPRINT_SIGMAS * np.sqrt(lam)


# ---------------------------------------------------------------------------
# view directions
# ---------------------------------------------------------------------------


def view_direction(position, camera: Camera) -> np.ndarray:
    v = np.asarray(position, dtype=np.float64) - camera.center
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateDirection("position coincides with the camera center")
    return v / n


def view_directions(positions: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched unit directions plus the pre-normalization lengths (for backward)."""
    v = positions - center
    n = np.linalg.norm(v, axis=1)
    if np.any(n < 1e-12):
        raise DegenerateDirection("position coincides with the camera center")
    return v / n[:, None], n


def view_directions_backward(dirs: np.ndarray, lengths: np.ndarray, d_dirs: np.ndarray) -> np.ndarray:
    proj = np.sum(dirs * d_dirs, axis=1, keepdims=True)
    return (d_dirs - dirs * proj) / lengths[:, None]
