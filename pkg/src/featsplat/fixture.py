"""Synthetic desk-scale scenes with exact HR / LR ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, View, camera_to_entry, write_image
from .losses import avg_pool_downsample
from .scene import Camera, GaussianSet, look_at, project_gaussians
from .splat import build_splats, rasterize

RIG_RADIUS = 3.0
FOV_DEG = 40.0
BACKGROUND = np.array([0.45, 0.5, 0.55])  # kept off 0/1 so a sigmoid decoder can reach it


@dataclass
class Fixture:
    gaussians: GaussianSet
    colors: np.ndarray
    cameras: list  # LR cameras
    hr_images: list
    lr_images: list
    sr_factor: int
    init_points: np.ndarray

    def dataset(self) -> Dataset:
        views = [
            View(f"view_{k:03d}", cam, image=lr, gt_hr=hr)
            for k, (cam, lr, hr) in enumerate(zip(self.cameras, self.lr_images, self.hr_images))
        ]
        return Dataset(views, self.sr_factor, self.init_points.copy())


def camera_rig(n_views: int, resolution: int, cone_deg: float = 20.0) -> list[Camera]:
    """Forward-facing rig: cameras evenly spaced on a cone of half-angle ``cone_deg``
    around the -z axis, all looking at the origin. 90 degrees gives a full ring."""
    f = 0.5 * resolution / np.tan(np.radians(FOV_DEG) / 2)
    c = np.radians(cone_deg)
    cams = []
    for k in range(n_views):
        az = 2 * np.pi * k / n_views
        eye = RIG_RADIUS * np.array([np.sin(c) * np.cos(az), np.sin(c) * np.sin(az), -np.cos(c)])
        rot, trans = look_at(eye, np.zeros(3))
        cams.append(Camera(f, f, resolution / 2, resolution / 2, resolution, resolution, rot, trans))
    return cams


def render_colors(gaussians: GaussianSet, colors: np.ndarray, camera: Camera, background=BACKGROUND) -> np.ndarray:
    proj = project_gaussians(gaussians.positions, gaussians.log_scales, gaussians.rotations, camera)
    sl = build_splats(proj.mean2d, proj.cov2d, proj.depth, gaussians.opacities, proj.valid, camera.width, camera.height)
    fmap = rasterize(sl, colors)[0]
    return fmap.data + fmap.transmittance[..., None] * np.asarray(background)


def make_synthetic_scene(
    seed: int, n_gaussians: int = 20, resolution: int = 32, sr_factor: int = 2, n_views: int = 10, cone_deg: float = 20.0
) -> Fixture:
    """Random well-conditioned colored Gaussians rendered from a fixed rig.

    ``resolution`` is the LR image size; GT HR is rendered at ``resolution * sr_factor``
    and GT LR is its exact average pooling.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(n_gaussians, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = 0.7 * rng.uniform(0, 1, n_gaussians) ** (1 / 3)
    positions = direction * radius[:, None]
    log_scales = rng.uniform(np.log(0.025), np.log(0.12), size=(n_gaussians, 3))
    rotations = rng.normal(size=(n_gaussians, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opacity = rng.uniform(0.6, 0.95, n_gaussians)
    gaussians = GaussianSet(positions, log_scales, rotations, np.log(opacity / (1 - opacity)))
    colors = rng.uniform(0.1, 0.9, size=(n_gaussians, 3))

    cameras = camera_rig(n_views, resolution, cone_deg)
    hr = [render_colors(gaussians, colors, cam.scaled(sr_factor)) for cam in cameras]
    lr = [avg_pool_downsample(img, sr_factor) for img in hr]
    init_points = positions + rng.normal(scale=0.03, size=positions.shape)
    return Fixture(gaussians, colors, cameras, hr, lr, sr_factor, init_points)


def write_fixture(fx: Fixture, out_dir) -> Path:
    """Write LR/HR PNGs, init points and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    views = []
    for k, (cam, lr, hr) in enumerate(zip(fx.cameras, fx.lr_images, fx.hr_images)):
        name = f"view_{k:03d}"
        write_image(out / "lr" / f"{name}.png", lr)
        write_image(out / "hr" / f"{name}.png", hr)
        views.append({"name": name, "image": f"lr/{name}.png", **camera_to_entry(cam)})
    np.savetxt(out / "points.txt", fx.init_points, fmt="%.9f")
    manifest = {"sr_factor": fx.sr_factor, "gt_hr_dir": "hr", "init_points": "points.txt", "views": views}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
