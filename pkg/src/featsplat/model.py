"""Full differentiable render path: Gaussians + field -> feature map -> decoder -> RGB."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import Decoder, DecoderRecord
from .field import FeatureField, FieldRecord
from .scene import (
    Camera,
    GaussianSet,
    ProjectedSet,
    project_backward,
    project_gaussians,
    view_directions,
    view_directions_backward,
)
from .splat import FeatureMap, RasterGrads, RasterRecord, build_splats, rasterize, rasterize_backward

GAUSSIAN_PARAMS = ("positions", "log_scales", "rotations", "opacity_logits")


@dataclass
class RenderRecord:
    camera: Camera
    proj: ProjectedSet
    visible: np.ndarray
    dirs: np.ndarray
    dir_lengths: np.ndarray
    field_rec: FieldRecord | None
    raster_rec: RasterRecord
    decoder_rec: DecoderRecord
    feature_map: FeatureMap


class Model:
    def __init__(self, gaussians: GaussianSet, field: FeatureField, decoder: Decoder, view_dir_grad: bool = True):
        self.gaussians = gaussians
        self.field = field
        self.decoder = decoder
        self.view_dir_grad = view_dir_grad

    def params(self) -> dict[str, np.ndarray]:
        out = {f"gaussians.{k}": getattr(self.gaussians, k) for k in GAUSSIAN_PARAMS}
        out.update(self.field.params())
        out.update(self.decoder.params())
        return out

    def render(self, camera: Camera, threads: int = 0):
        g = self.gaussians
        proj = project_gaussians(g.positions, g.log_scales, g.rotations, camera)
        vis = np.flatnonzero(proj.valid)
        feats = np.zeros((len(g), self.field.out_dim))
        dirs = np.zeros((0, 3))
        lengths = np.zeros(0)
        frec = None
        if len(vis):
            dirs, lengths = view_directions(g.positions[vis], camera.center)
            feats[vis], frec = self.field.forward(g.positions[vis], dirs)
        sl = build_splats(proj.mean2d, proj.cov2d, proj.depth, g.opacities, proj.valid, camera.width, camera.height)
        fmap, rrec = rasterize(sl, feats, threads)
        rgb, drec = self.decoder.forward(fmap.data)
        return rgb, RenderRecord(camera, proj, vis, dirs, lengths, frec, rrec, drec, fmap)

    def backward(self, rec: RenderRecord, d_rgb: np.ndarray) -> tuple[dict, RasterGrads]:
        g = self.gaussians
        grads, d_fmap = self.decoder.backward(rec.decoder_rec, d_rgb)
        rg = rasterize_backward(rec.raster_rec, d_fmap)
        opac = g.opacities
        d_pos, d_ls, d_rot = project_backward(rec.proj, g.log_scales, g.rotations, rec.camera, rg.mean2d, rg.cov2d)
        if rec.field_rec is not None:
            fgrads, d_pos_f, d_dirs = self.field.backward(rec.field_rec, rg.features[rec.visible])
            if self.view_dir_grad:
                d_pos_f = d_pos_f + view_directions_backward(rec.dirs, rec.dir_lengths, d_dirs)
            d_pos[rec.visible] += d_pos_f
        else:
            fgrads = {k: np.zeros_like(v) for k, v in self.field.params().items()}
        grads.update(fgrads)
        grads["gaussians.positions"] = d_pos
        grads["gaussians.log_scales"] = d_ls
        grads["gaussians.rotations"] = d_rot
        grads["gaussians.opacity_logits"] = rg.opacity * opac * (1.0 - opac)
        return grads, rg


def render_view(model: Model, camera: Camera, scale: int = 1, threads: int = 0, principal_point: str = "multiply") -> np.ndarray:
    """RGB render with intrinsics and image size multiplied by ``scale``."""
    cam = camera if scale == 1 else camera.scaled(scale, principal_point)
    return model.render(cam, threads)[0]
