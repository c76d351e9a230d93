"""Camera manifests, image I/O, pseudo-HR provisioning.

Manifest (JSON)::

    {
      "sr_factor": 2,
      "pseudo_hr_dir": "pseudo",      # optional; per-view files named like the LR image
      "gt_hr_dir": "hr",              # optional; HR ground truth used by `eval`
      "init_points": "points.txt",    # optional; one "x y z" per line
      "views": [
        {"name": "view_000", "image": "lr/view_000.png",
         "fx": 44.0, "fy": 44.0, "cx": 16.0, "cy": 16.0, "width": 32, "height": 32,
         "rotation": [r00, r01, r02, r10, r11, r12, r20, r21, r22],
         "translation": [tx, ty, tz]}
      ]
    }

``rotation``/``translation`` are world-to-camera. Paths are relative to the manifest.
Every eighth view (index 0, 8, 16, ...) is held out for testing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadManifest, MissingImage, ResolutionMismatch
from .scene import Camera

log = logging.getLogger(__name__)

TEST_EVERY = 8


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingImage(str(path))
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path, format="PNG")


def image_size(path) -> tuple[int, int]:
    """(width, height) without decoding pixels."""
    path = Path(path)
    if not path.exists():
        raise MissingImage(str(path))
    with Image.open(path) as im:
        return im.size


# ---------------------------------------------------------------------------
# bicubic upsampling
# ---------------------------------------------------------------------------


def catmull_rom(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _upsample_axis(img: np.ndarray, factor: int, axis: int) -> np.ndarray:
    x = np.moveaxis(img, axis, 0)
    n = x.shape[0]
    if n == 1:
        return np.moveaxis(np.repeat(x, factor, axis=0), 0, axis)
    # linear extrapolation keeps ramps exact up to the border
    d0 = x[1] - x[0]
    d1 = x[-1] - x[-2]
    xp = np.concatenate([[x[0] - 2 * d0], [x[0] - d0], x, [x[-1] + d1], [x[-1] + 2 * d1]])
    pos = (np.arange(n * factor) + 0.5) / factor - 0.5
    base = np.floor(pos).astype(np.int64)
    t = pos - base
    out = 0.0
    for k in range(-1, 3):
        w = catmull_rom(t - k)
        out = out + w.reshape((-1,) + (1,) * (x.ndim - 1)) * xp[base + k + 2]
    return np.moveaxis(out, 0, axis)


def bicubic_upsample(img, factor: int, clip: bool = True) -> np.ndarray:
    """Separable Catmull-Rom (a = -0.5) upsampling by an integer factor, pixel-center aligned."""
    img = np.asarray(img, dtype=np.float64)
    if factor == 1:
        return img.copy()
    out = _upsample_axis(_upsample_axis(img, factor, 0), factor, 1)
    return np.clip(out, 0.0, 1.0) if clip else out


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@dataclass
class View:
    name: str
    camera: Camera
    image_path: Path | None = None
    pseudo_hr_path: Path | None = None
    gt_hr_path: Path | None = None
    image: np.ndarray | None = None  # in-memory LR image, takes precedence over image_path
    gt_hr: np.ndarray | None = None
    pseudo: np.ndarray | None = None


@dataclass
class Dataset:
    views: list
    sr_factor: int
    init_points: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def test_indices(self) -> list[int]:
        return [i for i in range(len(self.views)) if i % TEST_EVERY == 0]

    @property
    def train_indices(self) -> list[int]:
        return [i for i in range(len(self.views)) if i % TEST_EVERY != 0]

    def lr_image(self, i: int) -> np.ndarray:
        v = self.views[i]
        if v.image is not None:
            return v.image
        key = ("lr", i)
        if key not in self._cache:
            self._cache[key] = read_image(v.image_path)
        return self._cache[key]

    def gt_hr(self, i: int) -> np.ndarray | None:
        v = self.views[i]
        if v.gt_hr is not None:
            return v.gt_hr
        if v.gt_hr_path is None:
            return None
        key = ("gt", i)
        if key not in self._cache:
            self._cache[key] = read_image(v.gt_hr_path)
        return self._cache[key]

    def pseudo_hr(self, i: int) -> np.ndarray:
        key = ("pseudo", i)
        if key not in self._cache:
            self._cache[key] = pseudo_hr(self, i, self.sr_factor)
        return self._cache[key]


def pseudo_hr(dataset: Dataset, index: int, factor: int) -> np.ndarray:
    """On-disk (or in-memory) pseudo-HR label when present, else bicubic upsample of the LR view."""
    v = dataset.views[index]
    if factor == 1:
        return dataset.lr_image(index)
    if v.pseudo is not None:
        return v.pseudo
    if v.pseudo_hr_path is not None and v.pseudo_hr_path.exists():
        return read_image(v.pseudo_hr_path)
    return bicubic_upsample(dataset.lr_image(index), factor)


def _camera_from_entry(entry: dict, where: str) -> Camera:
    try:
        return Camera(
            float(entry["fx"]),
            float(entry["fy"]),
            float(entry["cx"]),
            float(entry["cy"]),
            int(entry["width"]),
            int(entry["height"]),
            np.array(entry["rotation"], dtype=np.float64).reshape(3, 3),
            np.array(entry["translation"], dtype=np.float64).reshape(3),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadManifest(f"{where}: {exc}") from exc


def camera_to_entry(cam: Camera) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "rotation": [float(v) for v in cam.rotation.ravel()],
        "translation": [float(v) for v in cam.translation],
    }


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise BadManifest(f"manifest not found: {manifest_path}")
    try:
        data = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise BadManifest(f"{manifest_path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("views"), list) or not data["views"]:
        raise BadManifest(f"{manifest_path}: needs a non-empty 'views' list")
    root = manifest_path.parent
    factor = int(data.get("sr_factor", 2))

    pseudo_dir = root / data["pseudo_hr_dir"] if data.get("pseudo_hr_dir") else None
    if pseudo_dir is None or not pseudo_dir.is_dir():
        log.warning("no pseudo-HR directory; falling back to bicubic x%d upsampling", factor)
        pseudo_dir = None
    gt_dir = root / data["gt_hr_dir"] if data.get("gt_hr_dir") else None

    views = []
    lr_size = None
    for k, entry in enumerate(data["views"]):
        where = f"{manifest_path}: view {k}"
        if "image" not in entry:
            raise BadManifest(f"{where}: missing 'image'")
        cam = _camera_from_entry(entry, where)
        img_path = root / entry["image"]
        size = image_size(img_path)
        if size != (cam.width, cam.height):
            raise ResolutionMismatch(f"{where}: image is {size}, camera says {(cam.width, cam.height)}")
        if lr_size is None:
            lr_size = size
        elif size != lr_size:
            raise ResolutionMismatch(f"{where}: LR images must share one resolution")
        ps = pseudo_dir / img_path.name if pseudo_dir is not None else None
        if ps is not None and ps.exists():
            if image_size(ps) != (size[0] * factor, size[1] * factor):
                raise ResolutionMismatch(f"{where}: pseudo-HR image {ps} is not {factor}x the LR size")
        gt = gt_dir / img_path.name if gt_dir is not None else None
        if gt is not None and not gt.exists():
            gt = None
        views.append(View(entry.get("name", img_path.stem), cam, img_path, ps, gt))

    points = None
    if data.get("init_points"):
        pts_path = root / data["init_points"]
        if not pts_path.exists():
            raise BadManifest(f"{manifest_path}: init_points file {pts_path} not found")
        points = np.loadtxt(pts_path, dtype=np.float64, ndmin=2)
    return Dataset(views, factor, points)
