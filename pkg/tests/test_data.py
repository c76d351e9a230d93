import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from featsplat.data import bicubic_upsample, camera_to_entry, catmull_rom, load_dataset, pseudo_hr, read_image, write_image
from featsplat.errors import BadManifest, MissingImage, ResolutionMismatch, ShapeMismatch
from featsplat.fixture import camera_rig
from featsplat.metrics import psnr


def write_manifest(root, n_views=16, lr=8, pseudo_size=None, extra=None):
    views = []
    for k, cam in enumerate(camera_rig(n_views, lr)):
        name = f"v{k:02d}"
        write_image(root / "lr" / f"{name}.png", np.full((lr, lr, 3), k / n_views))
        if pseudo_size:
            write_image(root / "pseudo" / f"{name}.png", np.full((pseudo_size, pseudo_size, 3), 0.5))
        views.append({"name": name, "image": f"lr/{name}.png", **camera_to_entry(cam)})
    data = {"sr_factor": 2, "views": views}
    if pseudo_size:
        data["pseudo_hr_dir"] = "pseudo"
    data.update(extra or {})
    (root / "manifest.json").write_text(json.dumps(data))
    return root / "manifest.json"


def test_every_eighth_view_is_held_out(tmp_path):
    ds = load_dataset(write_manifest(tmp_path, 16))
    assert ds.test_indices == [0, 8]
    assert len(ds.train_indices) == 14


def test_cameras_round_trip(tmp_path):
    ds = load_dataset(write_manifest(tmp_path, 3))
    ref = camera_rig(3, 8)
    for v, c in zip(ds.views, ref):
        np.testing.assert_array_equal(v.camera.rotation, c.rotation)
        assert v.camera.fx == c.fx and v.camera.width == 8


def test_missing_pseudo_dir_falls_back_to_bicubic(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(write_manifest(tmp_path, 2, extra={"pseudo_hr_dir": "nowhere"}))
    assert "bicubic" in caplog.text
    np.testing.assert_allclose(ds.pseudo_hr(1), bicubic_upsample(ds.lr_image(1), 2))


def test_pseudo_images_used_when_present(tmp_path):
    ds = load_dataset(write_manifest(tmp_path, 2, pseudo_size=16))
    np.testing.assert_allclose(ds.pseudo_hr(0), np.full((16, 16, 3), 128 / 255))


def test_wrong_pseudo_size_rejected(tmp_path):
    with pytest.raises(ResolutionMismatch):
        load_dataset(write_manifest(tmp_path, 2, pseudo_size=12))


def test_lr_size_must_match_camera(tmp_path):
    path = write_manifest(tmp_path, 2)
    write_image(tmp_path / "lr" / "v01.png", np.zeros((9, 8, 3)))
    with pytest.raises(ResolutionMismatch):
        load_dataset(path)


def test_manifest_errors(tmp_path):
    with pytest.raises(BadManifest):
        load_dataset(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(BadManifest):
        load_dataset(tmp_path / "bad.json")
    (tmp_path / "empty.json").write_text('{"views": []}')
    with pytest.raises(BadManifest):
        load_dataset(tmp_path / "empty.json")
    path = write_manifest(tmp_path, 2)
    data = json.loads(path.read_text())
    del data["views"][0]["fx"]
    path.write_text(json.dumps(data))
    with pytest.raises(BadManifest):
        load_dataset(path)


def test_missing_image(tmp_path):
    path = write_manifest(tmp_path, 2)
    (tmp_path / "lr" / "v01.png").unlink()
    with pytest.raises(MissingImage):
        load_dataset(path)
    with pytest.raises(MissingImage):
        read_image(tmp_path / "nope.png")


def test_png_quantization_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(5, 7, 3))
    write_image(tmp_path / "a.png", img)
    back = read_image(tmp_path / "a.png")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_pseudo_factor_one_returns_lr(tmp_path):
    ds = load_dataset(write_manifest(tmp_path, 2))
    np.testing.assert_array_equal(pseudo_hr(ds, 1, 1), ds.lr_image(1))


def test_bicubic_kernel_partition_of_unity():
    t = np.linspace(0, 1, 11)
    total = sum(catmull_rom(t - k) for k in range(-1, 3))
    np.testing.assert_allclose(total, 1.0, atol=1e-15)
    assert catmull_rom(0.0) == 1.0 and catmull_rom(1.0) == 0.0 and catmull_rom(2.0) == 0.0


def test_bicubic_constant_and_ramp():
    np.testing.assert_allclose(bicubic_upsample(np.full((4, 5, 3), 0.37), 2), 0.37, atol=1e-15)
    # ramp sampled at LR pixel centers -> same ramp at HR pixel centers
    lr_x = np.arange(8) + 0.5
    lr = np.tile((0.1 + 0.05 * lr_x)[None, :, None], (6, 1, 1))
    hr_x = (np.arange(16) + 0.5) / 2
    expect = np.tile((0.1 + 0.05 * hr_x)[None, :, None], (12, 1, 1))
    np.testing.assert_allclose(bicubic_upsample(lr, 2), expect, atol=1e-6)


def test_psnr_examples(rng):
    a = np.zeros((4, 4, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a) == math.inf
    with pytest.raises(ShapeMismatch):
        psnr(a, np.zeros((4, 4, 1)))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (4, 4, 3), elements=st.floats(0, 1)), arrays(float, (4, 4, 3), elements=st.floats(0, 1)))
def test_psnr_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)
