import struct

import numpy as np
import pytest

from conftest import small_model
from featsplat.checkpoint import MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from featsplat.errors import CheckpointError
from featsplat.optim import OptimState, optimizer_step
from featsplat.scene import Tier


def trained_state(rng):
    m = small_model(rng, n=4)
    m.gaussians.tier[2] = Tier.FINE
    opt = OptimState()
    optimizer_step(m.params(), {k: rng.normal(size=v.shape) for k, v in m.params().items()}, opt, {k: 1e-3 for k in m.params()})
    return m, opt


def test_save_load_save_identical(tmp_path, rng):
    m, opt = trained_state(rng)
    meta = {"iteration": 12, "events": [{"iteration": 10, "created": 5}], "config": {"seed": 7}}
    save_checkpoint(tmp_path / "a.sgs", m, opt, meta)
    m2, opt2, meta2 = load_checkpoint(tmp_path / "a.sgs")
    save_checkpoint(tmp_path / "b.sgs", m2, opt2, meta2)
    assert (tmp_path / "a.sgs").read_bytes() == (tmp_path / "b.sgs").read_bytes()
    assert meta2 == meta and opt2.step == 1


def test_round_trip_is_bit_exact(rng):
    m, opt = trained_state(rng)
    m2, opt2, _ = from_bytes(to_bytes(m, opt))
    for k, v in m.params().items():
        np.testing.assert_array_equal(m2.params()[k], v)
        assert m2.params()[k].dtype == v.dtype
    np.testing.assert_array_equal(m2.gaussians.tier, m.gaussians.tier)
    np.testing.assert_array_equal(m2.field.resolutions, m.field.resolutions)
    for k in opt.exp_avg:
        np.testing.assert_array_equal(opt2.exp_avg[k], opt.exp_avg[k])
        np.testing.assert_array_equal(opt2.exp_avg_sq[k], opt.exp_avg_sq[k])
    cam_rgb = m.render(__import__("conftest").front_camera(8))[0]
    np.testing.assert_array_equal(m2.render(__import__("conftest").front_camera(8))[0], cam_rgb)


def test_header_layout(rng):
    raw = to_bytes(small_model(rng))
    assert raw[:4] == MAGIC == b"SGS1"
    assert struct.unpack("<I", raw[4:8])[0] == 1


def test_version_mismatch_rejected(rng):
    raw = bytearray(to_bytes(small_model(rng)))
    raw[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(bytes(raw))


def test_bad_magic_and_truncation(rng):
    raw = to_bytes(small_model(rng))
    with pytest.raises(CheckpointError):
        from_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError):
        from_bytes(raw[: len(raw) // 2])
