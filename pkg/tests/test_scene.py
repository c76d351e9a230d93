import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from featsplat.errors import BehindCamera, DegenerateDirection
from featsplat.scene import (
    LOWPASS,
    Camera,
    GaussianSet,
    Tier,
    compute_cov3d,
    compute_cov3d_backward,
    footprint_radius,
    look_at,
    project_gaussian,
    project_gaussians,
    quat_to_rotmat,
    view_direction,
)

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])
finite = st.floats(-3, 3, allow_nan=False)


def cam(fx=1.0, fy=1.0, cx=0.0, cy=0.0, w=100, h=100, rot=None, t=None):
    return Camera(fx, fy, cx, cy, w, h, np.eye(3) if rot is None else rot, np.zeros(3) if t is None else t)


def one(pos, log_scale=(0, 0, 0), q=IDENTITY_Q):
    return GaussianSet(np.array([pos], float), np.array([log_scale], float), np.array([q], float), np.zeros(1))


def test_cov3d_identity():
    np.testing.assert_allclose(compute_cov3d(np.zeros(3), IDENTITY_Q), np.eye(3), atol=1e-15)


def test_cov3d_scaled_axis():
    np.testing.assert_allclose(compute_cov3d(np.array([np.log(2), 0, 0]), IDENTITY_Q), np.diag([4.0, 1, 1]), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1))
def test_cov3d_symmetric_psd_with_scale_spectrum(log_scale, q):
    q = q / np.linalg.norm(q)
    cov = compute_cov3d(log_scale, q)
    np.testing.assert_array_equal(cov, cov.T)
    eig = np.linalg.eigvalsh(cov)
    np.testing.assert_allclose(np.sort(eig), np.sort(np.exp(2 * log_scale)), rtol=1e-9, atol=1e-12)
    assert eig.min() >= -1e-12 * eig.max()


def test_cov3d_cholesky_without_jitter(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        np.linalg.cholesky(compute_cov3d(rng.uniform(-3, 1, 3), q / np.linalg.norm(q)))


def test_rotation_matrix_orthonormal(rng):
    q = rng.normal(size=(20, 4))
    R = quat_to_rotmat(q / np.linalg.norm(q, axis=1, keepdims=True))
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)


def test_cov3d_backward_matches_fd(rng):
    ls = rng.normal(scale=0.3, size=3)
    q = rng.normal(size=4)
    up = rng.normal(size=(3, 3))
    d_ls, d_q = compute_cov3d_backward(ls[None], q[None], up[None])

    def f(ls_, q_):
        return np.sum(compute_cov3d(ls_, q_ / np.linalg.norm(q_)) * up)

    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        assert d_ls[0, k] == pytest.approx((f(ls + e, q) - f(ls - e, q)) / (2 * h), rel=1e-6, abs=1e-9)
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        assert d_q[0, k] == pytest.approx((f(ls, q + e) - f(ls, q - e)) / (2 * h), rel=1e-5, abs=1e-8)


def test_projection_on_axis():
    p = project_gaussian(one((0, 0, 1)), 0, cam())
    np.testing.assert_allclose(p.mean2d, [0, 0])
    assert p.depth == 1.0


def test_projection_pinhole_by_hand():
    p = project_gaussian(one((1, 0, 2)), 0, cam(fx=100, fy=100, cx=50, cy=50))
    assert p.mean2d[0] == pytest.approx(100.0)


def test_projection_behind_camera():
    with pytest.raises(BehindCamera):
        project_gaussian(one((0, 0, -1)), 0, cam())
    with pytest.raises(BehindCamera):
        project_gaussian(one((0, 0, 0.005)), 0, cam())


def test_projection_cov2d_by_hand():
    # isotropic unit Gaussian at depth 2 on the axis: J = diag(f/z, f/z), cov2d = (f/z)^2 I + 0.3 I
    p = project_gaussian(one((0, 0, 2)), 0, cam(fx=10, fy=10))
    np.testing.assert_allclose(p.cov2d, (25 + LOWPASS) * np.eye(2), atol=1e-12)


def test_projected_mean_invariant_to_rotation_about_ray(rng):
    c = cam(fx=50, fy=50, cx=32, cy=32, w=64, h=64)
    pos = np.array([0.3, -0.2, 3.0])
    base = project_gaussian(one(pos, (-1, -2, -1.5)), 0, c).mean2d
    for _ in range(5):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        np.testing.assert_allclose(project_gaussian(one(pos, (-1, -2, -1.5), q), 0, c).mean2d, base, atol=1e-12)


def test_batched_projection_marks_culled():
    g = GaussianSet(np.array([[0, 0, 2.0], [0, 0, -2.0]]), np.zeros((2, 3)), np.tile(IDENTITY_Q, (2, 1)), np.zeros(2))
    proj = project_gaussians(g.positions, g.log_scales, g.rotations, cam())
    assert proj.valid.tolist() == [True, False]


def test_footprint_radius_is_three_sigma():
    assert footprint_radius(np.diag([4.0, 1.0])[None])[0] == pytest.approx(6.0)


def test_view_direction_examples():
    np.testing.assert_allclose(view_direction((0, 0, 5), cam()), [0, 0, 1])
    np.testing.assert_allclose(view_direction((3, 4, 0), cam()), [0.6, 0.8, 0])
    with pytest.raises(DegenerateDirection):
        view_direction((0, 0, 0), cam())


@settings(max_examples=100, deadline=None)
@given(arrays(float, 3, elements=st.floats(-100, 100)).filter(lambda p: np.linalg.norm(p) > 1e-6))
def test_view_direction_unit(p):
    assert np.linalg.norm(view_direction(p, cam())) == pytest.approx(1.0, abs=1e-12)


def test_view_direction_uses_camera_center():
    rot, t = look_at(np.array([1.0, 2.0, 3.0]), np.zeros(3))
    c = cam(rot=rot, t=t)
    np.testing.assert_allclose(c.center, [1, 2, 3], atol=1e-12)
    np.testing.assert_allclose(view_direction((1, 2, 5), c), [0, 0, 1], atol=1e-12)


def test_camera_validation():
    with pytest.raises(ValueError):
        cam(fx=0)
    with pytest.raises(ValueError):
        cam(w=0)
    with pytest.raises(ValueError):
        cam(rot=np.diag([1.0, 1.0, -1.0]))


def test_camera_scaling_conventions():
    c = cam(fx=10, fy=12, cx=4, cy=5, w=8, h=10)
    s = c.scaled(2)
    assert (s.fx, s.fy, s.cx, s.cy, s.width, s.height) == (20, 24, 8, 10, 16, 20)
    s = c.scaled(2, "center")
    assert (s.cx, s.cy) == (8.5, 10.5)
    with pytest.raises(ValueError):
        c.scaled(2, "bogus")


def test_gaussian_set_basics(rng):
    g = GaussianSet(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 4)), rng.normal(size=4))
    assert len(g) == 4 and g.count(Tier.COARSE) == 4 and g.count(Tier.FINE) == 0
    assert np.all((g.opacities > 0) & (g.opacities < 1))
    g.normalize_rotations()
    np.testing.assert_allclose(np.linalg.norm(g.rotations, axis=1), 1.0)
    both = g.concat(g.take([1, 2]))
    assert len(both) == 6
    np.testing.assert_array_equal(both.positions[4:], g.positions[1:3])
    with pytest.raises(ValueError):
        GaussianSet(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 4)), np.zeros(2))
