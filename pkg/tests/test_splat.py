import numpy as np
import pytest

from conftest import front_camera, random_gaussians, rel_err
from featsplat.field import FeatureField, FieldConfig
from featsplat.splat import (
    ALPHA_MAX,
    FeatureMap,
    build_splats,
    evaluate_alpha,
    rasterize,
    rasterize_backward,
    rasterize_bruteforce,
    render_features,
    render_features_bruteforce,
)


def splats_at(means, covs, opac, w=8, h=8, depth=None):
    means = np.asarray(means, float)
    n = len(means)
    depth = np.arange(1.0, n + 1) if depth is None else np.asarray(depth, float)
    return build_splats(means, np.asarray(covs, float), depth, np.asarray(opac, float), np.ones(n, bool), w, h)


def random_splats(rng, n, w=8, h=8):
    means = rng.uniform(0, w, (n, 2))
    a = rng.normal(size=(n, 2, 2))
    covs = a @ np.swapaxes(a, 1, 2) * 2 + np.eye(2) * 1.5
    return means, covs, rng.uniform(1, 5, n), rng.uniform(0.3, 0.9, n)


def test_evaluate_alpha_examples():
    assert evaluate_alpha([1, 1], np.eye(2), 0.6, [1, 1]) == pytest.approx(0.6)
    assert evaluate_alpha([1, 1], np.eye(2), 1.0, [1, 1]) == ALPHA_MAX
    assert evaluate_alpha([0, 0], np.eye(2), 1.0, [1, 1]) == pytest.approx(np.exp(-1.0))
    assert evaluate_alpha([0, 0], np.eye(2), 0.0, [0, 0]) == 0.0


def test_single_opaque_splat_is_clamped():
    sl = splats_at([[4.5, 4.5]], [np.eye(2)], [1.0])
    fmap, _ = rasterize(sl, np.array([[2.0, -1.0]]))
    np.testing.assert_allclose(fmap.data[4, 4], [0.99 * 2, -0.99], atol=1e-15)


def test_two_half_transparent_splats():
    sl = splats_at([[2.5, 2.5], [2.5, 2.5]], [np.eye(2)] * 2, [0.5, 0.5])
    fmap, _ = rasterize(sl, np.ones((2, 1)))
    assert fmap.data[2, 2, 0] == pytest.approx(0.75)
    assert fmap.transmittance[2, 2] == pytest.approx(0.25)


def test_empty_scene_gives_zero_map():
    sl = build_splats(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros(0), np.zeros(0, bool), 8, 8)
    fmap, _ = rasterize(sl, np.zeros((0, 16)))
    assert fmap.data.shape == (8, 8, 16) and not fmap.data.any()
    np.testing.assert_array_equal(fmap.transmittance, 1.0)


def test_front_to_back_order_by_depth():
    # same footprint, nearer one drawn first regardless of input order
    means = [[2.5, 2.5], [2.5, 2.5]]
    feats = np.array([[1.0], [0.0]])
    near_first = rasterize(splats_at(means, [np.eye(2)] * 2, [0.8, 0.8], depth=[1, 2]), feats)[0]
    far_first = rasterize(splats_at(means, [np.eye(2)] * 2, [0.8, 0.8], depth=[2, 1]), feats)[0]
    assert near_first.data[2, 2, 0] == pytest.approx(0.8)
    assert far_first.data[2, 2, 0] == pytest.approx(0.2 * 0.8)


def test_depth_ties_broken_by_index():
    means = [[2.5, 2.5], [2.5, 2.5]]
    sl = splats_at(means, [np.eye(2)] * 2, [0.8, 0.8], depth=[1, 1])
    np.testing.assert_array_equal(sl.index, [0, 1])
    assert rasterize(sl, np.array([[1.0], [0.0]]))[0].data[2, 2, 0] == pytest.approx(0.8)


def test_tile_matches_bruteforce_across_tiles(rng):
    for _ in range(5):
        means, covs, depth, opac = random_splats(rng, 8, 40, 24)
        means *= [1.0, 0.6]
        feats = rng.normal(size=(8, 3))
        sl = build_splats(means, covs, depth, opac, np.ones(8, bool), 40, 24)
        a = rasterize(sl, feats)[0]
        b = rasterize_bruteforce(means, covs, depth, opac, np.ones(8, bool), feats, 40, 24)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)
        np.testing.assert_allclose(a.transmittance, b.transmittance, atol=1e-12)


def test_render_single_gaussian_exact(rng):
    field = FeatureField(FieldConfig(log2_table_size=10), rng)
    g = random_gaussians(rng, 1)
    cam = front_camera(16)
    a = render_features(g, field, cam)
    b = render_features_bruteforce(g, field, cam)
    assert np.max(np.abs(a.data - b.data)) < 1e-12


def test_early_termination_error_bounded(rng):
    # dense opaque stack: the skipped tail carries < 1e-4 of weight
    n = 10
    means = np.full((n, 2), 4.5) + rng.normal(scale=0.2, size=(n, 2))
    covs = np.tile(np.eye(2) * 4, (n, 1, 1))
    feats = rng.normal(size=(n, 4))
    sl = build_splats(means, covs, np.arange(n, dtype=float), np.full(n, 0.999), np.ones(n, bool), 8, 8)
    a = rasterize(sl, feats)[0]
    b = rasterize_bruteforce(means, covs, np.arange(n, dtype=float), np.full(n, 0.999), np.ones(n, bool), feats, 8, 8)
    assert np.max(np.abs(a.data - b.data)) <= 1e-4 * np.max(np.abs(feats))


def test_permutation_invariance(rng):
    field = FeatureField(FieldConfig(log2_table_size=10), rng)
    g = random_gaussians(rng, 6)
    cam = front_camera(16)
    base = render_features(g, field, cam).data
    perm = rng.permutation(6)
    np.testing.assert_allclose(render_features(g.take(perm), field, cam).data, base, atol=1e-13)


def test_constant_features_scale_accumulated_alpha(rng):
    means, covs, depth, opac = random_splats(rng, 6)
    c = np.array([0.3, -2.0, 1.5])
    fmap = rasterize(build_splats(means, covs, depth, opac, np.ones(6, bool), 8, 8), np.tile(c, (6, 1)))[0]
    np.testing.assert_allclose(fmap.data, fmap.accum_alpha[..., None] * c, atol=1e-13)
    assert np.all((fmap.accum_alpha >= 0) & (fmap.accum_alpha <= 1))


def test_transmittance_non_increasing(rng):
    means, covs, depth, opac = random_splats(rng, 6)
    sl = build_splats(means, covs, depth, opac, np.ones(6, bool), 8, 8)
    _, rec = rasterize(sl, np.ones((6, 1)))
    for st in rec.tiles:
        assert np.all(np.diff(st.t_excl, axis=0) <= 0)


def test_threads_do_not_change_result(rng):
    means, covs, depth, opac = random_splats(rng, 10, 48, 48)
    means *= 6
    sl = build_splats(means, covs * 4, depth, opac, np.ones(10, bool), 48, 48)
    feats = rng.normal(size=(10, 5))
    a, ra = rasterize(sl, feats, threads=0)
    b, rb = rasterize(sl, feats, threads=4)
    np.testing.assert_array_equal(a.data, b.data)
    up = rng.normal(size=a.data.shape)
    np.testing.assert_array_equal(rasterize_backward(ra, up).mean2d, rasterize_backward(rb, up).mean2d)


def test_backward_zero_upstream(rng):
    means, covs, depth, opac = random_splats(rng, 3)
    _, rec = rasterize(build_splats(means, covs, depth, opac, np.ones(3, bool), 8, 8), rng.normal(size=(3, 4)))
    g = rasterize_backward(rec, np.zeros((8, 8, 4)))
    for arr in (g.features, g.opacity, g.mean2d, g.cov2d):
        assert not arr.any()


def test_front_splat_feature_gradient_at_center():
    sl = splats_at([[3.5, 3.5], [3.2, 3.9]], [np.eye(2) * 2] * 2, [0.7, 0.6])
    _, rec = rasterize(sl, np.ones((2, 1)))
    up = np.zeros((8, 8, 1))
    up[3, 3, 0] = 1.7
    g = rasterize_backward(rec, up)
    assert g.features[0, 0] == pytest.approx(0.7 * 1.7)


def test_backward_matches_fd(rng):
    means, covs, depth, opac = random_splats(rng, 3)
    feats = rng.normal(size=(3, 4))
    up = rng.normal(size=(8, 8, 4))
    valid = np.ones(3, bool)

    def loss(m=means, c=covs, o=opac, f=feats):
        return float(np.sum(rasterize(build_splats(m, c, depth, o, valid, 8, 8), f)[0].data * up))

    _, rec = rasterize(build_splats(means, covs, depth, opac, valid, 8, 8), feats)
    g = rasterize_backward(rec, up)
    h = 1e-4
    for i in range(3):
        o = opac.copy()
        o[i] += h
        lp = loss(o=o)
        o[i] -= 2 * h
        assert rel_err(g.opacity[i], (lp - loss(o=o)) / (2 * h)) < 1e-3
        for k in range(2):
            m = means.copy()
            m[i, k] += h
            lp = loss(m=m)
            m[i, k] -= 2 * h
            assert rel_err(g.mean2d[i, k], (lp - loss(m=m)) / (2 * h)) < 1e-3
        for a, b in ((0, 0), (0, 1), (1, 1)):
            c = covs.copy()
            c[i, a, b] += h
            c[i, b, a] = c[i, a, b]
            lp = loss(c=c)
            c[i, a, b] -= 2 * h
            c[i, b, a] = c[i, a, b]
            analytic = g.cov2d[i, a, b] + (g.cov2d[i, b, a] if a != b else 0.0)
            assert rel_err(analytic, (lp - loss(c=c)) / (2 * h)) < 1e-3
        f = feats.copy()
        f[i, 0] += h
        lp = loss(f=f)
        f[i, 0] -= 2 * h
        assert rel_err(g.features[i, 0], (lp - loss(f=f)) / (2 * h)) < 1e-3


def test_feature_map_dump_roundtrip(tmp_path, rng):
    fmap = FeatureMap(rng.normal(size=(3, 5, 16)), np.ones((3, 5)))
    fmap.dump(tmp_path / "f.bin")
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:12] == np.array([3, 5, 16], "<i4").tobytes()
    np.testing.assert_array_equal(FeatureMap.load_dump(tmp_path / "f.bin"), fmap.data.astype(np.float32))
