import numpy as np
import pytest

from featsplat.decoder import Decoder, DecoderConfig
from featsplat.field import FeatureField, FieldConfig
from featsplat.model import Model
from featsplat.scene import Camera, GaussianSet, look_at


def small_field_cfg(**kw):
    base = dict(n_levels=4, log2_table_size=10, base_resolution=4, max_resolution=32, hidden_dim=8)
    base.update(kw)
    return FieldConfig(**base)


def small_decoder_cfg(**kw):
    base = dict(width=8, bottleneck_width=4)
    base.update(kw)
    return DecoderConfig(**base)


def random_gaussians(rng, n, spread=0.4, scale=(0.08, 0.25)):
    pos = rng.uniform(-spread, spread, (n, 3))
    log_scales = np.log(rng.uniform(*scale, (n, 3)))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    logits = rng.uniform(-1.0, 2.0, n)
    return GaussianSet(pos, log_scales, rot, logits)


def front_camera(size=8, dist=3.0, fov_deg=40.0):
    f = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
    rot, trans = look_at(np.array([0.3, -0.2, -dist]), np.zeros(3))
    return Camera(f, f, size / 2, size / 2, size, size, rot, trans)


def randomize(params, rng, scale=0.3, names=None):
    """Put every parameter (biases included) away from zero so ReLU kinks are unlikely."""
    for k, v in params.items():
        if names is None or k in names:
            v[...] = v + rng.normal(scale=scale * (np.std(v) + 0.05), size=v.shape)


def small_model(rng, n=3, **field_kw):
    field = FeatureField(small_field_cfg(**field_kw), rng)
    field.tables[...] = rng.normal(scale=0.5, size=field.tables.shape)
    decoder = Decoder(small_decoder_cfg(), rng)
    randomize(decoder.params(), rng)
    randomize(field.params(), rng, names=[k for k in field.params() if "mlp.b" in k])
    return Model(random_gaussians(rng, n), field, decoder)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one line per criterion, failed if any of its tests fail
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): test belongs to acceptance criterion n")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None and (report.when == "call" or report.failed or report.skipped):
        n, title = mark.args
        ok, _ = _ACCEPTANCE.get(n, (True, title))
        _ACCEPTANCE[n] = (ok and report.passed if report.when == "call" else False, title)
    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, title = _ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {title}")
