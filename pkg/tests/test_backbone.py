import numpy as np
import pytest

from lfbnet import backbone, pipeline
from lfbnet.tensor_core import relu

from oracles import conv_loops


def test_luma_examples():
    assert backbone.luma(np.ones((1, 1, 3)))[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert backbone.luma(np.array([[[1.0, 0, 0]]]))[0, 0] == pytest.approx(0.299)
    gray = np.repeat(np.linspace(0, 1, 20).reshape(4, 5, 1), 3, axis=2)
    np.testing.assert_allclose(backbone.luma(gray), gray[:, :, 0], atol=1e-15)
    with pytest.raises(ValueError, match="3-channel"):
        backbone.luma(np.zeros((4, 4, 4)))


def _identity_params(c=16):
    p = pipeline.init_params(channels=c)
    upd = {}
    for mod, cin in (("rgb", 3), ("thermal", 1)):
        for s in range(4):
            k_in = cin if s == 0 else c
            down = np.zeros((3, 3, k_in, c))
            down[1, 1, np.arange(k_in), np.arange(k_in)] = 1
            upd[f"backbone.{mod}.down.{s}"] = down
            for d in backbone.DILATIONS:
                k = np.zeros((3, 3, c, c))
                if d == 1:
                    k[1, 1, np.arange(c), np.arange(c)] = 1
                upd[f"backbone.{mod}.atrous{d}.{s}"] = k
    return p.updated(upd)


def test_identity_convs_keep_constant_image():
    pyr = backbone.extract_features(np.full((64, 80, 3), 0.4), _identity_params(), "rgb")
    for level in pyr:
        np.testing.assert_allclose(level[:, :, :3], 0.4, atol=1e-6)
        assert not np.any(level[:, :, 3:])


def test_zero_weights_give_zero_pyramid(rng):
    p = pipeline.init_params()
    p = p.updated({k: np.zeros_like(v) for k, v in p.entries.items() if k.startswith("backbone.")})
    for level in backbone.extract_features(rng.random((64, 64)), p, "thermal"):
        assert not np.any(level)


def test_matches_loop_oracle(rng):
    p = pipeline.init_params(seed=2)
    img = rng.random((64, 64, 3))
    got = backbone.extract_features(img, p, "rgb")
    x = img
    for s in range(4):
        name = f"backbone.rgb.down.{s}"
        x = relu(conv_loops(x, p[name], p[f"{name}.bias"], stride=1 if s == 0 else 2))
        acc = sum(
            conv_loops(x, p[f"backbone.rgb.atrous{d}.{s}"], p[f"backbone.rgb.atrous{d}.{s}.bias"], dilation=d)
            for d in backbone.DILATIONS
        )
        x = relu(acc)
        np.testing.assert_allclose(got[s], x, atol=1e-5 * max(1.0, np.abs(x).max()))


@pytest.mark.parametrize("shape", [(64, 64), (70, 90), (512, 640), (100, 65)])
def test_pyramid_dims(shape):
    h, w = shape
    ph, pw = -(-h // 16) * 16, -(-w // 16) * 16
    p = pipeline.init_params(channels=2)
    if h * w > 10_000:
        # geometry only: shrink to keep the test fast while keeping the padding rule
        h, w = h // 8, w // 8
        h, w = max(h, 64), max(w, 64)
        ph, pw = -(-h // 16) * 16, -(-w // 16) * 16
    pyr = backbone.extract_features(np.zeros((h, w)), p, "thermal")
    assert len(pyr) == 4
    for s, level in enumerate(pyr):
        assert level.shape == (ph >> s, pw >> s, 2)


def test_translation_covariance(rng):
    p = pipeline.init_params(seed=4, channels=8)
    img = rng.random((96, 96))
    a = backbone.extract_features(img, p, "thermal")[0]
    b = backbone.extract_features(np.roll(img, 2, axis=1), p, "thermal")[0]
    m = 24
    np.testing.assert_allclose(b[m:-m, m + 2 : -m + 2], a[m:-m, m:-m], atol=1e-5)


def test_undersized_input():
    with pytest.raises(ValueError, match="at least"):
        backbone.extract_features(np.zeros((63, 128)), pipeline.init_params(), "thermal")


def test_area_downsample():
    x = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(backbone.area_downsample(x, 2), [[2.5, 4.5], [10.5, 12.5]])
    with pytest.raises(ValueError):
        backbone.area_downsample(np.zeros((5, 4)), 2)
