import json

import numpy as np
import pytest

from lfbnet import backbone, fgsa, lfca, lfgm, pipeline, spectral, synth
from lfbnet.pipeline import Config, ConfigError

from oracles import guidance_loops

COH, S_PHI, C_HF = lfgm.CHANNELS.index("coh"), lfgm.CHANNELS.index("s_phi"), lfgm.CHANNELS.index("c_hf")


@pytest.fixture(scope="module")
def small_pair():
    pair = synth.generate_pair(synth.SynthConfig(seed=3, size=(64, 80), shift=(1.5, -0.5), texture="blobs"))
    return pair.rgb, pair.thermal


@pytest.fixture(scope="module")
def params():
    return pipeline.init_params(seed=0)


def test_identical_modalities(rng):
    rgb = np.repeat(rng.random((64, 64, 1)), 3, axis=2)
    thermal = backbone.luma(rgb)
    for s in range(4):
        g = pipeline.guidance_map(rgb, thermal, scale=s)
        np.testing.assert_allclose(g[:, :, COH], 1.0, atol=1e-6)
        assert np.abs(g[:, :, S_PHI]).max() < 1e-6


def test_zero_thermal_gives_rgb_high_band_share(rng):
    g = pipeline.guidance_map(rng.random((64, 64, 3)), np.zeros((64, 64)))
    np.testing.assert_allclose(g[:, :, C_HF], 1.0, atol=1e-6)
    np.testing.assert_allclose(g[:, :, lfgm.CHANNELS.index("c_lf")], 0.0, atol=1e-6)


def test_guidance_matches_patchwise_loop_oracle(small_pair):
    rgb, thermal = small_pair
    res = pipeline.run(rgb, thermal, pipeline.init_params(channels=4))
    lr = backbone.luma(backbone.pad_to_multiple(rgb))
    lt = backbone.pad_to_multiple(thermal)
    for s in (0, 1):
        grid, spec_r, spec_t = pipeline.scale_spectra(lr, lt, s)
        vecs = np.array([guidance_loops(spec_r[q], spec_t[q]) for q in range(grid.n_patches)])
        ref = lfgm.project_guidance(vecs, grid)
        np.testing.assert_allclose(res.guidance[s].data, ref, atol=1e-6)


def test_run_equals_manual_composition(small_pair, params):
    rgb, thermal = small_pair
    res = pipeline.run(rgb, thermal, params)
    rgb_p, th_p = backbone.pad_to_multiple(rgb), backbone.pad_to_multiple(thermal)
    pyr_r = backbone.extract_features(rgb_p, params, "rgb")
    pyr_t = backbone.extract_features(th_p, params, "thermal")
    for s in range(4):
        grid, spec_r, spec_t = pipeline.scale_spectra(backbone.luma(rgb_p), th_p, s)
        alpha, beta = lfca.scale_coefficients(params, s)
        f_align = lfca.reconstruct_aligned(lfca.align_spectra(spec_r, spec_t, alpha, beta), grid, residue_tol=None)
        f_rx = lfca.cross_attend(pyr_r[s], f_align, params, s)
        f_tx = lfca.cross_attend(pyr_t[s], f_align, params, s)
        g = lfgm.project_guidance(lfgm.guidance_vectors(spec_r, spec_t), grid)
        out = fgsa.fgsa_forward(pyr_r[s], pyr_t[s], f_rx, f_tx, g, params, s)
        np.testing.assert_array_equal(res.fused[s].data, out.fused)
        np.testing.assert_array_equal(res.aligned[s].data[:, :, 0], f_align.astype(np.float32))
        np.testing.assert_array_equal(res.guidance[s].data, g)


def test_pyramid_dims_match(small_pair, params):
    res = pipeline.run(*small_pair, params)
    assert res.n_scales == 4
    for s in range(4):
        hw = (64 >> s, 80 >> s)
        assert res.fused[s].data.shape == (*hw, 16)
        assert res.guidance[s].data.shape == (*hw, 6)
        assert res.aligned[s].data.shape == (*hw, 1)
        assert res.offsets[s].shape == (*hw, 18)
    assert {"backbone", "total", "scale0.lfca", "scale3.fgsa"} <= set(res.timing_ms)


def test_fewer_scales(small_pair, params):
    res = pipeline.run(*small_pair, params, Config(scales=2))
    assert res.n_scales == 2


def test_size_mismatch_mentions_registration(params):
    with pytest.raises(ValueError, match="register"):
        pipeline.run(np.zeros((64, 64, 3)), np.zeros((64, 72)), params)
    with pytest.raises(ValueError, match="single-channel"):
        pipeline.run(np.zeros((64, 64, 3)), np.zeros((64, 64, 2)), params)


def test_threads_do_not_change_results(small_pair, params):
    a = pipeline.run(*small_pair, params, threads=1)
    b = pipeline.run(*small_pair, params, threads=4)
    for s in range(4):
        np.testing.assert_array_equal(a.fused[s].data, b.fused[s].data)


def test_export_roundtrip(tmp_path, small_pair, params):
    res = pipeline.run(*small_pair, params)
    out = tmp_path / "new" / "dir"
    manifest = pipeline.export(res, out, Config())
    assert out.is_dir()
    back = pipeline.load_features(manifest)
    assert len(back) == 4
    for s in range(4):
        assert back[s].dtype == np.float32
        assert back[s].tobytes() == res.fused[s].data.tobytes()
    meta = json.loads(manifest.read_text())
    assert meta["metadata"]["scales"] == 4 and meta["metadata"]["channels"] == 16
    assert len(list((out / "guidance").glob("*.png"))) == 24
    assert (out / "timing.json").is_file()
    assert (out / "config.txt").read_text() == Config().to_text()


def test_export_is_deterministic(tmp_path, small_pair, params):
    for name in ("a", "b"):
        pipeline.export(pipeline.run(*small_pair, params), tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        if rel.name != "timing.json":
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_features_in_bypass(tmp_path, small_pair, params):
    rgb, thermal = small_pair
    pyr_r = backbone.extract_features(rgb, params, "rgb")
    pyr_t = backbone.extract_features(thermal, params, "thermal")
    entries = {f"features.rgb.{s}": f for s, f in enumerate(pyr_r)}
    entries.update({f"features.thermal.{s}": f for s, f in enumerate(pyr_t)})
    from lfbnet.tensor_core import ParamStore

    path = ParamStore(entries).save(tmp_path / "feat.json")
    feats = pipeline.load_feature_pyramids(path)
    a = pipeline.run(rgb, thermal, params, features=feats)
    b = pipeline.run(rgb, thermal, params)
    for s in range(4):
        np.testing.assert_array_equal(a.fused[s].data, b.fused[s].data)


def test_config_loading(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\npatch_size = 8\nstride=4\n\ncutoff_rho=0.3  # inline\n")
    cfg = pipeline.load_config(p, {"stride": 2, "k_s": None})
    assert (cfg.patch_size, cfg.stride, cfg.cutoff_rho, cfg.k_s) == (8, 2, 0.3, 9)
    assert pipeline.load_config() == Config()
    p.write_text("bogus=1\n")
    with pytest.raises(ConfigError, match="unknown"):
        pipeline.load_config(p)
    p.write_text("stride=2.5\n")
    with pytest.raises(ConfigError, match="parse"):
        pipeline.load_config(p)
    p.write_text("stride\n")
    with pytest.raises(ConfigError, match="key=value"):
        pipeline.load_config(p)
    with pytest.raises(ConfigError):
        Config(k_s=8)
    with pytest.raises(ConfigError):
        Config(scales=5)


def test_config_text_roundtrip(tmp_path):
    cfg = Config(patch_size=32, stride=16, eps=1e-5)
    p = tmp_path / "c.txt"
    p.write_text(cfg.to_text())
    assert pipeline.load_config(p) == cfg


def test_init_params_is_seeded():
    a, b = pipeline.init_params(seed=7), pipeline.init_params(seed=7)
    assert a.entries.keys() == b.entries.keys()
    for k in a.entries:
        np.testing.assert_array_equal(a[k], b[k])
    assert not np.any(a["fgsa.offset_proj.0"])
    assert a["fgsa.w_k.0"].shape == (9, 16)
