import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfbnet import lfgm, spectral
from lfbnet.spectral import PatchGrid

from oracles import accumulate_explicit, dft2_bruteforce, guidance_loops


def test_phase_difference_examples(rng):
    a = rng.uniform(-np.pi, np.pi, (8, 8))
    assert not np.any(lfgm.phase_difference(a, a))
    assert abs(lfgm.phase_difference(np.pi - 0.1, -np.pi + 0.1) + 0.2) < 1e-12
    b = rng.uniform(-np.pi, np.pi, (8, 8))
    np.testing.assert_allclose(lfgm.phase_difference(a, b), -lfgm.phase_difference(b, a), atol=1e-12)


def test_band_energy_examples():
    e_hf, e_lf = lfgm.band_energies(spectral.fft2d(np.full((8, 8), 0.5)))
    assert e_hf == 0 and e_lf > 0
    imp = np.zeros((8, 8))
    imp[0, 0] = 1
    e_hf, e_lf = lfgm.band_energies(spectral.fft2d(imp))
    assert abs(e_hf - 1) < 1e-12 and abs(e_lf - 1) < 1e-12
    checker = (-1.0) ** np.add.outer(np.arange(8), np.arange(8))
    spec = dft2_bruteforce(checker)
    e_hf, e_lf = lfgm.band_energies(spec)
    n_hf = int((~lfgm.band_mask(8, 0.25)).sum())
    assert abs(e_lf) < 1e-20
    assert abs(e_hf - 64.0**2 / n_hf) < 1e-6


def test_band_mask_geometry():
    low = lfgm.band_mask(16, 0.25)
    assert low[0, 0] and low[0, 4] and low[0, -4] and not low[0, 5] and not low[8, 8]
    with pytest.raises(ValueError):
        lfgm.band_mask(16, 1.5)


def test_reliability_examples():
    assert lfgm.reliability(2.0, 2.0, 1.0, 1.0)[0] == 0.5
    assert lfgm.reliability(3.0, 1.0, 1.0, 1.0)[0] == 0.75
    assert lfgm.reliability(1.0, 1.0, 1.0, 3.0)[1] == 0.75
    assert lfgm.reliability(0.0, 0.0, 0.0, 0.0) == (0.5, 0.5)
    with pytest.raises(ValueError):
        lfgm.reliability(-1.0, 1.0, 1.0, 1.0)


def test_coherence_examples(rng):
    f = spectral.fft2d(rng.standard_normal((8, 8)))
    assert abs(lfgm.coherence(f, f) - 1) < 1e-6
    assert abs(lfgm.coherence(f, 3.5 * f) - 1) < 1e-6
    assert lfgm.coherence(f, np.zeros_like(f)) == 0.0
    tex = rng.standard_normal((8, 8))
    fr, ft = dft2_bruteforce(tex), dft2_bruteforce(np.roll(tex, (1, 2), (0, 1)))
    assert abs(lfgm.coherence(fr, ft) - guidance_loops(fr, ft)[5]) < 1e-9


def test_displacement_examples():
    assert lfgm.displacement(np.zeros((8, 8))) == (0.0, 1.0, 0.0)
    d = lfgm.displacement(np.full((8, 8), np.pi / 2))
    np.testing.assert_allclose(d, (1, 0, np.pi / 2), atol=1e-12)
    half = np.where(np.arange(64).reshape(8, 8) % 2, np.pi / 2, -np.pi / 2)
    np.testing.assert_allclose(lfgm.displacement(half), (0, 0, np.pi / 2), atol=1e-12)


def test_guidance_vector_examples(rng):
    f = spectral.fft2d(rng.standard_normal((16, 16)))
    v = lfgm.guidance_vector(f, f).as_array()
    np.testing.assert_allclose(v, [0, 1, 0, 0.5, 0.5, 1], atol=1e-6)
    g = lfgm.guidance_vector(np.zeros_like(f), f)
    assert (g.c_hf, g.c_lf, g.coh) == (0.0, 1.0, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_guidance_vector_matches_loops(seed):
    r = np.random.default_rng(seed)
    tex = r.standard_normal((8, 8))
    fr = dft2_bruteforce(tex)
    ft = dft2_bruteforce(0.7 * np.roll(tex, (0, 2), (0, 1)) + 0.1 * r.standard_normal((8, 8)))
    np.testing.assert_allclose(lfgm.guidance_vector(fr, ft).as_array(), guidance_loops(fr, ft), atol=1e-9)


def test_bounds_over_1000_pairs(rng):
    fr = spectral.fft2d(rng.standard_normal((1000, 16, 16)) * rng.uniform(0, 3, (1000, 1, 1)))
    ft = spectral.fft2d(rng.standard_normal((1000, 16, 16)))
    v = lfgm.guidance_vectors(fr, ft)
    d_x, d_y, s_phi, c_hf, c_lf, coh = v.T
    assert np.all(d_x**2 + d_y**2 <= 1 + 1e-6)
    assert np.all((s_phi >= 0) & (s_phi <= np.pi))
    for c in (c_hf, c_lf, coh):
        assert np.all((c >= 0) & (c <= 1))


@given(seed=st.integers(0, 10_000))
def test_coherence_symmetry_and_reliability_complement(seed):
    r = np.random.default_rng(seed)
    fa = spectral.fft2d(r.standard_normal((16, 16)))
    fb = spectral.fft2d(r.standard_normal((16, 16)))
    assert abs(lfgm.coherence(fa, fb) - lfgm.coherence(fb, fa)) < 1e-7
    ea, eb = lfgm.band_energies(fa), lfgm.band_energies(fb)
    c_ab = lfgm.reliability(ea[0], eb[0], ea[1], eb[1])
    c_ba = lfgm.reliability(eb[0], ea[0], eb[1], ea[1])
    assert abs(c_ab[0] + c_ba[0] - 1) < 1e-7
    assert abs(c_ab[1] + c_ba[1] - 1) < 1e-7


def test_project_constant_vector():
    grid = PatchGrid(37, 29)
    v = np.tile(np.arange(6.0), (grid.n_patches, 1))
    out = lfgm.project_guidance(v, grid)
    assert out.shape == (37, 29, 6)
    np.testing.assert_allclose(out, np.broadcast_to(np.arange(6.0), out.shape), atol=1e-6)


def test_project_two_covering_patches():
    grid = PatchGrid(16, 24)  # two patches, overlapping on columns 8..15
    v = np.zeros((2, 6))
    v[1, 2] = np.pi
    out = lfgm.project_guidance(v, grid)
    assert abs(out[5, 10, 2] - np.pi / 2) < 1e-6
    assert out[5, 2, 2] == 0 and abs(out[5, 20, 2] - np.pi) < 1e-6


def test_project_matches_explicit_accumulation(rng):
    grid = PatchGrid(32, 32)
    v = rng.standard_normal((grid.n_patches, 6))
    np.testing.assert_allclose(lfgm.project_guidance(v, grid), accumulate_explicit(v, grid), atol=1e-6)
    odd = PatchGrid(21, 27)
    v = rng.standard_normal((odd.n_patches, 6))
    np.testing.assert_allclose(lfgm.project_guidance(v, odd), accumulate_explicit(v, odd), atol=1e-6)


def test_project_preserves_weighted_mean(rng):
    grid = PatchGrid(48, 32)
    v = rng.standard_normal((grid.n_patches, 6))
    out = lfgm.project_guidance(v, grid).astype(np.float64)
    lhs = np.einsum("hw,hwc->c", grid.count_map, out) / grid.count_map.sum()
    np.testing.assert_allclose(lhs, v.mean(axis=0), atol=1e-5)


def test_project_count_mismatch():
    with pytest.raises(ValueError):
        lfgm.project_guidance(np.zeros((3, 6)), PatchGrid(32, 32))
