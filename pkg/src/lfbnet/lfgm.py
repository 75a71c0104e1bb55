"""Local frequency guidance: a six-number summary of how two patch spectra disagree.

For each patch pair the vector holds

    [d_x, d_y, S_phi, C_hf, C_lf, Coh]

where (d_x, d_y) are the circular-mean sin/cos of the wrapped phase
difference, S_phi its mean absolute value, C_hf / C_lf the band-energy
reliabilities and Coh the cross-spectral coherence. Patch vectors are spread
back onto pixels by averaging over covering patches.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass
from functools import lru_cache

import numpy as np

from . import spectral
from .spectral import PatchGrid

__all__ = [
    "CHANNELS",
    "GuidanceVector",
    "phase_difference",
    "band_mask",
    "band_energies",
    "reliability",
    "coherence",
    "displacement",
    "guidance_vector",
    "guidance_vectors",
    "project_guidance",
]

CHANNELS = ("d_x", "d_y", "s_phi", "c_hf", "c_lf", "coh")


@dataclass(frozen=True)
class GuidanceVector:
    d_x: float
    d_y: float
    s_phi: float
    c_hf: float
    c_lf: float
    coh: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def phase_difference(phase_r, phase_t):
    return spectral.wrap(np.asarray(phase_r, dtype=np.float64) - np.asarray(phase_t, dtype=np.float64))


@lru_cache(maxsize=None)
def band_mask(patch_size: int, cutoff: float = 0.25) -> np.ndarray:
    """Boolean low-band mask over the unshifted P x P FFT layout.

    A bin is low-frequency when its signed-offset radius, normalized by P/2,
    is at most ``2 * cutoff``.
    """
    if not 0.0 < cutoff < 1.0:
        raise ValueError(f"cutoff must lie in (0, 1), got {cutoff}")
    f = np.fft.fftfreq(patch_size) * patch_size
    radius = np.hypot(f[:, None], f[None, :]) / (patch_size / 2)
    low = radius <= 2.0 * cutoff
    if low.all() or not low.any():
        raise ValueError(f"cutoff {cutoff} leaves an empty band for P={patch_size}")
    low.setflags(write=False)
    return low


def _power(spec):
    spec = np.asarray(spec, dtype=np.complex128)
    return spec.real * spec.real + spec.imag * spec.imag


def band_energies(spec, cutoff: float = 0.25):
    """Mean power in the high and low bands, returned as ``(E_hf, E_lf)``."""
    power = _power(spec)
    low = band_mask(power.shape[-1], float(cutoff))
    e_lf = power[..., low].mean(axis=-1)
    e_hf = power[..., ~low].mean(axis=-1)
    return e_hf, e_lf


def _ratio(num, other):
    num = np.asarray(num, dtype=np.float64)
    den = num + np.asarray(other, dtype=np.float64)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.5)


def reliability(e_r_hf, e_t_hf, e_r_lf, e_t_lf):
    """Band reliabilities ``(C_hf, C_lf)``.

    C_hf is the RGB share of high-band energy and C_lf the thermal share of
    low-band energy. A band empty in both modalities scores 0.5.
    """
    for e in (e_r_hf, e_t_hf, e_r_lf, e_t_lf):
        if np.any(np.asarray(e) < 0):
            raise ValueError("band energies must be non-negative")
    c_hf = _ratio(e_r_hf, e_t_hf)
    c_lf = _ratio(e_t_lf, e_r_lf)
    if c_hf.ndim == 0:
        return float(c_hf), float(c_lf)
    return c_hf, c_lf


def coherence(spec_r, spec_t):
    """Normalized cross-spectrum magnitude over each patch, in [0, 1].

    Zero when either spectrum is identically zero.
    """
    fr = np.asarray(spec_r, dtype=np.complex128)
    ft = np.asarray(spec_t, dtype=np.complex128)
    if fr.shape != ft.shape:
        raise ValueError(f"spectrum shapes differ: {fr.shape} vs {ft.shape}")
    axes = (-2, -1)
    # cross term written out so identical inputs give an imaginary part of exactly 0
    cross_re = np.sum(fr.real * ft.real + fr.imag * ft.imag, axis=axes)
    cross_im = np.sum(fr.imag * ft.real - fr.real * ft.imag, axis=axes)
    p_r = np.sum(_power(fr), axis=axes)
    p_t = np.sum(_power(ft), axis=axes)
    den = np.sqrt(p_r * p_t)
    safe = np.where(den > 0, den, 1.0)
    coh = np.where(den > 0, np.clip(np.hypot(cross_re, cross_im) / safe, 0.0, 1.0), 0.0)
    return float(coh) if coh.ndim == 0 else coh


def displacement(dphi):
    """Circular-mean orientation and mean absolute size of a phase-difference patch.

    Returns ``(mean sin, mean cos, mean |dphi|)`` over the last two axes.
    """
    dphi = np.asarray(dphi, dtype=np.float64)
    axes = (-2, -1)
    d_x = np.mean(np.sin(dphi), axis=axes)
    d_y = np.mean(np.cos(dphi), axis=axes)
    s_phi = np.mean(np.abs(dphi), axis=axes)
    if d_x.ndim == 0:
        return float(d_x), float(d_y), float(s_phi)
    return d_x, d_y, s_phi


def guidance_vectors(spec_r, spec_t, cutoff: float = 0.25) -> np.ndarray:
    """Stack of guidance vectors, shape (n, 6), for paired spectrum stacks."""
    spec_r = np.asarray(spec_r, dtype=np.complex128)
    spec_t = np.asarray(spec_t, dtype=np.complex128)
    if spec_r.shape != spec_t.shape:
        raise ValueError(f"spectrum stacks differ: {spec_r.shape} vs {spec_t.shape}")
    _, ph_r = spectral.decompose(spec_r)
    _, ph_t = spectral.decompose(spec_t)
    d_x, d_y, s_phi = displacement(phase_difference(ph_r, ph_t))
    er_hf, er_lf = band_energies(spec_r, cutoff)
    et_hf, et_lf = band_energies(spec_t, cutoff)
    c_hf, c_lf = reliability(er_hf, et_hf, er_lf, et_lf)
    coh = coherence(spec_r, spec_t)
    return np.stack(np.broadcast_arrays(d_x, d_y, s_phi, c_hf, c_lf, coh), axis=-1)


def guidance_vector(spec_r, spec_t, cutoff: float = 0.25) -> GuidanceVector:
    """Guidance vector for one P x P spectrum pair."""
    v = guidance_vectors(np.asarray(spec_r)[None], np.asarray(spec_t)[None], cutoff)[0]
    return GuidanceVector(*map(float, v))


def project_guidance(vectors, grid: PatchGrid) -> np.ndarray:
    """Spread per-patch vectors onto pixels; each pixel gets the covering-patch mean.

    Returns an (H, W, C) float32 map, C = vector length (6 for guidance).
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != grid.n_patches:
        raise ValueError(f"expected ({grid.n_patches}, C) patch vectors, got shape {v.shape}")
    p = grid.patch_size
    per_pixel = np.broadcast_to(v.reshape(grid.rows, grid.cols, 1, 1, -1), (grid.rows, grid.cols, p, p, v.shape[1]))
    acc = spectral.accumulate_patches(per_pixel, grid)
    return (acc / grid.count_map[:, :, None]).astype(np.float32)
