"""Patch tiling, per-patch 2-D FFT and amplitude/phase handling.

Spectra are plain ``complex128`` arrays; batched patch stacks have shape
``(n_patches, P, P)`` and every routine here accepts arbitrary leading axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

__all__ = [
    "SUPPORTED_PATCH_SIZES",
    "PatchGrid",
    "SpectralResidueError",
    "partition",
    "fft2d",
    "ifft2d",
    "decompose",
    "compose",
    "wrap",
    "overlap_add",
    "accumulate_patches",
    "local_spectra",
]

SUPPORTED_PATCH_SIZES = (8, 16, 32)


class SpectralResidueError(ValueError):
    """Inverse transform left an imaginary part too large to be rounding noise."""


# --------------------------------------------------------------------------
# radix-2 FFT


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def _fft_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Radix-2 decimation-in-time FFT along ``axis`` (-1 or -2)."""
    n = x.shape[axis]
    if n & (n - 1) or n == 0:
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    y = np.take(x, _bit_reverse(n), axis=axis).astype(np.complex128, copy=False)
    # view the transform axis as (n,) followed by a trailing block of length t
    t = 1 if axis == -1 else y.shape[-1]
    lead = y.shape[: y.ndim + axis]
    m = 2
    while m <= n:
        half = m // 2
        blocks = y.reshape(*lead, n // m, m, t)
        even = blocks[..., :half, :]
        odd = blocks[..., half:, :] * _twiddles(m)[:, None]
        y = np.concatenate((even + odd, even - odd), axis=-2)
        m *= 2
    return y.reshape(x.shape)


def fft2d(patch) -> np.ndarray:
    """Unnormalized forward 2-D DFT over the last two axes.

    The DC bin equals the patch sum. Both trailing dimensions must be powers
    of two.
    """
    x = np.asarray(patch)
    return _fft_axis(_fft_axis(x, -1), -2)


def ifft2d(spec, *, residue_tol: float = 1e-4, return_residue: bool = False):
    """Inverse 2-D DFT (1/P^2 normalization), returning the real part.

    Raises :class:`SpectralResidueError` when any patch's largest imaginary
    magnitude exceeds ``residue_tol`` times its largest real magnitude, which
    means the spectrum was not conjugate-symmetric. Pass ``residue_tol=None``
    to skip the check. With ``return_residue`` the per-patch residue ratio is
    returned too.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    p, q = spec.shape[-2:]
    x = np.conj(fft2d(np.conj(spec))) / (p * q)
    max_re = np.abs(x.real).max(axis=(-2, -1))
    max_im = np.abs(x.imag).max(axis=(-2, -1))
    ratio = np.where(max_re > 0, max_im / np.where(max_re > 0, max_re, 1.0), np.where(max_im > 0, np.inf, 0.0))
    if residue_tol is not None and np.any(ratio > residue_tol):
        raise SpectralResidueError(
            f"imaginary residue {float(np.max(ratio)):.3g} of real magnitude exceeds {residue_tol:g}; "
            "spectrum is not conjugate-symmetric"
        )
    if return_residue:
        return x.real, ratio
    return x.real


def decompose(spec):
    """Split a spectrum into amplitude and phase in [-pi, pi].

    Phase is 0 at zero-modulus bins.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    amplitude = np.hypot(spec.real, spec.imag)
    phase = np.arctan2(spec.imag, spec.real)
    phase = np.where(amplitude == 0, 0.0, phase)
    return amplitude, phase


def compose(amplitude, phase) -> np.ndarray:
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise ValueError(f"amplitude shape {amplitude.shape} != phase shape {phase.shape}")
    if np.any(amplitude < 0):
        raise ValueError("amplitude must be non-negative")
    out = np.empty(amplitude.shape, dtype=np.complex128)
    out.real = amplitude * np.cos(phase)
    out.imag = amplitude * np.sin(phase)
    return out


def wrap(angle):
    """Map angles into [-pi, pi) modulo 2*pi."""
    a = np.asarray(angle, dtype=np.float64)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# patch tiling


@dataclass(frozen=True)
class PatchGrid:
    """Overlapping P x P tiling of an H x W image.

    Patch origins start at the top-left pixel and advance by ``stride``. The
    bottom/right border is reflect-padded so the last row/column of patches
    covers the image edge; every pixel is covered by at least one patch.
    Patch ``q`` is numbered row-major over the ``(rows, cols)`` origin grid.
    """

    height: int
    width: int
    patch_size: int = 16
    stride: int = 8

    def __post_init__(self):
        if self.patch_size not in SUPPORTED_PATCH_SIZES:
            raise ValueError(f"patch_size must be one of {SUPPORTED_PATCH_SIZES}, got {self.patch_size}")
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError(f"stride must be in [1, {self.patch_size}], got {self.stride}")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image size must be positive, got {self.height}x{self.width}")

    def _count(self, length: int) -> int:
        return math.ceil(max(length - self.patch_size, 0) / self.stride) + 1

    @property
    def rows(self) -> int:
        return self._count(self.height)

    @property
    def cols(self) -> int:
        return self._count(self.width)

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    @property
    def padded_shape(self) -> tuple[int, int]:
        p, s = self.patch_size, self.stride
        return (self.rows - 1) * s + p, (self.cols - 1) * s + p

    def origin(self, q: int) -> tuple[int, int]:
        """Top-left (row, col) pixel of patch ``q``."""
        if not 0 <= q < self.n_patches:
            raise IndexError(f"patch index {q} out of range [0, {self.n_patches})")
        r, c = divmod(q, self.cols)
        return r * self.stride, c * self.stride

    def _coverage_1d(self, length: int, n: int) -> np.ndarray:
        starts = np.arange(n) * self.stride
        pos = np.arange(length)[:, None]
        return ((pos >= starts) & (pos < starts + self.patch_size)).sum(axis=1)

    @cached_property
    def count_map(self) -> np.ndarray:
        """Number of patches covering each image pixel, shape (H, W)."""
        cy = self._coverage_1d(self.height, self.rows)
        cx = self._coverage_1d(self.width, self.cols)
        out = np.outer(cy, cx)
        out.setflags(write=False)
        return out


def _check_grid(shape, grid: PatchGrid):
    if tuple(shape) != (grid.height, grid.width):
        raise ValueError(f"map is {shape[0]}x{shape[1]} but grid was built for {grid.height}x{grid.width}")


def partition(image, grid: PatchGrid) -> np.ndarray:
    """Cut a single-channel map into the grid's patches, shape (n, P, P)."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim != 2:
        raise ValueError(f"partition expects a single-channel map, got shape {x.shape}")
    _check_grid(x.shape, grid)
    ph, pw = grid.padded_shape
    x = np.pad(x, ((0, ph - grid.height), (0, pw - grid.width)), mode="reflect")
    p, s = grid.patch_size, grid.stride
    win = np.lib.stride_tricks.sliding_window_view(x, (p, p))[::s, ::s]
    return win.reshape(grid.n_patches, p, p).copy()


def accumulate_patches(values: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Sum per-patch contributions ``(rows, cols, P, P, C)`` onto the padded canvas."""
    p, s = grid.patch_size, grid.stride
    rows, cols = grid.rows, grid.cols
    ph, pw = grid.padded_shape
    c = values.shape[-1]
    acc = np.zeros((ph, pw, c), dtype=np.float64)
    if p % s == 0:
        k = p // s
        for a in range(k):
            for b in range(k):
                block = values[:, :, a * s : (a + 1) * s, b * s : (b + 1) * s, :]
                block = block.transpose(0, 2, 1, 3, 4).reshape(rows * s, cols * s, c)
                acc[a * s : a * s + rows * s, b * s : b * s + cols * s] += block
    else:
        for r in range(rows):
            for cc in range(cols):
                acc[r * s : r * s + p, cc * s : cc * s + p] += values[r, cc]
    return acc[: grid.height, : grid.width]


def overlap_add(patches, grid: PatchGrid) -> np.ndarray:
    """Average overlapping patches back into an (H, W) map.

    Each pixel becomes the mean of the values every covering patch holds at
    that position; contributions landing in the border padding are dropped.
    """
    patches = np.asarray(patches, dtype=np.float64)
    p = grid.patch_size
    if patches.shape != (grid.n_patches, p, p):
        raise ValueError(f"expected {grid.n_patches} patches of {p}x{p}, got array of shape {patches.shape}")
    vals = patches.reshape(grid.rows, grid.cols, p, p, 1)
    return accumulate_patches(vals, grid)[:, :, 0] / grid.count_map


def local_spectra(image, grid: PatchGrid) -> np.ndarray:
    """Per-patch spectra of a single-channel map, shape (n, P, P) complex."""
    return fft2d(partition(image, grid))
