"""Synthetic RGB-thermal pairs with a known misalignment and target boxes.

Everything is driven by a counter-based SplitMix64 stream so the same seed
gives the same bytes on any platform (and in any language that implements
the ten-line mixer below).

The thermal image is a radiometrically scaled, shifted copy of the RGB luma:

    thermal(y, x) = gain * luma(y - dy, x - dx) + sigma * n(y, x)

so sampling the thermal image at ``p + (dx, dy)`` recovers the luma at ``p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .backbone import luma
from .metrics import BBox
from .tensor_core import FeatureMap, as_hwc

__all__ = [
    "TEXTURES",
    "SplitMix64",
    "SynthConfig",
    "SynthPair",
    "generate_pair",
    "warp_shift",
    "oracle_offsets",
    "estimate_shift",
    "interior_mask",
    "alignment_error",
]

TEXTURES = ("perlin-like", "checker", "blobs")

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Counter-based SplitMix64: value i is ``mix(seed + (i + 1) * gamma)``.

    Draws advance an internal counter, so a stream is reproduced exactly by
    replaying the same sequence of calls.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _MASK64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = np.uint64(int(seed))
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = self.seed + idx * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in [low, high) from the top 53 bits."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals by Box-Muller (two uniforms per value)."""
        u1 = self.uniform(shape)
        u2 = self.uniform(shape)
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high)."""
        return (low + np.floor(self.uniform(shape) * (high - low))).astype(np.int64)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    size: tuple[int, int] = (128, 128)
    shift: tuple[float, float] = (2.0, 0.0)
    intensity_gain: float = 1.0
    noise_sigma: float = 0.0
    texture: str = "perlin-like"
    n_targets: int = 3
    target_size_range: tuple[int, int] = (4, 12)

    def __post_init__(self):
        h, w = self.size
        if h < 16 or w < 16:
            raise ValueError(f"size must be at least 16x16, got {self.size}")
        dx, dy = self.shift
        if not (math.isfinite(dx) and math.isfinite(dy)) or math.hypot(dx, dy) >= min(h, w) / 4:
            raise ValueError(f"shift {self.shift} must be finite with magnitude below {min(h, w) / 4:g}")
        if not self.intensity_gain > 0:
            raise ValueError(f"intensity_gain must be > 0, got {self.intensity_gain}")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}, got {self.texture!r}")
        if self.n_targets < 0:
            raise ValueError("n_targets must be >= 0")
        lo, hi = self.target_size_range
        if not 2 <= lo <= hi < min(h, w) // 2:
            raise ValueError(f"target_size_range {self.target_size_range} must satisfy 2 <= lo <= hi < {min(h, w) // 2}")


@dataclass(frozen=True)
class SynthPair:
    rgb: np.ndarray
    thermal: np.ndarray
    true_shift: tuple[float, float]
    boxes: tuple[BBox, ...]


def _smooth_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    # smoothstep interpolation of a coarse lattice (value noise)
    gh, gw = grid.shape
    ys = np.linspace(0, gh - 1, h, endpoint=False)
    xs = np.linspace(0, gw - 1, w, endpoint=False)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    ty, tx = ys - y0, xs - x0
    ty, tx = ty * ty * (3 - 2 * ty), tx * tx * (3 - 2 * tx)
    y1, x1 = np.minimum(y0 + 1, gh - 1), np.minimum(x0 + 1, gw - 1)
    top = grid[np.ix_(y0, x0)] * (1 - tx) + grid[np.ix_(y0, x1)] * tx
    bot = grid[np.ix_(y1, x0)] * (1 - tx) + grid[np.ix_(y1, x1)] * tx
    return top * (1 - ty)[:, None] + bot * ty[:, None]


def _texture(rng: SplitMix64, kind: str, h: int, w: int) -> np.ndarray:
    if kind == "perlin-like":
        out = np.zeros((h, w))
        amp, total = 1.0, 0.0
        for cells in (4, 8, 16, 32):
            out += amp * _smooth_upsample(rng.uniform((cells + 1, cells + 1)), h, w)
            total += amp
            amp *= 0.5
        return out / total
    if kind == "checker":
        cell = int(rng.integers(6, 17))
        yy, xx = np.mgrid[0:h, 0:w]
        board = ((yy // cell + xx // cell) % 2).astype(np.float64)
        return 0.35 + 0.3 * board + 0.05 * _smooth_upsample(rng.uniform((9, 9)), h, w)
    out = np.full((h, w), 0.3)
    yy, xx = np.mgrid[0:h, 0:w]
    n = int(rng.integers(8, 20))
    cy, cx = rng.uniform((n,), 0, h), rng.uniform((n,), 0, w)
    rad = rng.uniform((n,), 3, max(4.0, min(h, w) / 6))
    amp = rng.uniform((n,), -0.25, 0.25)
    for i in range(n):
        out += amp[i] * np.exp(-((yy - cy[i]) ** 2 + (xx - cx[i]) ** 2) / (2 * rad[i] ** 2))
    return out


def warp_shift(image, shift) -> np.ndarray:
    """``out(y, x) = image(y - dy, x - dx)`` by bilinear resampling with reflect padding."""
    img = np.asarray(image, dtype=np.float64)
    dx, dy = shift
    if dx == 0 and dy == 0:
        return img.copy()
    yy, xx = np.mgrid[0 : img.shape[0], 0 : img.shape[1]].astype(np.float64)
    # scipy "mirror" is the edge-excluding reflection, same as np.pad(mode="reflect")
    return ndimage.map_coordinates(img, [yy - dy, xx - dx], order=1, mode="mirror")


def generate_pair(cfg: SynthConfig) -> SynthPair:
    """Textured background, a few small bright targets, and the shifted thermal view.

    Target contrast is drawn from [0.03, 0.45] so some targets are nearly
    camouflaged. Boxes are the ``size x size`` squares centred on each target.
    """
    h, w = cfg.size
    rng = SplitMix64(cfg.seed)
    base = _texture(rng, cfg.texture, h, w)
    tint = rng.uniform((3,), 0.85, 1.15)
    rgb = np.clip(base[:, :, None] * tint, 0.0, 1.0)

    yy, xx = np.mgrid[0:h, 0:w]
    lo, hi = cfg.target_size_range
    boxes = []
    for _ in range(cfg.n_targets):
        size = int(rng.integers(lo, hi + 1))
        cx = float(rng.uniform((), size, w - size))
        cy = float(rng.uniform((), size, h - size))
        contrast = float(rng.uniform((), 0.03, 0.45))
        sigma = size / 4.0
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        rgb = rgb + contrast * blob[:, :, None] * (1.0 - rgb)
        boxes.append(BBox(cx - size / 2, cy - size / 2, float(size), float(size)))

    rgb = np.clip(rgb, 0.0, 1.0)
    thermal = cfg.intensity_gain * warp_shift(luma(rgb), cfg.shift)
    if cfg.noise_sigma > 0:
        thermal = thermal + cfg.noise_sigma * rng.normal((h, w))
    return SynthPair(rgb, thermal, (float(cfg.shift[0]), float(cfg.shift[1])), tuple(boxes))


def oracle_offsets(shape, shift, k_s: int = 9) -> np.ndarray:
    """Offset field that undoes ``shift`` for every lattice tap: (H, W, 2K) of (dx, dy)."""
    h, w = shape[:2]
    field = np.empty((h, w, 2 * k_s), dtype=np.float32)
    field[:, :, 0::2] = shift[0]
    field[:, :, 1::2] = shift[1]
    return field


def estimate_shift(reference, moved, max_lag: int = 4) -> tuple[int, int]:
    """Integer (dx, dy) maximizing the correlation of ``moved(p + lag)`` with ``reference(p)``.

    Exhaustive search over ``|dx|, |dy| <= max_lag`` on the interior that
    every lag keeps in bounds; both maps are standardized first.
    """
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(moved, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"need two equal-size 2-D maps, got {a.shape} and {b.shape}")
    m = max_lag
    h, w = a.shape
    if min(h, w) <= 2 * m + 1:
        raise ValueError(f"maps of size {h}x{w} are too small for max_lag={m}")
    ref = a[m : h - m, m : w - m]
    ref = (ref - ref.mean()) / (ref.std() + 1e-12)
    best, best_lag = -np.inf, (0, 0)
    for dy in range(-m, m + 1):
        for dx in range(-m, m + 1):
            win = b[m + dy : h - m + dy, m + dx : w - m + dx]
            score = float(np.mean(ref * (win - win.mean()) / (win.std() + 1e-12)))
            if score > best:
                best, best_lag = score, (dx, dy)
    return best_lag


def interior_mask(shape, margin: int) -> np.ndarray:
    h, w = shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    mask[margin : h - margin, margin : w - margin] = True
    return mask


def alignment_error(warped, reference, mask=None) -> float:
    """Mean absolute difference over ``mask`` (all pixels when omitted)."""
    a = as_hwc(warped.data if isinstance(warped, FeatureMap) else warped).astype(np.float64)
    b = as_hwc(reference.data if isinstance(reference, FeatureMap) else reference).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"maps differ in shape: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match map size {a.shape[:2]}")
    if not mask.any():
        raise ValueError("mask selects no pixels")
    return float(np.abs(a - b)[mask].mean())
