"""Frequency-guided spatial alignment.

The guidance map is gated by the enhanced features, a small conv stack turns
features + gated guidance into per-pixel sampling offsets, both modalities
are resampled with a deformable 3x3 lattice, and the results are fused
crosswise (RGB with warped thermal, thermal with warped RGB).

Offset fields are stored channel-last as (H, W, 2*K) with the per-pixel
layout ``(dx_1, dy_1, ..., dx_K, dy_K)`` in pixels; x is the column axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_core import ParamStore, as_hwc, conv2d, relu, sigmoid

__all__ = [
    "LATTICE_3X3",
    "square_lattice",
    "FGSAOutput",
    "gate",
    "predict_offsets",
    "bilinear_sample",
    "bilinear_grad",
    "deformable_sample",
    "fuse",
    "fgsa_forward",
]


def square_lattice(k_s: int) -> np.ndarray:
    """``k_s`` (dx, dy) offsets on a centred square grid, row-major."""
    side = math.isqrt(k_s)
    if side * side != k_s or side % 2 == 0:
        raise ValueError(f"k_s must be the square of an odd number, got {k_s}")
    r = side // 2
    return np.array([(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)], dtype=np.float64)


# index 4 is the centre tap
LATTICE_3X3 = square_lattice(9)


def _conv_params(params: ParamStore, name: str, shape=None):
    w = params.get(name, shape)
    b = params[f"{name}.bias"] if f"{name}.bias" in params else None
    return w, b


def _same_hw(*maps):
    shapes = [m.shape[:2] for m in maps]
    if len(set(shapes)) != 1:
        raise ValueError(f"spatial size mismatch: {shapes}")


def gate(f_r_x, f_t_x, g_freq, params: ParamStore, scale: int = 0) -> np.ndarray:
    """Sigmoid gate from the enhanced features, applied elementwise to the guidance."""
    fr, ft, g = as_hwc(f_r_x), as_hwc(f_t_x), as_hwc(g_freq)
    _same_hw(fr, ft, g)
    w, b = _conv_params(params, f"fgsa.gate_conv.{scale}", (1, 1, fr.shape[2] + ft.shape[2], g.shape[2]))
    logits = conv2d(np.concatenate([fr, ft], axis=2), w, b, dtype=np.float32).astype(np.float64)
    return (sigmoid(logits) * g).astype(np.float32)


def predict_offsets(f_r_x, f_t_x, g_tilde, params: ParamStore, scale: int = 0, clamp: float = 8.0) -> np.ndarray:
    """Offset field from two 3x3 conv + ReLU layers and a 1x1 projection, clamped to +-clamp px."""
    fr, ft, g = as_hwc(f_r_x), as_hwc(f_t_x), as_hwc(g_tilde)
    _same_hw(fr, ft, g)
    x = np.concatenate([fr, ft, g], axis=2)
    for layer in ("offset_conv1", "offset_conv2"):
        w, b = _conv_params(params, f"fgsa.{layer}.{scale}")
        x = relu(conv2d(x, w, b, dtype=np.float32))
    w, b = _conv_params(params, f"fgsa.offset_proj.{scale}")
    out = conv2d(x, w, b, dtype=np.float32)
    return np.clip(out, -clamp, clamp).astype(np.float32)


def _corners(x, y):
    x0 = np.floor(x)
    y0 = np.floor(y)
    return x0.astype(np.int64), y0.astype(np.int64), x - x0, y - y0


def _gather(f, xi, yi):
    h, w, _ = f.shape
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    flat = f.reshape(h * w, -1)
    idx = np.where(inside, yi * w + xi, 0)
    vals = np.take(flat, idx.ravel(), axis=0).reshape(*idx.shape, -1)
    return np.where(inside[..., None], vals, 0.0)


def bilinear_sample(feature, x, y) -> np.ndarray:
    """Bilinearly interpolate ``feature`` at column ``x``, row ``y``.

    ``x`` and ``y`` may be scalars or equal-shape arrays; the result has a
    trailing channel axis. Neighbours outside the map read as zero.
    """
    f = as_hwc(feature, np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0, y0, fx, fy = _corners(x, y)
    fx, fy = fx[..., None], fy[..., None]
    return (
        _gather(f, x0, y0) * (1 - fx) * (1 - fy)
        + _gather(f, x0 + 1, y0) * fx * (1 - fy)
        + _gather(f, x0, y0 + 1) * (1 - fx) * fy
        + _gather(f, x0 + 1, y0 + 1) * fx * fy
    )


def bilinear_grad(feature, x, y):
    """Partial derivatives of :func:`bilinear_sample` w.r.t. ``x`` and ``y``.

    At integer coordinates the right-hand derivative is returned.
    """
    f = as_hwc(feature, np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0, y0, fx, fy = _corners(x, y)
    fx, fy = fx[..., None], fy[..., None]
    v00 = _gather(f, x0, y0)
    v10 = _gather(f, x0 + 1, y0)
    v01 = _gather(f, x0, y0 + 1)
    v11 = _gather(f, x0 + 1, y0 + 1)
    dx = (v10 - v00) * (1 - fy) + (v11 - v01) * fy
    dy = (v01 - v00) * (1 - fx) + (v11 - v10) * fx
    return dx, dy


def deformable_sample(feature, offsets, weights, base=LATTICE_3X3) -> np.ndarray:
    """Depthwise deformable sampling.

    For every pixel p0 and tap k the map is read at ``p0 + base[k] + offset_k(p0)``
    (bilinear, zeros outside the map) and the K reads are summed with
    per-channel weights ``weights[k]``.

    Parameters
    ----------
    feature : (H, W, C) array
    offsets : (H, W, 2K) array
    weights : (K, C) array
    base : (K, 2) array of (dx, dy) lattice offsets
    """
    f = as_hwc(feature)
    off = np.asarray(offsets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    h, wd, c = f.shape
    k = base.shape[0]
    if off.shape != (h, wd, 2 * k):
        raise ValueError(f"offset field shape {off.shape} does not match {k} sampling points on a {h}x{wd} map")
    if w.shape != (k, c):
        raise ValueError(f"weights shape {w.shape} does not match K={k} taps and C={c} channels")
    # two-pixel zero border: clipping coordinates to [-1.5, size + 0.5] keeps
    # every corner index in range while far-away reads still land on zeros
    pw = wd + 4
    flat = np.pad(f, ((2, 2), (2, 2), (0, 0))).reshape(-1, c)
    rows, cols = np.mgrid[0:h, 0:wd].astype(np.float64)
    out = np.zeros((h * wd, c), dtype=np.float64)
    for t in range(k):
        if not np.any(w[t]):
            continue
        x = np.clip(cols + base[t, 0] + off[:, :, 2 * t], -1.5, wd + 0.5).ravel()
        y = np.clip(rows + base[t, 1] + off[:, :, 2 * t + 1], -1.5, h + 0.5).ravel()
        x0 = np.floor(x)
        y0 = np.floor(y)
        fx = (x - x0).astype(np.float32)[:, None]
        fy = (y - y0).astype(np.float32)[:, None]
        idx = (y0.astype(np.intp) + 2) * pw + (x0.astype(np.intp) + 2)
        top = flat[idx] * (1 - fx) + flat[idx + 1] * fx
        bottom = flat[idx + pw] * (1 - fx) + flat[idx + pw + 1] * fx
        out += w[t] * (top * (1 - fy) + bottom * fy)
    return out.reshape(h, wd, c).astype(np.float32)


def fuse(f_r, fh_t, f_t, fh_r, params: ParamStore, scale: int = 0) -> np.ndarray:
    """Sum of two 3x3 convs over ``[f_r, fh_t]`` and ``[f_t, fh_r]``."""
    maps = [as_hwc(m) for m in (f_r, fh_t, f_t, fh_r)]
    _same_hw(*maps)
    if len({m.shape[2] for m in maps}) != 1:
        raise ValueError(f"channel mismatch: {[m.shape for m in maps]}")
    c = maps[0].shape[2]
    w_rt, b_rt = _conv_params(params, f"fgsa.fuse_rt.{scale}", (3, 3, 2 * c, c))
    w_tr, b_tr = _conv_params(params, f"fgsa.fuse_tr.{scale}", (3, 3, 2 * c, c))
    a = conv2d(np.concatenate(maps[:2], axis=2), w_rt, b_rt, dtype=np.float32).astype(np.float64)
    b = conv2d(np.concatenate(maps[2:], axis=2), w_tr, b_tr, dtype=np.float32).astype(np.float64)
    return (a + b).astype(np.float32)


@dataclass(frozen=True)
class FGSAOutput:
    fused: np.ndarray
    offsets: np.ndarray
    gated_guidance: np.ndarray
    warped_r: np.ndarray
    warped_t: np.ndarray


def fgsa_forward(
    f_r,
    f_t,
    f_r_x,
    f_t_x,
    g_freq,
    params: ParamStore,
    scale: int = 0,
    clamp: float = 8.0,
    offsets=None,
) -> FGSAOutput:
    """Gate, predict offsets, warp both modalities with the shared field, fuse.

    ``f_r``/``f_t`` are the spatial features before cross-attention (they
    enter the fusion convs directly), ``f_r_x``/``f_t_x`` the enhanced ones.
    Passing ``offsets`` skips the predictor and uses that field instead.
    """
    g_tilde = gate(f_r_x, f_t_x, g_freq, params, scale)
    if offsets is None:
        offsets = predict_offsets(f_r_x, f_t_x, g_tilde, params, scale, clamp)
    w_k = params[f"fgsa.w_k.{scale}"]
    base = square_lattice(w_k.shape[0])
    # one pass over both modalities: they share the offset field
    both = np.concatenate([as_hwc(f_r_x), as_hwc(f_t_x)], axis=2)
    warped = deformable_sample(both, offsets, np.concatenate([w_k, w_k], axis=1), base)
    c = as_hwc(f_r_x).shape[2]
    fh_r, fh_t = warped[:, :, :c], warped[:, :, c:]
    fused = fuse(f_r, fh_t, f_t, fh_r, params, scale)
    return FGSAOutput(fused, np.asarray(offsets, dtype=np.float32), g_tilde, fh_r, fh_t)
