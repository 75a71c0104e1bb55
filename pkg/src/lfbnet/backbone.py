"""Light multi-scale atrous feature extractor.

Stand-in for a large pretrained backbone so the alignment stages see
realistic four-level pyramids. Level ``s`` has spatial size ``(H / 2**s, W / 2**s)``:

    x_0 = relu(conv3x3(image))                 stride 1
    x_s = relu(conv3x3_stride2(f_{s-1}))       s >= 1
    f_s = relu(sum_d atrous3x3_d(x_s))         d in (1, 2, 4)
"""
from __future__ import annotations

import numpy as np

from .tensor_core import N_SCALES, ParamStore, as_hwc, conv2d, relu

__all__ = ["DILATIONS", "MIN_SIZE", "ALIGN", "luma", "pad_to_multiple", "area_downsample", "extract_features"]

DILATIONS = (1, 2, 4)
MIN_SIZE = 64
ALIGN = 16
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luma(image) -> np.ndarray:
    """Rec. 601 luma of an (H, W, 3) image, returned as (H, W)."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"luma needs a 3-channel image, got shape {x.shape}")
    return x @ LUMA_WEIGHTS


def pad_to_multiple(image, multiple: int = ALIGN) -> np.ndarray:
    """Reflect-pad the bottom/right so both sides are multiples of ``multiple``."""
    x = np.asarray(image)
    h, w = x.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    widths = [(0, ph), (0, pw)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, widths, mode="reflect")


def area_downsample(image, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor x factor`` blocks of an (H, W) map."""
    x = np.asarray(image, dtype=np.float64)
    if factor == 1:
        return x
    h, w = x.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"{h}x{w} map is not divisible by {factor}")
    return x.reshape(h // factor, factor, w // factor, factor, *x.shape[2:]).mean(axis=(1, 3))


def extract_features(image, params: ParamStore, modality: str) -> list[np.ndarray]:
    """Four-level feature pyramid for one modality (``"rgb"`` or ``"thermal"``).

    The image is reflect-padded to a multiple of 16 first. Parameters are
    read from ``backbone.{modality}.down.{s}`` and
    ``backbone.{modality}.atrous{d}.{s}`` (each with a ``.bias``).
    """
    x = as_hwc(image)
    if min(x.shape[:2]) < MIN_SIZE:
        raise ValueError(f"image is {x.shape[0]}x{x.shape[1]}; at least {MIN_SIZE}x{MIN_SIZE} is required")
    x = pad_to_multiple(x)
    pyramid = []
    for s in range(N_SCALES):
        down = f"backbone.{modality}.down.{s}"
        x = relu(conv2d(x, params[down], params[f"{down}.bias"], stride=1 if s == 0 else 2, dtype=np.float32))
        acc = 0.0
        for d in DILATIONS:
            name = f"backbone.{modality}.atrous{d}.{s}"
            acc = acc + conv2d(x, params[name], params[f"{name}.bias"], dilation=d, dtype=np.float32).astype(np.float64)
        x = relu(acc).astype(np.float32)
        pyramid.append(x)
    return pyramid
