"""PNG / PGM reading and writing for the image pairs the pipeline consumes."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["ImageFormatError", "read_rgb", "read_thermal", "write_png", "to_u8"]


class ImageFormatError(ValueError):
    pass


def _open(path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    return img


def read_rgb(path) -> np.ndarray:
    """8-bit 3-channel image as float64 (H, W, 3) in [0, 1]."""
    img = _open(path)
    if img.mode != "RGB":
        raise ImageFormatError(f"{path}: expected an 8-bit RGB image, got mode {img.mode!r}")
    return np.asarray(img, dtype=np.float64) / 255.0


def read_thermal(path) -> np.ndarray:
    """8- or 16-bit single-channel PNG/PGM as float64 (H, W) in [0, 1]."""
    img = _open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageFormatError(f"{path}: values outside the 16-bit range")
        return arr / 65535.0
    raise ImageFormatError(f"{path}: expected an 8- or 16-bit single-channel image, got mode {img.mode!r}")


def to_u8(x) -> np.ndarray:
    """Quantize [0, 1] floats to uint8 with rounding."""
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, array) -> Path:
    """Write uint8 (H, W) / (H, W, 3) or uint16 (H, W) data losslessly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array)
    if arr.dtype == np.uint16 and arr.ndim == 2:
        img = Image.fromarray(arr.astype("<u2"))
    elif arr.dtype == np.uint8 and arr.ndim in (2, 3):
        img = Image.fromarray(arr)
    else:
        raise ImageFormatError(f"cannot write array of dtype {arr.dtype} and shape {arr.shape} as PNG")
    img.save(path, format="PNG")
    return path
