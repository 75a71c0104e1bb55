"""Dense containers and convolution primitives shared by the fusion stages.

Arrays are channel-last (H, W, C). Storage is float32. Convolutions work in float64 unless asked for float32
speed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

__all__ = [
    "N_SCALES",
    "FeatureMap",
    "ParamStore",
    "as_hwc",
    "conv2d",
    "conv2d_weight_grad",
    "sigmoid",
    "relu",
]

N_SCALES = 4
PADDING_MODES = ("zero", "reflect")


def as_hwc(x, dtype=np.float32) -> np.ndarray:
    """Return ``x`` as an (H, W, C) array of ``dtype``, promoting 2-D input."""
    arr = np.asarray(x.data if isinstance(x, FeatureMap) else x)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected an (H, W) or (H, W, C) array, got shape {arr.shape}")
    return arr.astype(dtype, copy=False)


@dataclass(frozen=True)
class FeatureMap:
    """A dense H x W x C feature grid living at one pyramid scale."""

    data: np.ndarray
    scale_index: int = 0

    def __post_init__(self):
        arr = as_hwc(self.data)
        if not 0 <= self.scale_index < N_SCALES:
            raise ValueError(f"scale_index must be in [0, {N_SCALES - 1}], got {self.scale_index}")
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("feature map contains non-finite values")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def sigmoid(x):
    """Logistic function, numerically safe for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def relu(x):
    return np.maximum(x, 0)


def _pad(x: np.ndarray, top: int, bottom: int, left: int, right: int, mode: str) -> np.ndarray:
    if mode not in PADDING_MODES:
        raise ValueError(f"padding mode must be one of {PADDING_MODES}, got {mode!r}")
    widths = ((top, bottom), (left, right), (0, 0))
    if mode == "zero":
        return np.pad(x, widths, mode="constant")
    return np.pad(x, widths, mode="reflect")


def _conv_geometry(h, w, kh, kw, dilation, stride, same):
    ekh = dilation * (kh - 1) + 1
    ekw = dilation * (kw - 1) + 1
    pad_h = ekh // 2 if same else 0
    pad_w = ekw // 2 if same else 0
    out_h = (h + 2 * pad_h - ekh) // stride + 1
    out_w = (w + 2 * pad_w - ekw) // stride + 1
    return pad_h, pad_w, out_h, out_w


def conv2d(
    x,
    kernel,
    bias=None,
    *,
    dilation: int = 1,
    stride: int = 1,
    padding: str = "reflect",
    same: bool = True,
    dtype=np.float64,
) -> np.ndarray:
    """2-D cross-correlation with dilation and stride.

    Parameters
    ----------
    x : array_like, shape (H, W, Cin)
    kernel : array_like, shape (KH, KW, Cin, Cout)
    bias : array_like, shape (Cout,), optional
    dilation, stride : int
        Both must be >= 1.
    padding : {"reflect", "zero"}
        Border extension used when ``same`` is true.
    same : bool
        Pad by half the dilated kernel extent on each side. With ``same=False``
        no padding is applied ("valid" correlation).
    dtype : numpy dtype
        Precision of the per-tap matrix products and of their running sum.
        float32 trades ~1e-6 relative error for roughly twice the speed.

    Returns
    -------
    ndarray, shape (H_out, W_out, Cout)
        float32, or float64 when ``dtype`` is float64.
        ``H_out = floor((H + 2*pad - dilated_KH) / stride) + 1``.
    """
    x = as_hwc(x)
    kernel = np.asarray(kernel, dtype=dtype)
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be KH x KW x Cin x Cout, got shape {kernel.shape}")
    if kernel.shape[2] != x.shape[2]:
        raise ValueError(
            f"kernel Cin mismatch: input shape {x.shape}, kernel shape {kernel.shape}"
        )
    if dilation < 1 or stride < 1:
        raise ValueError("dilation and stride must be >= 1")
    kh, kw, _, cout = kernel.shape
    h, w, _ = x.shape
    pad_h, pad_w, out_h, out_w = _conv_geometry(h, w, kh, kw, dilation, stride, same)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"input {x.shape} too small for kernel {kernel.shape} at dilation {dilation}")
    xp = _pad(x.astype(dtype), pad_h, pad_h, pad_w, pad_w, padding)

    out = np.zeros((out_h, out_w, cout), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            tap = xp[r0 : r0 + stride * (out_h - 1) + 1 : stride, c0 : c0 + stride * (out_w - 1) + 1 : stride]
            out += tap @ kernel[i, j]
    if bias is not None:
        out += np.asarray(bias, dtype=dtype)
    return out.astype(np.result_type(dtype, np.float32), copy=False)


def conv2d_weight_grad(
    x, grad_out, kernel_shape, *, dilation: int = 1, stride: int = 1, padding: str = "reflect", same: bool = True
) -> np.ndarray:
    """Gradient of ``sum(grad_out * conv2d(x, K))`` with respect to ``K``."""
    x = as_hwc(x).astype(np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    kh, kw, cin, cout = kernel_shape
    h, w, _ = x.shape
    pad_h, pad_w, out_h, out_w = _conv_geometry(h, w, kh, kw, dilation, stride, same)
    if g.shape != (out_h, out_w, cout):
        raise ValueError(f"grad_out shape {g.shape} does not match conv output {(out_h, out_w, cout)}")
    xp = _pad(x, pad_h, pad_h, pad_w, pad_w, padding)
    grad = np.zeros(kernel_shape, dtype=np.float64)
    gflat = g.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            tap = xp[r0 : r0 + stride * (out_h - 1) + 1 : stride, c0 : c0 + stride * (out_w - 1) + 1 : stride]
            grad[i, j] = tap.reshape(-1, cin).T @ gflat
    return grad


@dataclass(frozen=True)
class ParamStore:
    """Named float32 tensors plus scalar hyperparameters.

    Immutable once built. Weight files are a JSON manifest listing
    ``{name, shape, dtype: "f32", byte_offset}`` for each tensor next to a
    little-endian float32 blob.
    """

    entries: Mapping[str, np.ndarray]
    metadata: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for name, value in self.entries.items():
            arr = np.array(value, dtype=np.float32)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "entries", MappingProxyType(frozen))
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"parameter {name!r} missing from store") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def get(self, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
        """Fetch ``name``, checking its shape when ``shape`` is given."""
        arr = self[name]
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise ValueError(f"parameter {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    def updated(self, mapping: Mapping[str, np.ndarray]) -> "ParamStore":
        """Return a copy with the tensors in ``mapping`` added or replaced."""
        entries = dict(self.entries)
        entries.update(mapping)
        return ParamStore(entries, dict(self.metadata))

    def save(self, manifest_path, blob_name: str | None = None) -> Path:
        manifest_path = Path(manifest_path)
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        blob_name = blob_name or manifest_path.with_suffix(".bin").name
        tensors, chunks, offset = [], [], 0
        for name in sorted(self.entries):
            arr = np.ascontiguousarray(self.entries[name], dtype="<f4")
            tensors.append({"name": name, "shape": list(arr.shape), "dtype": "f32", "byte_offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        (manifest_path.parent / blob_name).write_bytes(b"".join(chunks))
        manifest = {"blob": blob_name, "tensors": tensors, "metadata": dict(self.metadata)}
        manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        return manifest_path

    @classmethod
    def load(cls, manifest_path) -> "ParamStore":
        manifest_path = Path(manifest_path)
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob_path = manifest_path.parent / manifest["blob"]
        blob = blob_path.read_bytes()
        expected = 0
        entries = {}
        for t in manifest["tensors"]:
            if t.get("dtype") != "f32":
                raise ValueError(f"{manifest_path}: tensor {t['name']!r} has unsupported dtype {t.get('dtype')!r}")
            if t["name"] in entries:
                raise ValueError(f"{manifest_path}: duplicate tensor name {t['name']!r}")
            count = int(np.prod(t["shape"], dtype=np.int64))
            start = int(t["byte_offset"])
            if start + 4 * count > len(blob):
                raise ValueError(f"{blob_path}: tensor {t['name']!r} runs past end of blob")
            entries[t["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(t["shape"])
            expected += 4 * count
        if expected != len(blob):
            raise ValueError(
                f"{blob_path}: blob holds {len(blob)} bytes but manifest declares {expected}"
            )
        return cls(entries, manifest.get("metadata", {}))
