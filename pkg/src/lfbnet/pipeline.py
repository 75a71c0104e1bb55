"""End-to-end forward pass: spectra -> alignment -> guidance -> deformable fusion, per scale."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import backbone, fgsa, lfca, lfgm, spectral
from .imageio import write_png
from .tensor_core import N_SCALES, FeatureMap, ParamStore, as_hwc

log = logging.getLogger(__name__)

__all__ = [
    "Config",
    "ConfigError",
    "NumericInvariantError",
    "FusionResult",
    "load_config",
    "init_params",
    "run",
    "export",
    "load_features",
    "load_feature_pyramids",
    "prepare_inputs",
    "scale_spectra",
    "guidance_map",
    "write_guidance_pngs",
    "guidance_summary",
    "GUIDANCE_RANGES",
]

# fixed display ranges used when guidance channels are written as 8-bit images
GUIDANCE_RANGES = {
    "d_x": (-1.0, 1.0),
    "d_y": (-1.0, 1.0),
    "s_phi": (0.0, math.pi),
    "c_hf": (0.0, 1.0),
    "c_lf": (0.0, 1.0),
    "coh": (0.0, 1.0),
}


class ConfigError(ValueError):
    pass


class NumericInvariantError(FloatingPointError):
    """A stage produced non-finite values or broke a stated bound."""


@dataclass(frozen=True)
class Config:
    patch_size: int = 16
    stride: int = 8
    cutoff_rho: float = 0.25
    k_s: int = 9
    clamp_px: float = 8.0
    eps: float = 1e-6
    scales: int = 4
    embed_dim: int = 32

    def __post_init__(self):
        if self.patch_size not in spectral.SUPPORTED_PATCH_SIZES:
            raise ConfigError(f"patch_size must be one of {spectral.SUPPORTED_PATCH_SIZES}")
        if not 1 <= self.stride <= self.patch_size:
            raise ConfigError("stride must be in [1, patch_size]")
        if not 0.1 <= self.cutoff_rho <= 0.9:
            raise ConfigError("cutoff_rho must lie in [0.1, 0.9]")
        side = math.isqrt(self.k_s)
        if side * side != self.k_s or side % 2 == 0:
            raise ConfigError("k_s must be the square of an odd number (9 for a 3x3 lattice)")
        if self.clamp_px <= 0 or self.eps <= 0:
            raise ConfigError("clamp_px and eps must be positive")
        if not 1 <= self.scales <= N_SCALES:
            raise ConfigError(f"scales must be in [1, {N_SCALES}]")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def _coerce(name: str, raw: str, typ):
    try:
        if typ is int or typ == "int":
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r}") from None


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Read a flat ``key = value`` file, then apply ``overrides`` (flag values win).

    Blank lines and ``#`` comments are ignored; unknown keys are an error.
    """
    types = {f.name: f.type for f in fields(Config)}
    values = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw, types[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(value), types[key])
    return Config(**values)


def init_params(config: Config = Config(), seed: int = 0, channels: int = 16) -> ParamStore:
    """Deterministic untrained weights for every stage.

    Convs get He-normal weights and zero bias, the final offset projection is
    zero so the untrained field is offset-free, deformable weights are a
    one-hot centre tap, and alpha/beta start at sigmoid(0) = 0.5.
    """
    rng = np.random.default_rng(seed)
    c, d, g = channels, config.embed_dim, len(lfgm.CHANNELS)
    entries: dict[str, np.ndarray] = {}

    def conv(name, kh, cin, cout, zero=False):
        std = math.sqrt(2.0 / (kh * kh * cin))
        entries[name] = np.zeros((kh, kh, cin, cout)) if zero else rng.normal(0.0, std, (kh, kh, cin, cout))
        entries[f"{name}.bias"] = np.zeros(cout)

    for mod, cin in (("rgb", 3), ("thermal", 1)):
        for s in range(N_SCALES):
            conv(f"backbone.{mod}.down.{s}", 3, cin if s == 0 else c, c)
            for dil in backbone.DILATIONS:
                conv(f"backbone.{mod}.atrous{dil}.{s}", 3, c, c)
    for s in range(N_SCALES):
        entries[f"lfca.alpha_raw.{s}"] = np.zeros(1)
        entries[f"lfca.beta_raw.{s}"] = np.zeros(1)
        entries[f"lfca.q_proj.{s}"] = rng.normal(0.0, 1.0 / math.sqrt(c), (c, d))
        entries[f"lfca.kv_proj.{s}"] = rng.normal(0.0, 1.0, (1, 2 * d))
        entries[f"lfca.out_proj.{s}"] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, c))
        conv(f"fgsa.gate_conv.{s}", 1, 2 * c, g)
        conv(f"fgsa.offset_conv1.{s}", 3, 2 * c + g, c)
        conv(f"fgsa.offset_conv2.{s}", 3, c, c)
        conv(f"fgsa.offset_proj.{s}", 1, c, 2 * config.k_s, zero=True)
        w_k = np.zeros((config.k_s, c))
        w_k[config.k_s // 2] = 1.0
        entries[f"fgsa.w_k.{s}"] = w_k
        conv(f"fgsa.fuse_rt.{s}", 3, 2 * c, c)
        conv(f"fgsa.fuse_tr.{s}", 3, 2 * c, c)
    meta = {
        "patch_size": config.patch_size,
        "stride": config.stride,
        "k_s": config.k_s,
        "eps": config.eps,
        "cutoff_rho": config.cutoff_rho,
    }
    return ParamStore(entries, meta)


@dataclass(frozen=True)
class ScaleResult:
    fused: FeatureMap
    guidance: FeatureMap
    aligned: FeatureMap
    offsets: np.ndarray
    residue: float
    timing_ms: dict


@dataclass(frozen=True)
class FusionResult:
    """Per-scale fused features, guidance maps and aligned frequency maps."""

    fused: list
    guidance: list
    aligned: list
    offsets: list
    residue: list
    timing_ms: dict = field(default_factory=dict)
    input_shape: tuple = ()

    @property
    def n_scales(self) -> int:
        return len(self.fused)


def prepare_inputs(rgb, thermal):
    rgb = np.asarray(rgb, dtype=np.float64)
    thermal = np.asarray(thermal, dtype=np.float64)
    if thermal.ndim == 3 and thermal.shape[2] == 1:
        thermal = thermal[:, :, 0]
    if thermal.ndim != 2:
        raise ValueError(f"thermal image must be single-channel, got shape {thermal.shape}")
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb image must be (H, W, 3), got shape {rgb.shape}")
    if rgb.shape[:2] != thermal.shape:
        raise ValueError(
            f"rgb is {rgb.shape[1]}x{rgb.shape[0]} (WxH) but thermal is {thermal.shape[1]}x{thermal.shape[0]}; "
            "register and resize both modalities to a common size first (default 640x512)"
        )
    return rgb, thermal


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericInvariantError(f"{name} contains non-finite values")


def scale_spectra(luma_r, luma_t, scale: int, config: Config = Config()):
    """Patch grid and per-modality local spectra of the area-downsampled intensity maps."""
    factor = 2**scale
    lr = backbone.area_downsample(luma_r, factor)
    lt = backbone.area_downsample(luma_t, factor)
    grid = spectral.PatchGrid(lr.shape[0], lr.shape[1], config.patch_size, config.stride)
    return grid, spectral.local_spectra(lr, grid), spectral.local_spectra(lt, grid)


def guidance_map(rgb, thermal, config: Config = Config(), scale: int = 0) -> np.ndarray:
    """The (H_s, W_s, 6) guidance map of one scale, without running any learned stage."""
    rgb, thermal = prepare_inputs(rgb, thermal)
    luma_r = backbone.luma(backbone.pad_to_multiple(rgb))
    grid, spec_r, spec_t = scale_spectra(luma_r, backbone.pad_to_multiple(thermal), scale, config)
    g = lfgm.project_guidance(lfgm.guidance_vectors(spec_r, spec_t, config.cutoff_rho), grid)
    _check_finite(f"scale {scale} guidance", g)
    return g


def _run_scale(s, luma_r, luma_t, f_r, f_t, params, config) -> ScaleResult:
    timing = {}
    t0 = time.perf_counter()
    grid, spec_r, spec_t = scale_spectra(luma_r, luma_t, s, config)
    t1 = time.perf_counter()
    timing["spectra"] = (t1 - t0) * 1e3

    alpha, beta = lfca.scale_coefficients(params, s)
    aligned = lfca.align_spectra(spec_r, spec_t, alpha, beta, config.eps)
    f_align, residue = lfca.reconstruct_aligned(aligned, grid, residue_tol=None, return_residue=True)
    if residue > lfca.RECONSTRUCT_RESIDUE_TOL:
        log.warning("scale %d: aligned-spectrum imaginary residue %.3g exceeds %.0e", s, residue, lfca.RECONSTRUCT_RESIDUE_TOL)
    if f_r.shape[:2] != f_align.shape:
        raise ValueError(f"scale {s}: features are {f_r.shape[:2]} but spectral maps are {f_align.shape}")
    f_r_x = lfca.cross_attend(f_r, f_align, params, s, window=config.patch_size)
    f_t_x = lfca.cross_attend(f_t, f_align, params, s, window=config.patch_size)
    t2 = time.perf_counter()
    timing["lfca"] = (t2 - t1) * 1e3

    vectors = lfgm.guidance_vectors(spec_r, spec_t, config.cutoff_rho)
    g_freq = lfgm.project_guidance(vectors, grid)
    t3 = time.perf_counter()
    timing["lfgm"] = (t3 - t2) * 1e3

    out = fgsa.fgsa_forward(f_r, f_t, f_r_x, f_t_x, g_freq, params, s, config.clamp_px)
    timing["fgsa"] = (time.perf_counter() - t3) * 1e3

    for name, arr in (("aligned map", f_align), ("guidance", g_freq), ("offsets", out.offsets), ("fused features", out.fused)):
        _check_finite(f"scale {s} {name}", arr)
    return ScaleResult(
        fused=FeatureMap(out.fused, s),
        guidance=FeatureMap(g_freq, s),
        aligned=FeatureMap(f_align, s),
        offsets=out.offsets,
        residue=residue,
        timing_ms=timing,
    )


def run(rgb, thermal, params: ParamStore, config: Config = Config(), threads: int = 1, features=None) -> FusionResult:
    """Full forward pass over ``config.scales`` pyramid levels.

    ``rgb`` is (H, W, 3) and ``thermal`` (H, W), both already registered to
    the same size with values in [0, 1]. ``features`` optionally supplies
    precomputed pyramids as ``{"rgb": [...], "thermal": [...]}`` in place of
    the built-in backbone. ``threads`` > 1 processes scales concurrently;
    results do not depend on it.
    """
    rgb, thermal = prepare_inputs(rgb, thermal)
    input_shape = thermal.shape
    rgb = backbone.pad_to_multiple(rgb)
    thermal = backbone.pad_to_multiple(thermal)
    timing = {}
    with threadpool_limits(limits=1, user_api="blas"):
        t0 = time.perf_counter()
        if features is None:
            pyr_r = backbone.extract_features(rgb, params, "rgb")
            pyr_t = backbone.extract_features(thermal, params, "thermal")
        else:
            pyr_r = [as_hwc(f) for f in features["rgb"]]
            pyr_t = [as_hwc(f) for f in features["thermal"]]
            if len(pyr_r) < config.scales or len(pyr_t) < config.scales:
                raise ValueError(f"precomputed features need {config.scales} levels per modality")
        timing["backbone"] = (time.perf_counter() - t0) * 1e3
        luma_r = backbone.luma(rgb)

        def one(s):
            return _run_scale(s, luma_r, thermal, pyr_r[s], pyr_t[s], params, config)

        workers = max(1, threads)
        if workers == 1:
            scales = [one(s) for s in range(config.scales)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scales = list(pool.map(one, range(config.scales)))
    for s, res in enumerate(scales):
        for stage, ms in res.timing_ms.items():
            timing[f"scale{s}.{stage}"] = ms
    timing["total"] = sum(v for k, v in timing.items())
    return FusionResult(
        fused=[r.fused for r in scales],
        guidance=[r.guidance for r in scales],
        aligned=[r.aligned for r in scales],
        offsets=[r.offsets for r in scales],
        residue=[r.residue for r in scales],
        timing_ms=timing,
        input_shape=tuple(input_shape),
    )


def _to_u8(channel, lo, hi):
    x = (np.asarray(channel, dtype=np.float64) - lo) / (hi - lo)
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_guidance_pngs(guidance: np.ndarray, out_dir, prefix: str = "") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, name in enumerate(lfgm.CHANNELS):
        path = out_dir / f"{prefix}{name}.png"
        write_png(path, _to_u8(guidance[:, :, i], *GUIDANCE_RANGES[name]))
        paths.append(path)
    return paths


def guidance_summary(guidance: np.ndarray) -> dict:
    g = np.asarray(guidance, dtype=np.float64)
    return {
        name: {"min": float(g[..., i].min()), "mean": float(g[..., i].mean()), "max": float(g[..., i].max())}
        for i, name in enumerate(lfgm.CHANNELS)
    }


def export(result: FusionResult, out_dir, config: Config | None = None) -> Path:
    """Write fused features (f32 blob + manifest), guidance PNGs and timing JSON.

    Returns the feature manifest path. Everything except ``timing.json`` is
    a deterministic function of the result.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = {f"fused.{s}": fm.data for s, fm in enumerate(result.fused)}
        meta = {"scales": result.n_scales, "channels": int(result.fused[0].channels)}
        manifest = ParamStore(entries, meta).save(out_dir / "features.json", "features.bin")
        for s, gm in enumerate(result.guidance):
            write_guidance_pngs(gm.data, out_dir / "guidance", prefix=f"scale{s}_")
        (out_dir / "guidance_summary.json").write_text(
            json.dumps({f"scale{s}": guidance_summary(g.data) for s, g in enumerate(result.guidance)}, indent=2),
            encoding="utf-8",
        )
        (out_dir / "timing.json").write_text(json.dumps(result.timing_ms, indent=2), encoding="utf-8")
        if config is not None:
            (out_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed to export fusion result to {out_dir}: {exc}") from exc
    return manifest


def load_features(manifest_path) -> list[np.ndarray]:
    """Re-import fused features written by :func:`export`, ordered by scale."""
    store = ParamStore.load(manifest_path)
    n = int(store.metadata.get("scales", sum(1 for k in store.entries if k.startswith("fused."))))
    return [np.array(store[f"fused.{s}"]) for s in range(n)]


def load_feature_pyramids(manifest_path) -> dict:
    """Precomputed backbone pyramids stored as ``features.{rgb,thermal}.{s}`` tensors."""
    store = ParamStore.load(manifest_path)
    out = {}
    for mod in ("rgb", "thermal"):
        levels = sorted(int(k.rsplit(".", 1)[1]) for k in store.entries if k.startswith(f"features.{mod}."))
        if levels != list(range(len(levels))) or not levels:
            raise ValueError(f"{manifest_path}: expected features.{mod}.0..N tensors, found levels {levels}")
        out[mod] = [np.array(store[f"features.{mod}.{s}"]) for s in levels]
    return out
