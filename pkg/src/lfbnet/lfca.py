"""Cross-modal alignment in local frequency space.

Per patch: normalize each modality's amplitude spectrum, blend the two with a
weight alpha, interpolate the thermal phase toward the RGB phase by beta on
the circle, then rebuild a spatial map by inverse FFT and overlap-add. The
aligned map is injected back into each modality's features with windowed
cross-attention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from .spectral import PatchGrid
from .tensor_core import ParamStore, as_hwc, sigmoid

__all__ = [
    "AlignedSpectrum",
    "normalize_amplitude",
    "blend_amplitude",
    "align_phase",
    "align_spectra",
    "reconstruct_aligned",
    "scale_coefficients",
    "window_attention",
    "cross_attend",
    "cross_attend_reference",
    "RECONSTRUCT_RESIDUE_TOL",
]

RECONSTRUCT_RESIDUE_TOL = 1e-2


def normalize_amplitude(amplitude, eps: float = 1e-6) -> np.ndarray:
    """Divide each P x P amplitude patch by its Frobenius norm plus ``eps``."""
    a = np.asarray(amplitude, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("amplitude must be non-negative")
    norm = np.sqrt(np.sum(a * a, axis=(-2, -1), keepdims=True))
    return a / (norm + eps)


def _per_patch(coef, ndim):
    c = np.asarray(coef, dtype=np.float64)
    return c.reshape(c.shape + (1,) * (ndim - c.ndim)) if c.ndim else c


def _check_unit(name, value):
    v = np.asarray(value)
    if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must lie in [0, 1]")


def blend_amplitude(norm_r, norm_t, alpha) -> np.ndarray:
    """Convex combination ``alpha * norm_r + (1 - alpha) * norm_t``.

    ``alpha`` is a scalar or one value per patch (leading axis).
    """
    ar = np.asarray(norm_r, dtype=np.float64)
    at = np.asarray(norm_t, dtype=np.float64)
    if ar.shape != at.shape:
        raise ValueError(f"amplitude shapes differ: {ar.shape} vs {at.shape}")
    _check_unit("alpha", alpha)
    a = _per_patch(alpha, ar.ndim)
    return a * ar + (1.0 - a) * at


def align_phase(phase_r, phase_t, beta) -> np.ndarray:
    """Move the thermal phase a fraction ``beta`` of the way to the RGB phase.

    The step is taken along the shorter arc and the result is wrapped back
    into [-pi, pi).
    """
    pr = np.asarray(phase_r, dtype=np.float64)
    pt = np.asarray(phase_t, dtype=np.float64)
    _check_unit("beta", beta)
    b = _per_patch(beta, pr.ndim)
    return spectral.wrap(pt + b * spectral.wrap(pr - pt))


@dataclass(frozen=True)
class AlignedSpectrum:
    """Aligned amplitude/phase for a stack of patches (leading axis = q)."""

    amplitude: np.ndarray
    phase: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def n_patches(self) -> int:
        return self.amplitude.shape[0]

    def spectrum(self) -> np.ndarray:
        return spectral.compose(self.amplitude, self.phase)


def align_spectra(spec_r, spec_t, alpha, beta, eps: float = 1e-6) -> AlignedSpectrum:
    """Run amplitude normalization, blending and phase alignment on paired spectra."""
    spec_r = np.asarray(spec_r)
    spec_t = np.asarray(spec_t)
    if spec_r.shape != spec_t.shape:
        raise ValueError(f"spectrum stacks differ in shape: {spec_r.shape} vs {spec_t.shape}")
    amp_r, ph_r = spectral.decompose(spec_r)
    amp_t, ph_t = spectral.decompose(spec_t)
    n = spec_r.shape[0]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,))
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (n,))
    amp = blend_amplitude(normalize_amplitude(amp_r, eps), normalize_amplitude(amp_t, eps), alpha)
    phase = align_phase(ph_r, ph_t, beta)
    return AlignedSpectrum(amp, phase, alpha.copy(), beta.copy())


def reconstruct_aligned(
    aligned: AlignedSpectrum,
    grid: PatchGrid,
    residue_tol: float | None = RECONSTRUCT_RESIDUE_TOL,
    return_residue: bool = False,
):
    """Inverse-FFT every aligned patch and overlap-add into an (H, W) map.

    The blended phase is not exactly antisymmetric (bins where the two phases
    are antipodal break the symmetry), so the inverse transform keeps its real
    part. The imaginary part is checked against ``residue_tol`` measured as
    RMS(imag) / RMS(real) over the whole stack; ``None`` disables the check.
    With ``return_residue`` the measured ratio is returned alongside the map.
    """
    if aligned.n_patches != grid.n_patches:
        raise ValueError(f"got {aligned.n_patches} aligned patches for a grid of {grid.n_patches}")
    spec = aligned.spectrum()
    p = grid.patch_size
    full = np.conj(spectral.fft2d(np.conj(spec))) / (p * p)
    rms_re = np.sqrt(np.mean(full.real**2))
    rms_im = np.sqrt(np.mean(full.imag**2))
    residue = float(rms_im / rms_re) if rms_re > 0 else (0.0 if rms_im == 0 else float("inf"))
    if residue_tol is not None and residue > residue_tol and rms_im > 1e-12:
        raise spectral.SpectralResidueError(
            f"aligned reconstruction imaginary RMS {rms_im:.3g} exceeds "
            f"{residue_tol:g} x real RMS {rms_re:.3g}"
        )
    out = spectral.overlap_add(full.real, grid).astype(np.float32)
    return (out, residue) if return_residue else out


def scale_coefficients(params: ParamStore, scale: int) -> tuple[float, float]:
    """Sigmoid-squashed (alpha, beta) for one pyramid scale."""
    alpha_raw = params.get(f"lfca.alpha_raw.{scale}", (1,))
    beta_raw = params.get(f"lfca.beta_raw.{scale}", (1,))
    return sigmoid(float(alpha_raw[0])), sigmoid(float(beta_raw[0]))


# --------------------------------------------------------------------------
# windowed cross-attention


def _to_windows(x: np.ndarray, ws: int):
    h, w, c = x.shape
    ny, nx = -(-h // ws), -(-w // ws)
    xp = np.zeros((ny * ws, nx * ws, c), dtype=x.dtype)
    xp[:h, :w] = x
    win = xp.reshape(ny, ws, nx, ws, c).transpose(0, 2, 1, 3, 4).reshape(ny * nx, ws * ws, c)
    valid = np.zeros((ny * ws, nx * ws), dtype=bool)
    valid[:h, :w] = True
    valid = valid.reshape(ny, ws, nx, ws).transpose(0, 2, 1, 3).reshape(ny * nx, ws * ws)
    return win, valid, (ny, nx)


def _from_windows(win: np.ndarray, ws: int, counts, h: int, w: int) -> np.ndarray:
    ny, nx = counts
    c = win.shape[-1]
    x = win.reshape(ny, nx, ws, ws, c).transpose(0, 2, 1, 3, 4).reshape(ny * ws, nx * ws, c)
    return x[:h, :w]


def window_attention(q, k, v, window: int = 16):
    """Single-head scaled dot-product attention inside non-overlapping windows.

    ``q``, ``k``, ``v`` are (H, W, d) arrays. Every query attends to the keys
    in its own ``window x window`` tile (edge tiles are truncated). Returns
    the attended values (H, W, d) and the per-window weight stacks
    ``(n_windows, L, L)`` where padded key slots carry zero weight.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (q.shape[:2] == k.shape[:2] == v.shape[:2]):
        raise ValueError(f"spatial size mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if window < 1:
        raise ValueError("window must be >= 1")
    h, w, d = q.shape
    qw, valid, counts = _to_windows(q, window)
    kw, _, _ = _to_windows(k, window)
    vw, _, _ = _to_windows(v, window)
    logits = np.matmul(qw, kw.transpose(0, 2, 1)) / np.sqrt(d)
    logits = np.where(valid[:, None, :], logits, -np.inf)
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = np.matmul(weights, vw)
    return _from_windows(out, window, counts, h, w), weights


def _rank1_window_mean(scores, keys, window: int) -> np.ndarray:
    """``sum_j softmax_j(scores_i * keys_j) * keys_j`` for every query i in its window.

    Equivalent to :func:`window_attention` when queries, keys and values are
    all projections of scalar fields (the logits are an outer product).
    """
    h, w = scores.shape
    sw, valid, counts = _to_windows(scores[:, :, None], window)
    kw, _, _ = _to_windows(keys[:, :, None], window)
    s_ = sw[:, :, 0]
    k_ = kw[:, :, 0]
    kmax = np.where(valid, k_, -np.inf).max(axis=1, keepdims=True)
    kmin = np.where(valid, k_, np.inf).min(axis=1, keepdims=True)
    row_max = np.where(s_ >= 0, s_ * kmax, s_ * kmin).astype(np.float32)
    s32 = s_.astype(np.float32)
    # padded slots borrow a real key so every logit stays <= 0 before masking
    k32 = np.where(valid, k_, kmax).astype(np.float32)
    e = s32[:, :, None] * k32[:, None, :]
    e -= row_max[:, :, None]
    np.exp(e, out=e)
    # padded key slots get zero weight; one matmul yields numerator and denominator
    rhs = np.stack([k32 * valid, valid], axis=-1).astype(np.float32)
    nd = np.matmul(e, rhs).astype(np.float64)
    num, den = nd[..., 0], nd[..., 1]
    return _from_windows((num / den)[:, :, None], window, counts, h, w)[:, :, 0]


def cross_attend(f_m, f_align, params: ParamStore, scale: int = 0, window: int = 16) -> np.ndarray:
    """Inject the aligned frequency map into a modality's features.

    Queries are a 1x1 projection of ``f_m``; the single-channel ``f_align`` is
    lifted by one 1x1 projection to keys and values (first/second half of the
    output channels). The attended values go through an output projection and
    are added residually to ``f_m``.

    Because keys and values are rank-1 lifts of one channel, the logits are
    ``(q . w_k) * a_j / sqrt(d)`` and the attended value is the softmax mean of
    ``a`` times ``w_v``; this is evaluated directly instead of through d-wide
    matrix products.
    """
    x = as_hwc(f_m).astype(np.float64)
    a = as_hwc(f_align).astype(np.float64)
    if x.shape[:2] != a.shape[:2]:
        raise ValueError(f"spatial size mismatch: features {x.shape[:2]} vs aligned map {a.shape[:2]}")
    if a.shape[2] != 1:
        raise ValueError(f"aligned map must be single-channel, got {a.shape[2]} channels")
    c = x.shape[2]
    d = params[f"lfca.q_proj.{scale}"].shape[1]
    wq = params.get(f"lfca.q_proj.{scale}", (c, d)).astype(np.float64)
    wkv = params.get(f"lfca.kv_proj.{scale}", (1, 2 * d)).astype(np.float64)
    wout = params.get(f"lfca.out_proj.{scale}", (d, c)).astype(np.float64)
    w_k, w_v = wkv[0, :d], wkv[0, d:]
    scores = (x @ (wq @ w_k)) / np.sqrt(d)
    mean_a = _rank1_window_mean(scores, a[:, :, 0], window)
    return (x + mean_a[:, :, None] * (w_v @ wout)).astype(np.float32)


def cross_attend_reference(f_m, f_align, params: ParamStore, scale: int = 0, window: int = 16) -> np.ndarray:
    """Same as :func:`cross_attend` but through explicit Q, K, V and :func:`window_attention`."""
    x = as_hwc(f_m).astype(np.float64)
    a = as_hwc(f_align).astype(np.float64)
    if x.shape[:2] != a.shape[:2]:
        raise ValueError(f"spatial size mismatch: features {x.shape[:2]} vs aligned map {a.shape[:2]}")
    d = params[f"lfca.q_proj.{scale}"].shape[1]
    wkv = params[f"lfca.kv_proj.{scale}"].astype(np.float64)
    q = x @ params[f"lfca.q_proj.{scale}"].astype(np.float64)
    kv = a @ wkv
    attended, _ = window_attention(q, kv[..., :d], kv[..., d:], window)
    return (x + attended @ params[f"lfca.out_proj.{scale}"].astype(np.float64)).astype(np.float32)
