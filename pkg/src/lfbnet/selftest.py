"""Embedded invariant suite behind the ``selftest`` subcommand.

Every check is a small closed-form or brute-force comparison that runs in
milliseconds. ``run_selftest(inject="wrap")`` swaps in a sign-flipped phase
wrap for the duration of the run so the harness itself can be tested.
"""
from __future__ import annotations

import contextlib
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fgsa, lfca, lfgm, metrics, spectral
from .gradcheck import check_gradient
from .metrics import BBox, Detection
from .tensor_core import ParamStore, conv2d

__all__ = ["CHECKS", "FAULTS", "CheckResult", "SelfTestReport", "run_selftest"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class SelfTestReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_checks": len(self.checks),
            "failed": self.failed,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }


def _rng():
    return np.random.default_rng(20240917)


def _dft2(x):
    p = x.shape[-1]
    k = np.arange(p)
    w = np.exp(-2j * np.pi * np.outer(k, k) / p)
    return w @ x @ w


def _max_err(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _expect(cond: bool, detail: str):
    if not cond:
        raise AssertionError(detail)
    return detail


# -- spectral -------------------------------------------------------------------


def check_fft_vs_dft():
    x = _rng().standard_normal((10, 8, 8))
    err = _max_err(spectral.fft2d(x), np.stack([_dft2(p) for p in x]))
    return _expect(err < 1e-9, f"max abs error {err:.2e}")


def check_fft_roundtrip():
    x = _rng().standard_normal((10, 16, 16))
    err = _max_err(spectral.ifft2d(spectral.fft2d(x)), x)
    return _expect(err < 1e-12, f"max abs error {err:.2e}")


def check_parseval():
    x = _rng().standard_normal((16, 16))
    lhs = np.sum(x**2)
    rhs = np.sum(np.abs(spectral.fft2d(x)) ** 2) / 256
    return _expect(abs(lhs - rhs) / lhs < 1e-12, f"energy {lhs:.6g} vs {rhs:.6g}")


def check_fft_dc_is_sum():
    x = _rng().standard_normal((8, 8))
    err = abs(spectral.fft2d(x)[0, 0] - x.sum())
    return _expect(err < 1e-12, f"dc error {err:.2e}")


def check_wrap_bounds():
    a = np.concatenate([np.linspace(-20, 20, 4001), [np.pi, -np.pi, 3 * np.pi]])
    w = spectral.wrap(a)
    return _expect(bool(np.all(w >= -np.pi) and np.all(w < np.pi)), f"range [{w.min():.4f}, {w.max():.4f}]")


def check_wrap_congruence():
    a = np.linspace(-20, 20, 4001)
    k = (a - spectral.wrap(a)) / (2 * np.pi)
    err = float(np.max(np.abs(k - np.round(k))))
    return _expect(err < 1e-9, f"distance from a multiple of 2pi {err:.2e}")


def check_decompose_compose():
    spec = spectral.fft2d(_rng().standard_normal((16, 16)))
    amp, ph = spectral.decompose(spec)
    err = _max_err(spectral.compose(amp, ph), spec)
    return _expect(err < 1e-10, f"max abs error {err:.2e}")


def check_overlap_add_identity():
    img = _rng().standard_normal((64, 64))
    grid = spectral.PatchGrid(64, 64)
    err = _max_err(spectral.overlap_add(spectral.partition(img, grid), grid), img)
    return _expect(err < 1e-12, f"max abs error {err:.2e}")


# -- alignment --------------------------------------------------------------------


def check_normalize_unit_norm():
    a = lfca.normalize_amplitude(np.abs(_rng().standard_normal((5, 16, 16))), eps=0.0)
    norms = np.sqrt(np.sum(a**2, axis=(-2, -1)))
    return _expect(_max_err(norms, 1.0) < 1e-12, f"norms {norms.min():.12f}..{norms.max():.12f}")


def check_blend_convex():
    rng = _rng()
    a_r, a_t = np.abs(rng.standard_normal((2, 50, 8, 8)))
    alpha = rng.uniform(0, 1, 50)
    out = lfca.blend_amplitude(a_r, a_t, alpha)
    lo, hi = np.minimum(a_r, a_t), np.maximum(a_r, a_t)
    return _expect(bool(np.all(out >= lo - 1e-15) and np.all(out <= hi + 1e-15)), "blend within elementwise bounds")


def check_phase_endpoints():
    rng = _rng()
    pr, pt = rng.uniform(-np.pi, np.pi, (2, 16, 16))
    e0 = _max_err(spectral.wrap(lfca.align_phase(pr, pt, 0.0) - pt), 0.0)
    e1 = _max_err(spectral.wrap(lfca.align_phase(pr, pt, 1.0) - pr), 0.0)
    return _expect(max(e0, e1) < 1e-12, f"beta=0 error {e0:.2e}, beta=1 error {e1:.2e}")


def check_phase_interpolation_distance():
    rng = _rng()
    pr, pt = rng.uniform(-np.pi, np.pi, (2, 16, 16))
    beta = 0.3
    moved = np.abs(spectral.wrap(lfca.align_phase(pr, pt, beta) - pt))
    expected = beta * np.abs(spectral.wrap(pr - pt))
    err = _max_err(moved, expected)
    return _expect(err < 1e-12, f"arc length error {err:.2e}")


# -- guidance ---------------------------------------------------------------------


def check_coherence_bounds():
    rng = _rng()
    a = spectral.fft2d(rng.standard_normal((50, 16, 16)))
    b = spectral.fft2d(rng.standard_normal((50, 16, 16)))
    coh = lfgm.coherence(a, b)
    return _expect(bool(np.all((coh >= 0) & (coh <= 1))), f"range [{coh.min():.4f}, {coh.max():.4f}]")


def check_coherence_identical():
    a = spectral.fft2d(_rng().standard_normal((16, 16)))
    coh = float(lfgm.coherence(a, a))
    return _expect(coh == 1.0, f"coherence {coh!r}")


def check_guidance_identical_patch():
    a = spectral.fft2d(_rng().standard_normal((16, 16)))
    got = lfgm.guidance_vector(a, a).as_array()
    want = np.array([0.0, 1.0, 0.0, 0.5, 0.5, 1.0])
    return _expect(bool(np.array_equal(got, want)), f"vector {got.tolist()}")


def check_guidance_bounds():
    rng = _rng()
    v = lfgm.guidance_vectors(spectral.fft2d(rng.standard_normal((50, 16, 16))), spectral.fft2d(rng.standard_normal((50, 16, 16))))
    ok = (
        np.all(v[:, 0] ** 2 + v[:, 1] ** 2 <= 1 + 1e-12)
        and np.all((v[:, 2] >= 0) & (v[:, 2] <= np.pi))
        and np.all((v[:, 3:] >= 0) & (v[:, 3:] <= 1))
    )
    return _expect(bool(ok), "displacement, spread and reliability within bounds")


def check_reliability_zero_rule():
    z = np.zeros((16, 16), dtype=complex)
    a = spectral.fft2d(_rng().standard_normal((16, 16)))
    v = lfgm.guidance_vector(z, z).as_array()
    w = lfgm.guidance_vector(a, z).as_array()
    ok = v[3] == 0.5 and v[4] == 0.5 and v[5] == 0.0 and w[3] == 1.0
    return _expect(bool(ok), f"zero/zero {v[3:].tolist()}, signal/zero C_hf {w[3]}")


# -- spatial sampling -------------------------------------------------------------


def check_deformable_identity():
    f = _rng().standard_normal((12, 10, 3)).astype(np.float32)
    w = np.zeros((9, 3))
    w[4] = 1.0
    out = fgsa.deformable_sample(f, np.zeros((12, 10, 18)), w)
    return _expect(bool(np.array_equal(out, f)), f"max abs error {_max_err(out, f):.2e}")


def check_deformable_box_blur():
    f = _rng().standard_normal((12, 10, 2)).astype(np.float32)
    out = fgsa.deformable_sample(f, np.zeros((12, 10, 18)), np.full((9, 2), 1.0 / 9))
    fp = np.pad(f.astype(np.float64), ((1, 1), (1, 1), (0, 0)))
    ref = sum(fp[i : i + 12, j : j + 10] for i in range(3) for j in range(3)) / 9
    err = _max_err(out, ref)
    return _expect(err < 1e-6, f"max abs error {err:.2e}")


def check_bilinear_affine():
    yy, xx = np.mgrid[0:10, 0:10].astype(np.float64)
    plane = 0.5 + 0.25 * xx - 0.125 * yy
    rng = _rng()
    x, y = rng.uniform(0, 8.99, 40), rng.uniform(0, 8.99, 40)
    got = fgsa.bilinear_sample(plane, x, y)[:, 0]
    err = _max_err(got, 0.5 + 0.25 * x - 0.125 * y)
    return _expect(err < 1e-12, f"max abs error {err:.2e}")


def check_conv_vs_loops():
    rng = _rng()
    x = rng.standard_normal((7, 6, 2))
    k = rng.standard_normal((3, 3, 2, 2))
    got = conv2d(x, k, padding="zero")
    xp = np.pad(x.astype(np.float32).astype(np.float64), ((1, 1), (1, 1), (0, 0)))
    ref = np.zeros((7, 6, 2))
    for r in range(7):
        for c in range(6):
            for i in range(3):
                for j in range(3):
                    ref[r, c] += xp[r + i, c + j] @ k[i, j]
    err = _max_err(got, ref)
    return _expect(err < 1e-10, f"max abs error {err:.2e}")


def check_param_roundtrip():
    store = ParamStore({"a": np.arange(6.0).reshape(2, 3), "b": [1.5]}, {"note": 1.0})
    with tempfile.TemporaryDirectory() as tmp:
        back = ParamStore.load(store.save(Path(tmp) / "w.json"))
    ok = set(back.entries) == {"a", "b"} and all(np.array_equal(back[k], store[k]) for k in store.entries)
    return _expect(bool(ok), "manifest and blob round trip")


# -- evaluation -------------------------------------------------------------------


def check_iou_cases():
    v = metrics.iou(BBox(0, 0, 2, 2), BBox(1, 0, 2, 2))
    ok = v == 1 / 3 and metrics.iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0
    return _expect(ok, f"shifted-box IoU {v!r}")


def check_ap_oracle():
    ap = metrics.average_precision([True, False, True], 2)
    return _expect(abs(ap - 5 / 6) < 1e-12, f"AP {ap!r}")


def check_match_injective():
    gts = {"a": [BBox(0, 0, 10, 10)]}
    dets = [Detection("a", BBox(0, 0, 10, 10), 0.9), Detection("a", BBox(1, 0, 10, 10), 0.8)]
    m = metrics.match(dets, gts, 0.5)
    return _expect(m.tp == (True, False) and m.n_fn == 0, f"flags {m.tp}")


def check_ap_range_mean():
    gts = {"a": [BBox(0, 0, 10, 10)]}
    rep = metrics.ap_range([Detection("a", BBox(0, 0, 6, 10), 0.9)], gts)
    return _expect(rep.ap_range == 0.3, f"AP range {rep.ap_range!r}")


def check_gradient_blend():
    rep = check_gradient("blend_alpha", 0.3)
    return _expect(rep.passed, f"max relative error {rep.worst:.2e}")


CHECKS = (
    ("fft_vs_dft", check_fft_vs_dft),
    ("fft_roundtrip", check_fft_roundtrip),
    ("parseval", check_parseval),
    ("fft_dc_is_sum", check_fft_dc_is_sum),
    ("wrap_bounds", check_wrap_bounds),
    ("wrap_congruence", check_wrap_congruence),
    ("decompose_compose", check_decompose_compose),
    ("overlap_add_identity", check_overlap_add_identity),
    ("normalize_unit_norm", check_normalize_unit_norm),
    ("blend_convex", check_blend_convex),
    ("phase_endpoints", check_phase_endpoints),
    ("phase_interpolation_distance", check_phase_interpolation_distance),
    ("coherence_bounds", check_coherence_bounds),
    ("coherence_identical", check_coherence_identical),
    ("guidance_identical_patch", check_guidance_identical_patch),
    ("guidance_bounds", check_guidance_bounds),
    ("reliability_zero_rule", check_reliability_zero_rule),
    ("deformable_identity", check_deformable_identity),
    ("deformable_box_blur", check_deformable_box_blur),
    ("bilinear_affine", check_bilinear_affine),
    ("conv_vs_loops", check_conv_vs_loops),
    ("param_roundtrip", check_param_roundtrip),
    ("iou_cases", check_iou_cases),
    ("ap_oracle", check_ap_oracle),
    ("match_injective", check_match_injective),
    ("ap_range_mean", check_ap_range_mean),
    ("gradient_blend", check_gradient_blend),
)


def _flipped_wrap(original):
    def wrap(angle):
        out = original(angle)
        return -out
    return wrap


FAULTS = {"wrap": (spectral, "wrap", _flipped_wrap)}


@contextlib.contextmanager
def _injected(fault: str | None):
    if fault is None:
        yield
        return
    if fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; known: {', '.join(FAULTS)}")
    module, attr, make = FAULTS[fault]
    original = getattr(module, attr)
    setattr(module, attr, make(original))
    try:
        yield
    finally:
        setattr(module, attr, original)


def run_selftest(inject: str | None = None) -> SelfTestReport:
    """Run every check; ``inject`` names a test-only fault to switch on first."""
    results = []
    with _injected(inject):
        for name, fn in CHECKS:
            try:
                detail = fn()
                results.append(CheckResult(name, True, str(detail)))
            except Exception as exc:  # a crashing check is a failing check
                results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return SelfTestReport(tuple(results))
