"""Analytic-vs-finite-difference gradient checks for the learnable pathways.

Each supported op pairs a float64 forward with a hand-written backward.
``check_gradient`` perturbs every parameter by ``+-eps`` and compares the
central difference against the analytic value. Where the forward has a kink
inside the stencil (bilinear cell borders) the difference is taken on the
side that stays in the current cell and the looser tolerance applies.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import fgsa, lfca, spectral
from .tensor_core import conv2d, conv2d_weight_grad, sigmoid

__all__ = ["SUPPORTED_OPS", "TOL", "TOL_KINK", "GradReport", "check_gradient", "relative_error"]

TOL = 1e-4
TOL_KINK = 1e-3
ERR_FLOOR = 1e-6


def relative_error(analytic, numeric) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-6)`` elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), ERR_FLOOR)


@dataclass(frozen=True)
class GradReport:
    op: str
    point: list
    max_rel_error: dict = field(default_factory=dict)
    mean_rel_error: dict = field(default_factory=dict)
    tolerance: float = TOL
    near_kink: bool = False

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "op": self.op,
            "point": self.point,
            "max_rel_error": self.max_rel_error,
            "mean_rel_error": self.mean_rel_error,
            "tolerance": self.tolerance,
            "near_kink": self.near_kink,
            "passed": self.passed,
        }


def _report(op, point, errors: dict, tol=TOL, kink=False) -> GradReport:
    return GradReport(
        op=op,
        point=np.asarray(point, dtype=np.float64).ravel().tolist(),
        max_rel_error={k: float(np.max(v)) for k, v in errors.items()},
        mean_rel_error={k: float(np.mean(v)) for k, v in errors.items()},
        tolerance=tol,
        near_kink=kink,
    )


def _central(f, theta: np.ndarray, eps: float) -> np.ndarray:
    """Jacobian columns d f / d theta_i by central differences (theta flat)."""
    cols = []
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp.flat[i] += eps
        tm.flat[i] -= eps
        cols.append((np.asarray(f(tp)) - np.asarray(f(tm))) / (2 * eps))
    return np.stack(cols, axis=-1)


# -- amplitude blend w.r.t. alpha --------------------------------------------


def _blend_alpha(point, eps, rng):
    alpha = float(rng.uniform(0.05, 0.95) if point is None else np.asarray(point).ravel()[0])
    a_r = lfca.normalize_amplitude(np.abs(rng.standard_normal((8, 8))))
    a_t = lfca.normalize_amplitude(np.abs(rng.standard_normal((8, 8))))
    analytic = a_r - a_t
    f = lambda a: lfca.blend_amplitude(a_r, a_t, a)
    lo, hi = alpha - eps, alpha + eps
    if lo < 0 or hi > 1:
        # stay inside [0, 1]; the map is linear so one side is as good as the other
        lo, hi = (alpha, alpha + eps) if lo < 0 else (alpha - eps, alpha)
    numeric = (f(hi) - f(lo)) / (hi - lo)
    return _report("blend_alpha", [alpha], {"alpha": relative_error(analytic, numeric)})


# -- phase alignment w.r.t. beta ----------------------------------------------


def _phase_beta(point, eps, rng):
    beta = float(rng.uniform(0.05, 0.95) if point is None else np.asarray(point).ravel()[0])
    ph_r = rng.uniform(-np.pi, np.pi, (8, 8))
    ph_t = rng.uniform(-np.pi, np.pi, (8, 8))
    analytic = spectral.wrap(ph_r - ph_t)
    lo, hi = max(beta - eps, 0.0), min(beta + eps, 1.0)
    # the output lives on the circle: difference the two evaluations there
    step = spectral.wrap(lfca.align_phase(ph_r, ph_t, hi) - lfca.align_phase(ph_r, ph_t, lo))
    numeric = step / (hi - lo)
    return _report("phase_beta", [beta], {"beta": relative_error(analytic, numeric)})


# -- sigmoid gate w.r.t. its 1x1 conv weights --------------------------------


def _gate_weights(point, eps, rng, c=2, g=6):
    shape = (1, 1, 2 * c, g)
    w = rng.standard_normal(shape) * 0.5 if point is None else np.broadcast_to(np.asarray(point, float), shape).copy()
    b = rng.standard_normal(g) * 0.1
    x = rng.standard_normal((6, 6, 2 * c))
    guide = rng.uniform(0, 1, (6, 6, g))
    cot = rng.standard_normal((6, 6, g))

    def loss(wf):
        z = conv2d(x, wf.reshape(shape), b, dtype=np.float64)
        return np.sum(cot * sigmoid(z) * guide)

    z = conv2d(x, w, b, dtype=np.float64)
    s = sigmoid(z)
    analytic = conv2d_weight_grad(x, cot * guide * s * (1 - s), shape)
    numeric = _central(loss, w.ravel(), eps).reshape(shape)
    return _report("gate_weights", w, {"weight": relative_error(analytic, numeric)})


# -- bilinear sampling w.r.t. coordinates --------------------------------------


def _bilinear_coords(point, eps, rng, size=12, n=8):
    feat = gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(2, 2, 0))
    if point is None:
        xy = rng.uniform(1.0, size - 2.0, (2, n))
    else:
        xy = np.asarray(point, dtype=np.float64).reshape(2, -1)
    x, y = xy
    ax, ay = fgsa.bilinear_grad(feat, x, y)

    def stencil(coord):
        # central away from cell borders; near one, the side that stays in the cell
        frac = coord - np.floor(coord)
        near = (frac < eps) | (frac > 1 - eps)
        lo = np.where(near, np.where(frac < eps, coord, coord - eps), coord - eps)
        hi = np.where(near, np.where(frac < eps, coord + eps, coord), coord + eps)
        return lo, hi, near

    xl, xh, kx = stencil(x)
    yl, yh, ky = stencil(y)
    num_x = (fgsa.bilinear_sample(feat, xh, y) - fgsa.bilinear_sample(feat, xl, y)) / (xh - xl)[:, None]
    num_y = (fgsa.bilinear_sample(feat, x, yh) - fgsa.bilinear_sample(feat, x, yl)) / (yh - yl)[:, None]
    kink = bool(np.any(kx | ky))
    errors = {"x": relative_error(ax, num_x), "y": relative_error(ay, num_y)}
    return _report("bilinear_coords", xy, errors, TOL_KINK if kink else TOL, kink)


# -- convolution w.r.t. weights -------------------------------------------------


def _conv_weights(point, eps, rng, cin=2, cout=3):
    shape = (3, 3, cin, cout)
    k = rng.standard_normal(shape) if point is None else np.broadcast_to(np.asarray(point, float), shape).copy()
    x = rng.standard_normal((8, 8, cin))
    cot = rng.standard_normal((8, 8, cout))

    def loss(kf):
        return np.sum(cot * conv2d(x, kf.reshape(shape), dtype=np.float64))

    analytic = conv2d_weight_grad(x, cot, shape)
    numeric = _central(loss, k.ravel(), eps).reshape(shape)
    return _report("conv_weights", k, {"kernel": relative_error(analytic, numeric)})


_OPS = {
    "blend_alpha": _blend_alpha,
    "phase_beta": _phase_beta,
    "gate_weights": _gate_weights,
    "bilinear_coords": _bilinear_coords,
    "conv_weights": _conv_weights,
}
SUPPORTED_OPS = tuple(_OPS)


def check_gradient(op_id: str, point=None, eps: float = 1e-3, seed: int = 0) -> GradReport:
    """Compare analytic and finite-difference gradients of one op.

    Parameters
    ----------
    op_id : str
        One of :data:`SUPPORTED_OPS`.
    point : array_like, optional
        Where to evaluate: alpha or beta (scalar), gate or conv weights
        (broadcast to the weight shape), or stacked ``(x, y)`` coordinates
        for bilinear sampling. Drawn from ``seed`` when omitted.
    eps : float
        Finite-difference step.
    seed : int
        Seeds the fixed data (patches, maps, cotangents) around the point.
    """
    if op_id not in _OPS:
        raise ValueError(f"no analytic backward for {op_id!r}; supported ops: {', '.join(SUPPORTED_OPS)}")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    return _OPS[op_id](point, eps, np.random.default_rng(seed))
