import numpy as np
import pytest

from lfbnet import gradcheck
from lfbnet.tensor_core import sigmoid


@pytest.mark.parametrize("op", gradcheck.SUPPORTED_OPS)
def test_twenty_random_points(op):
    reports = [gradcheck.check_gradient(op, seed=s) for s in range(20)]
    worst = max(r.worst for r in reports)
    assert all(r.passed for r in reports), f"{op}: worst relative error {worst:.3g}"


def test_blend_alpha_is_exact_for_linear_map():
    r = gradcheck.check_gradient("blend_alpha", point=0.3)
    assert r.worst < 1e-6 and r.point == [0.3]


def test_sigmoid_derivative_closed_form():
    x, h = 0.7, 1e-5
    s = sigmoid(x)
    numeric = (sigmoid(x + h) - sigmoid(x - h)) / (2 * h)
    assert abs(numeric - s * (1 - s)) < 1e-6


def test_bilinear_at_chosen_point():
    r = gradcheck.check_gradient("bilinear_coords", point=[[3.37, 5.5], [4.61, 2.25]])
    assert r.passed and not r.near_kink and r.tolerance == gradcheck.TOL


def test_bilinear_near_kink_uses_relaxed_tolerance():
    r = gradcheck.check_gradient("bilinear_coords", point=[[3.0, 5.5], [4.5, 2.0]])
    assert r.near_kink and r.tolerance == gradcheck.TOL_KINK and r.passed


def test_relative_error_floor():
    assert gradcheck.relative_error(0.0, 1e-9) == pytest.approx(1e-3)
    assert gradcheck.relative_error(2.0, 1.0) == 0.5


def test_unknown_op_lists_supported():
    with pytest.raises(ValueError) as exc:
        gradcheck.check_gradient("softmax")
    for op in gradcheck.SUPPORTED_OPS:
        assert op in str(exc.value)
    with pytest.raises(ValueError, match="eps"):
        gradcheck.check_gradient("conv_weights", eps=0)


def test_report_dict():
    d = gradcheck.check_gradient("conv_weights", seed=1).to_dict()
    assert d["op"] == "conv_weights" and d["passed"] and len(d["point"]) == 3 * 3 * 2 * 3
    assert all(v >= 0 for v in d["max_rel_error"].values())
