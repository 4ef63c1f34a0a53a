#!/usr/bin/env python3
"""
Tensor core tests
Checks every op against finite differences in 64-bit, the gather
identity / clamp contracts and its brute-force loop oracle
"""

import logging
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from ucip.errors import NumericOverflowError, ShapeMismatchError, UcipError
from ucip.numerics import (
    Tensor,
    add,
    concat,
    conv3x3,
    depthwise_conv3x3,
    gather_along,
    gelu,
    gradcheck,
    instance_norm,
    leaky_relu,
    linear,
    mean_abs_error,
    mul,
    no_grad,
    precision,
    reshape,
    scale,
    slice_axis,
    softmax,
    spatial_mean,
    sub,
    sum_all,
    upsample_nearest2x,
)

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


def t64(array, grad=True):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def check(op, inputs, seed=0):
    """Gradcheck of sum(op(*inputs) * R)"""
    weight_rng = np.random.default_rng(seed + 100)
    with precision(np.float64):
        out_shape = op(*inputs).shape
        r = t64(weight_rng.uniform(-1.0, 1.0, size=out_shape), grad=False)
        report = gradcheck(lambda: sum_all(mul(op(*inputs), r)), list(inputs))
    assert report.passed(TOLERANCE), report
    return report


def away_from_zero(rng, shape, low=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


def test_elementwise_gradients_with_broadcast():
    rng = np.random.default_rng(0)
    a = t64(rng.normal(size=(2, 3, 4, 5)))
    b = t64(rng.normal(size=(1, 1, 1, 5)))
    check(add, [a, b])
    check(sub, [a, b])
    check(mul, [a, b])
    check(lambda x: scale(x, -2.5), [a])


def test_linear_gradients():
    rng = np.random.default_rng(1)
    x = t64(rng.normal(size=(2, 3, 3, 4)))
    w = t64(rng.normal(size=(4, 6)))
    b = t64(rng.normal(size=(6,)))
    check(linear, [x, w, b])


def test_softmax_normalises_and_differentiates():
    rng = np.random.default_rng(2)
    x = t64(rng.normal(size=(2, 3, 3, 5)) * 3)
    y = softmax(x, axis=-1)
    assert np.all(np.abs(y.data.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all(y.data >= 0)
    check(lambda v: softmax(v, axis=1), [x])


def test_gelu_and_leaky_relu_gradients():
    rng = np.random.default_rng(3)
    check(gelu, [t64(rng.normal(size=(1, 4, 4, 3)))])
    check(leaky_relu, [t64(away_from_zero(rng, (1, 4, 4, 3)))])


def test_leaky_relu_slope():
    y = leaky_relu(Tensor([[-1.0, 2.0]], dtype=np.float64))
    assert np.allclose(y.data, [[-0.2, 2.0]])


def test_instance_norm_statistics_and_gradients():
    rng = np.random.default_rng(4)
    x = t64(rng.normal(loc=3.0, scale=2.0, size=(2, 16, 16, 4)))
    y = instance_norm(x).data
    assert np.all(np.abs(y.mean(axis=(1, 2))) <= 1e-5)
    assert np.all(np.abs(y.var(axis=(1, 2)) - 1.0) <= 1e-3)
    check(instance_norm, [t64(rng.normal(size=(1, 4, 5, 3)))])


def test_conv_gradients():
    rng = np.random.default_rng(5)
    x = t64(rng.normal(size=(2, 5, 4, 3)))
    check(conv3x3, [x, t64(rng.normal(size=(3, 3, 3, 2))), t64(rng.normal(size=(2,)))])
    check(depthwise_conv3x3, [x, t64(rng.normal(size=(3, 3, 3))), t64(rng.normal(size=(3,)))])


def test_conv3x3_identity_kernel():
    rng = np.random.default_rng(6)
    x = t64(rng.normal(size=(1, 6, 7, 2)), grad=False)
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)
    assert np.array_equal(conv3x3(x, t64(w, grad=False)).data, x.data)


def test_reductions_and_reshaping_gradients():
    rng = np.random.default_rng(7)
    x = t64(rng.normal(size=(2, 3, 4, 2)))
    check(spatial_mean, [x])
    check(upsample_nearest2x, [x])
    check(lambda v: reshape(v, (6, 8)), [x])
    check(lambda v: slice_axis(v, 1, 3, axis=2), [x])
    y = t64(rng.normal(size=(2, 3, 4, 3)))
    check(lambda u, v: concat([u, v], axis=-1), [x, y])


def test_upsample_nearest2x_shape():
    x = Tensor(np.arange(6.0).reshape(1, 2, 3, 1))
    y = upsample_nearest2x(x)
    assert y.shape == (1, 4, 6, 1)
    assert y.data[0, 3, 5, 0] == 5.0


def test_mean_abs_error_gradients():
    rng = np.random.default_rng(8)
    b = rng.normal(size=(2, 4, 4, 3))
    a = b + away_from_zero(rng, b.shape)
    with precision(np.float64):
        a_t, b_t = t64(a), t64(b)
        report = gradcheck(lambda: mean_abs_error(a_t, b_t), [a_t, b_t])
    assert report.passed(TOLERANCE), report


def brute_force_recompose(x, offsets, axis):
    out = np.empty_like(x)
    n_, h, w, c_ = x.shape
    extent = x.shape[axis]
    for n in range(n_):
        for i in range(h):
            for j in range(w):
                for c in range(c_):
                    own = i if axis == 1 else j
                    pos = min(max(float(own) + offsets[n, i, j, c], 0.0), float(extent - 1))
                    lo = min(int(np.floor(pos)), extent - 2)
                    t = pos - lo
                    if axis == 1:
                        a, b = x[n, lo, j, c], x[n, lo + 1, j, c]
                    else:
                        a, b = x[n, i, lo, c], x[n, i, lo + 1, c]
                    out[n, i, j, c] = (1 - t) * a + t * b
    return out


def test_gather_along_zero_offsets_is_identity():
    rng = np.random.default_rng(9)
    x = t64(rng.normal(size=(1, 5, 7, 3)), grad=False)
    zeros = t64(np.zeros(x.shape), grad=False)
    for axis in (1, 2):
        assert np.array_equal(gather_along(x, zeros, axis).data, x.data)


def test_gather_along_shift_and_clamp():
    ramp = np.array([0.0, 1.0, 2.0]).reshape(1, 3, 1, 1)
    x = t64(np.repeat(ramp, 2, axis=2), grad=False)
    y = gather_along(x, t64(np.ones(x.shape), grad=False), axis=1)
    assert np.array_equal(y.data[0, :, 0, 0], [1.0, 2.0, 2.0])


def test_gather_along_matches_loop_oracle():
    rng = np.random.default_rng(10)
    for case in range(50):
        h, w, c = (int(v) for v in rng.integers(2, 7, size=3))
        axis = 1 + case % 2
        x = rng.normal(size=(1, h, w, c))
        offsets = rng.uniform(-4.0, 4.0, size=x.shape)
        got = gather_along(t64(x, grad=False), t64(offsets, grad=False), axis).data
        assert np.array_equal(got, brute_force_recompose(x, offsets, axis)), f"case {case}"


def test_gather_along_gradients_at_fractional_offsets():
    rng = np.random.default_rng(11)
    x = t64(rng.normal(size=(1, 5, 6, 2)))
    offsets = rng.integers(-2, 3, size=x.shape) + rng.uniform(0.2, 0.8, size=x.shape)
    off = t64(offsets)
    for axis in (1, 2):
        report = check(lambda a, o: gather_along(a, o, axis), [x, off], seed=axis)
        assert report.skipped == 0


def test_gather_along_single_row_passes_through():
    x = t64(np.arange(4.0).reshape(1, 1, 4, 1), grad=False)
    y = gather_along(x, t64(np.full(x.shape, 0.7), grad=False), axis=1)
    assert np.array_equal(y.data, x.data)


def test_gradcheck_skips_entries_on_a_kink():
    with precision(np.float64):
        x = t64([[[[0.0, 0.5]]]])
        report = gradcheck(lambda: sum_all(leaky_relu(x)), [x])
    assert report.skipped == 1
    assert report.checked == 1


def test_shape_mismatch_is_reported():
    a = Tensor(np.zeros((1, 2, 2, 3)))
    with pytest.raises(ShapeMismatchError) as excinfo:
        add(a, Tensor(np.zeros((1, 2, 2, 4))))
    assert "add" in str(excinfo.value)
    with pytest.raises(ShapeMismatchError):
        linear(a, Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeMismatchError):
        gather_along(a, Tensor(np.zeros((1, 2, 3, 3))), axis=1)


def test_non_finite_results_raise():
    with np.errstate(over="ignore"):
        with pytest.raises(NumericOverflowError) as excinfo:
            scale(Tensor([1e308], dtype=np.float64), 10.0)
    assert excinfo.value.op == "scale"


def test_backward_accumulates_over_reuse():
    x = t64([2.0, -3.0])
    sum_all(mul(x, x)).backward()
    assert np.allclose(x.grad, [4.0, -6.0])


def test_backward_needs_scalar():
    x = t64([1.0, 2.0])
    with pytest.raises(UcipError):
        mul(x, x).backward()


def test_no_grad_builds_no_graph():
    x = t64([1.0, 2.0])
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad
    assert y.is_leaf


def test_default_precision_is_32_bit():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        try:
            fn()
            logger.info(f"✅ {name}")
        except Exception as e:
            failed += 1
            logger.error(f"❌ {name} - {e!r}")
    logger.info(f"🎯 {len(tests) - failed}/{len(tests)} passed")
    sys.exit(1 if failed else 0)
