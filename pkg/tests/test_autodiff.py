import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from highlightnet import autodiff as ad
from highlightnet.autodiff import Tape, Tensor, backward, precision
from highlightnet.errors import InvalidArgumentError
from highlightnet.gradcheck import finite_diff_check

from .oracles import conv2d_loops, conv2d_shift, layer_norm_rows, softmax_rows


def grad_of(fn, *values):
    leaves = [Tensor(v, requires_grad=True) for v in values]
    with Tape() as tape:
        out = fn(*leaves)
    backward(out, tape)
    return [t.grad for t in leaves]


# conv2d

def test_conv_zero_input_gives_zero():
    out = ad.conv2d(Tensor(np.zeros((1, 3, 3))), Tensor(np.random.default_rng(0).normal(size=(1, 1, 3, 3))),
                    Tensor(np.zeros(1)), stride=1, padding=1)
    assert out.shape == (1, 3, 3)
    assert np.all(out.data == 0)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).uniform(size=(1, 7, 5)).astype(np.float32)
    k = np.zeros((1, 1, 3, 3), np.float32)
    k[0, 0, 1, 1] = 1
    out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), stride=1, padding=1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_loops_2x8x8():
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=(2, 8, 8)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=1, padding=1)
    np.testing.assert_allclose(out.data, conv2d_loops(x, k, b), atol=1e-5)


@pytest.mark.parametrize("shape,stride", [((8, 32, 32), 1), ((3, 17, 11), 2), ((1, 32, 32), 2), ((5, 9, 14), 1)])
def test_conv_matches_loops_fp64(shape, stride):
    rng = np.random.default_rng(sum(shape))
    x = rng.normal(size=shape)
    k = rng.normal(size=(3, shape[0], 3, 3))
    b = rng.normal(size=3)
    with precision(np.float64):
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=1)
    ref = conv2d_loops(x, k, b, stride=stride)
    assert out.shape == ref.shape
    assert np.max(np.abs(out.data - ref)) <= 1e-6


def test_shift_oracle_agrees_with_loop_oracle():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(3, 10, 9)), rng.normal(size=(2, 3, 3, 3)), rng.normal(size=2)
    for stride in (1, 2):
        np.testing.assert_allclose(conv2d_shift(x, k, b, stride), conv2d_loops(x, k, b, stride), atol=1e-12)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(InvalidArgumentError):
        ad.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


# elementwise_pow

def test_pow_exact():
    assert ad.elementwise_pow(Tensor(0.25), Tensor(0.5)).item() == pytest.approx(0.5, abs=1e-7)


def test_pow_unit_exponent_is_identity():
    base = np.random.default_rng(4).uniform(0.01, 1, (4, 4)).astype(np.float32)
    np.testing.assert_allclose(ad.elementwise_pow(Tensor(base), Tensor(np.ones((4, 4)))).data, base, rtol=1e-6)


def test_pow_gradients_at_generic_point():
    err = finite_diff_check(lambda t: ad.elementwise_pow(t["b"], t["e"]), {"b": np.array(0.3), "e": np.array(0.7)}, h=1e-3)
    assert err < 1e-4
    gb, ge = grad_of(lambda b, e: ad.elementwise_pow(b, e), np.float32(0.3), np.float32(0.7))
    assert float(gb) == pytest.approx(0.7 * 0.3 ** -0.3, rel=1e-5)
    assert float(ge) == pytest.approx(0.3 ** 0.7 * math.log(0.3), rel=1e-5)


# softmax_rows

def test_softmax_uniform_row():
    out = ad.softmax_rows(Tensor(np.full((2, 5), 3.7))).data
    np.testing.assert_allclose(out, 0.2, rtol=1e-6)


def test_softmax_exact():
    out = ad.softmax_rows(Tensor(np.array([[0.0, math.log(3)]]))).data
    np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-7)


def test_softmax_random_matches_fp64():
    x = np.random.default_rng(5).normal(size=(4, 8))
    out = ad.softmax_rows(Tensor(x)).data
    assert np.max(np.abs(out.sum(axis=1) - 1)) <= 1e-6
    np.testing.assert_allclose(out, softmax_rows(x), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    out = ad.softmax_rows(Tensor(x)).data
    assert np.all(out >= 0)
    assert np.max(np.abs(out.sum(axis=1) - 1)) <= 1e-6


# layer_norm

def test_layer_norm_constant_row():
    out = ad.layer_norm(Tensor(np.full((1, 8), 2.5)), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.max(np.abs(out)) <= 1e-2


def test_layer_norm_symmetric_pair():
    out = ad.layer_norm(Tensor(np.array([[-1.0, 1.0]])), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [[-1, 1]], atol=1e-4)


def test_layer_norm_statistics_and_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(2, 3, size=(6, 16))
    out = ad.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data.astype(np.float64)
    assert np.max(np.abs(out.mean(axis=1))) <= 1e-5
    assert np.max(np.abs(out.var(axis=1) - 1)) <= 1e-3
    g, s = rng.normal(size=16), rng.normal(size=16)
    out = ad.layer_norm(Tensor(x), Tensor(g), Tensor(s)).data
    np.testing.assert_allclose(out, layer_norm_rows(x, g, s), atol=1e-5)


def test_layer_norm_gradient():
    rng = np.random.default_rng(7)
    c = rng.uniform(-1, 1, (3, 5))
    err = finite_diff_check(lambda t: (ad.layer_norm(t["x"], t["g"], t["s"]) * c).sum(),
                            {"x": rng.normal(size=(3, 5)), "g": rng.normal(size=5), "s": rng.normal(size=5)})
    assert err < 1e-4


# backward

def test_backward_sum_gives_ones():
    (g,) = grad_of(lambda x: x.sum(), np.random.default_rng(8).normal(size=(2, 3, 4)))
    np.testing.assert_array_equal(g, np.ones((2, 3, 4)))


def test_backward_square():
    (g,) = grad_of(lambda x: (x * x).sum(), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(g, [2, 4, 6])


def test_backward_accumulates_fan_out():
    (g,) = grad_of(lambda x: (x + x + x).sum(), np.array([0.5]))
    np.testing.assert_allclose(g, [3.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(InvalidArgumentError):
        backward(y, tape)


def test_relu_subgradient_at_zero():
    (g,) = grad_of(lambda x: ad.relu(x).sum(), np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(g, [0, 0, 1])


def test_unsupported_broadcast_rejected():
    with pytest.raises(InvalidArgumentError):
        Tensor(np.ones((3, 4))) + Tensor(np.ones((4, 3)))


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).data.dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_tape_reports_first_nonfinite():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True, name="x")
    with Tape() as tape, np.errstate(divide="ignore"):
        y = ad.log(x)
        (y * 2.0).sum()
    hit = tape.first_nonfinite()
    assert hit is not None and hit[1].op == "log"
