import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodnet import autodiff as ad
from prodnet.errors import NumericError, ShapeError


def test_forward_definitions():
    assert ad.sigmoid(0.0).item() == 0.5
    assert ad.leaky_relu(-1.0, 0.2).item() == pytest.approx(-0.2, abs=0)
    np.testing.assert_array_equal(ad.concat([[1.0, 2.0], [3.0]], axis=0).data, [1.0, 2.0, 3.0])


def test_square_gradient():
    x = ad.parameter(3.0)
    (g,) = ad.backward(ad.mul(x, x), [x])
    assert g == 6.0


def test_sigmoid_sum_gradient_at_zero():
    x = ad.parameter(np.zeros(4))
    (g,) = ad.backward(ad.tsum(ad.sigmoid(x)), [x])
    np.testing.assert_allclose(g, 0.25, rtol=0, atol=0)


def test_unused_parameter_gets_zero():
    x, unused = ad.parameter([1.0, 2.0]), ad.parameter([[5.0]])
    gx, gu = ad.backward(ad.tsum(ad.mul(x, x)), [x, unused])
    np.testing.assert_array_equal(gx, [2.0, 4.0])
    np.testing.assert_array_equal(gu, [[0.0]])


def test_fan_out_accumulates():
    # f = x*x + 3x + x*y with x used four times; df/dx = 2x + 3 + y, df/dy = x
    x, y = ad.parameter(1.5), ad.parameter(-2.0)
    f = ad.add(ad.add(ad.mul(x, x), ad.mul(3.0, x)), ad.mul(x, y))
    gx, gy = ad.backward(f, [x, y])
    assert gx == pytest.approx(2 * 1.5 + 3 - 2.0, abs=1e-15)
    assert gy == pytest.approx(1.5, abs=1e-15)


def test_backward_clears_tape():
    x = ad.parameter([1.0, 2.0])
    mid = ad.mul(x, x)
    loss = ad.tsum(mid)
    ad.backward(loss)
    assert loss._parents == () and mid._parents == ()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    x = ad.parameter([1.0, 2.0])
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(x, x))


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(np.ones((2, 3)), np.ones((4, 5)))
    with pytest.raises(ShapeError):
        ad.add(np.ones(3), np.ones(4))


def test_non_finite_raises():
    with pytest.raises(NumericError):
        ad.log(ad.tensor([0.0]))
    with pytest.raises(NumericError):
        ad.exp(ad.tensor([1e4]))


def test_sigmoid_extremes_are_stable():
    out = ad.sigmoid(ad.tensor([-800.0, 800.0])).data
    assert out[0] == 0.0 and out[1] == 1.0


# -- segment softmax ----------------------------------------------------------

def test_segment_softmax_examples():
    np.testing.assert_allclose(ad.segment_softmax([1.3, 1.3], [0, 0]).data, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(ad.segment_softmax([7.0], [0]).data, [1.0], atol=0)
    np.testing.assert_allclose(ad.segment_softmax([0.0, math.log(3.0)], [0, 0]).data, [0.25, 0.75], atol=1e-15)


def test_segment_softmax_skips_empty_segments():
    w = ad.segment_softmax([1.0, 2.0, 0.5], [0, 0, 3], num_segments=5).data
    assert w.shape == (3,)
    assert w[2] == 1.0


@settings(max_examples=60, deadline=None)
@given(
    n_edges=st.integers(1, 40),
    n_seg=st.integers(1, 8),
    seed=st.integers(0, 2**31 - 1),
    shift=st.floats(-50, 50),
)
def test_segment_softmax_properties(n_edges, n_seg, seed, shift):
    rng = np.random.default_rng(seed)
    seg = rng.integers(0, n_seg, size=n_edges)
    scores = rng.normal(scale=3.0, size=n_edges)
    w = ad.segment_softmax(scores, seg, n_seg).data
    assert (w > 0).all()
    for s in np.unique(seg):
        assert abs(w[seg == s].sum() - 1.0) <= 1e-12
    shifted = scores + shift * np.ones(n_edges)
    np.testing.assert_allclose(ad.segment_softmax(shifted, seg, n_seg).data, w, rtol=0, atol=1e-12)


# -- per-primitive gradient checks --------------------------------------------

RNG = np.random.default_rng(1234)


def _away_from_zero(shape):
    x = RNG.normal(size=shape)
    return np.where(np.abs(x) < 0.1, np.sign(x) * 0.1 + x, x)


PRIMITIVE_CASES = {
    "matmul": (lambda p: ad.tsum(ad.matmul(p[0], p[1])), [RNG.normal(size=(3, 4)), RNG.normal(size=(4, 2))]),
    "matmul_batched": (lambda p: ad.tsum(ad.tanh(ad.matmul(p[0], p[1]))), [RNG.normal(size=(2, 3, 4)), RNG.normal(size=(4, 2))]),
    "matmul_vec": (lambda p: ad.tsum(ad.sigmoid(ad.matmul(p[0], p[1]))), [RNG.normal(size=(3, 4)), RNG.normal(size=4)]),
    "matmul_left_const": (lambda p: ad.tsum(ad.tanh(ad.matmul(np.arange(6.0).reshape(2, 3) / 5, p[0]))), [RNG.normal(size=(4, 3, 2))]),
    "add_broadcast": (lambda p: ad.tsum(ad.tanh(ad.add(p[0], p[1]))), [RNG.normal(size=(3, 4)), RNG.normal(size=4)]),
    "sub": (lambda p: ad.tsum(ad.tanh(ad.sub(p[0], p[1]))), [RNG.normal(size=(3, 1)), RNG.normal(size=(1, 4))]),
    "mul": (lambda p: ad.tsum(ad.mul(p[0], p[1])), [RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))]),
    "concat": (lambda p: ad.tsum(ad.tanh(ad.concat([p[0], p[1]], axis=1))), [RNG.normal(size=(2, 3)), RNG.normal(size=(2, 2))]),
    "slice": (lambda p: ad.tsum(ad.tanh(p[0][:, 1:3])), [RNG.normal(size=(3, 4))]),
    "fancy_index": (lambda p: ad.tsum(ad.tanh(p[0][np.array([0, 2, 2]), np.array([1, 1, 3])])), [RNG.normal(size=(3, 4))]),
    "take": (lambda p: ad.tsum(ad.tanh(ad.take(p[0], [0, 2, 2, 1], axis=1))), [RNG.normal(size=(2, 3))]),
    "sum_axis": (lambda p: ad.tsum(ad.tanh(ad.tsum(p[0], axis=1))), [RNG.normal(size=(3, 4))]),
    "mean_axis": (lambda p: ad.tsum(ad.tanh(ad.mean(p[0], axis=0))), [RNG.normal(size=(3, 4))]),
    "reshape_expand": (lambda p: ad.tsum(ad.tanh(ad.expand(ad.reshape(p[0], (1, 4)), (3, 4)))), [RNG.normal(size=4)]),
    "sigmoid": (lambda p: ad.tsum(ad.sigmoid(p[0])), [RNG.normal(size=5)]),
    "tanh": (lambda p: ad.tsum(ad.tanh(p[0])), [RNG.normal(size=5)]),
    "leaky_relu": (lambda p: ad.tsum(ad.mul(ad.leaky_relu(p[0], 0.2), p[0])), [_away_from_zero(6)]),
    "elu": (lambda p: ad.tsum(ad.elu(p[0])), [_away_from_zero(6)]),
    "exp": (lambda p: ad.tsum(ad.exp(p[0])), [RNG.normal(size=5)]),
    "log": (lambda p: ad.tsum(ad.log(p[0])), [RNG.uniform(0.5, 2.0, size=5)]),
    "clip": (lambda p: ad.tsum(ad.mul(ad.clip(p[0], -0.5, 0.5), p[0])), [np.array([-1.0, -0.2, 0.3, 0.9])]),
    "segment_softmax": (
        lambda p: ad.tsum(ad.mul(ad.segment_softmax(p[0], [0, 1, 0, 2, 1, 0], 3), np.arange(6.0))),
        [RNG.normal(size=6)],
    ),
    "segment_softmax_batched": (
        lambda p: ad.tsum(ad.mul(ad.segment_softmax(p[0], [1, 1, 0, 1], 2), np.arange(8.0).reshape(2, 4))),
        [RNG.normal(size=(2, 4))],
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_grad_check(name):
    f, params = PRIMITIVE_CASES[name]
    assert ad.grad_check(f, params, h=1e-5) < 1e-6


def test_grad_check_quadratic_form():
    A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 3.0]])

    def f(p):
        x = p[0]
        return ad.tsum(ad.mul(x, ad.matmul(A, x)))

    assert ad.grad_check(f, [np.array([0.3, -1.2, 0.7])], h=1e-5) < 1e-7


def test_grad_check_constant_function():
    assert ad.grad_check(lambda p: ad.tensor(4.0), [np.ones(3)]) == 0.0
