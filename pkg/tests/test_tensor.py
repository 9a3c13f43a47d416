import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certwatch import tensor as T
from certwatch.tensor import Parameter, ShapeError, Tensor

from gradcases import CASES
from oracles import conv2d_loop, gradcheck, linear_loop, pool_loop


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    for i in range(5):
        fn, arrays = CASES[name](np.random.default_rng([i, 11]))
        assert gradcheck(fn, arrays) < 1e-3


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (2, 1, 3), (3, 2, 5), (2, 1, 1)])
def test_conv2d_matches_loop_oracle(stride, padding, k):
    rng = np.random.default_rng(stride * 10 + padding)
    x = rng.standard_normal((2, 3, 9, 11)).astype(np.float32)
    w = rng.standard_normal((4, 3, k, k)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    got = T.conv2d(x, w, b, stride, padding).data
    np.testing.assert_allclose(got, conv2d_loop(x, w, b, stride, padding), atol=1e-5)


def test_conv2d_unbatched_input_squeezes_batch_axis():
    rng = np.random.default_rng(0)
    x, w = rng.standard_normal((3, 6, 6)), rng.standard_normal((2, 3, 3, 3))
    assert T.conv2d(x, w, None, 1, 1).shape == (2, 6, 6)


def test_detector_shapes_at_desk_resolution():
    x = Tensor(np.zeros((1, 3, 108, 192)))
    for c_out, k, stride, pad in ((48, 5, 3, 2), (48, 5, 3, 2), (32, 3, 2, 1), (16, 3, 2, 1)):
        x = T.conv2d(x, np.zeros((c_out, x.shape[1], k, k)), None, stride, pad)
    assert x.shape == (1, 16, 3, 6)


@pytest.mark.parametrize("kind", ["avg", "max"])
@pytest.mark.parametrize("global_pool", [True, False])
def test_pooling_matches_loop_oracle(kind, global_pool):
    x = np.random.default_rng(3).standard_normal((2, 3, 5, 7))
    got = T.pool2d(x, kind, global_pool, 2).data
    np.testing.assert_allclose(got, pool_loop(x, kind, global_pool, 2), atol=1e-12)


def test_linear_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x, w, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3)), rng.standard_normal(3)
    np.testing.assert_allclose(T.linear(x, w, b).data, linear_loop(x, w, b), atol=1e-12)


def test_shape_errors_are_reported():
    with pytest.raises(ShapeError, match="channels"):
        T.conv2d(np.zeros((1, 3, 8, 8)), np.zeros((2, 4, 3, 3)))
    with pytest.raises(ShapeError, match="larger than padded input"):
        T.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)))
    with pytest.raises(ShapeError, match="linear dimension mismatch"):
        T.linear(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        T.pool2d(np.zeros((1, 1, 1, 1)), "max", global_pool=False, size=2)
    with pytest.raises(ValueError, match="unknown pooling"):
        T.pool2d(np.zeros((1, 1, 2, 2)), "median")


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_float32_is_preserved_through_layers():
    x = Tensor(np.random.default_rng(0).random((1, 3, 10, 10)).astype(np.float32))
    k = Parameter(np.ones((2, 3, 3, 3), dtype=np.float32))
    out = T.leaky_relu(T.conv2d(x, k, None, 2, 1))
    assert T.pool2d(out, "avg").dtype == np.float32


def test_no_grad_records_nothing():
    p = Parameter(np.ones(2))
    with T.no_grad():
        out = T.tsum(p * 3.0)
    assert not out.requires_grad and out._parents == ()


def test_gradients_accumulate_over_shared_subgraphs():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True, dtype=np.float64)
    y = x * x
    T.tsum(y + y).backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


@given(st.floats(0.0, 0.9), st.integers(0, 2**32), st.integers(1, 50))
@settings(max_examples=40, deadline=None)
def test_dropout_mask_is_deterministic_and_inverted(p, seed, width):
    a = T.dropout_mask((4, width), p, seed, "x")
    b = T.dropout_mask((4, width), p, seed, "x")
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, np.float32(1 / (1 - p))}


def test_dropout_rejects_bad_probability():
    with pytest.raises(ValueError):
        T.dropout(np.ones(3), 1.0)


def test_dropout_is_identity_in_eval_mode():
    x = Tensor(np.ones((2, 16)))
    assert T.dropout(x, 0.5, 0, training=False) is x


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
@settings(max_examples=60, deadline=None)
def test_softmax_is_a_distribution_and_matches_log_softmax(values):
    x = np.array([values])
    s = T.softmax(x, axis=1).data
    assert np.all(s >= 0) and abs(s.sum() - 1) < 1e-6
    np.testing.assert_allclose(np.exp(T.log_softmax(x, axis=1).data), s, atol=1e-6)


@given(st.floats(-800, 800))
def test_sigmoid_never_overflows(z):
    with np.errstate(over="raise"):
        v = float(T.sigmoid(np.array([z])).data[0])
    assert 0.0 <= v <= 1.0
