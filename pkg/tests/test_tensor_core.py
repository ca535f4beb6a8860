import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cafnet.errors import ConfigurationError, DimensionError, InvalidInputError, UsageError
from cafnet.ops import (batch_norm, concat_channels, conv2d, conv_transpose2d, l1_loss, relu)
from cafnet.tensor import Parameter, Tensor, default_dtype, no_grad, tensor_sum

from gradsuite import check_seed
from oracles import conv2d_loops, conv_transpose_zero_insert


def T(a, **kw):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64, **kw)


# -- conv2d ------------------------------------------------------------------------
def test_conv2d_window_sums():
    x = T(np.arange(1, 10).reshape(1, 1, 3, 3))
    out = conv2d(x, T(np.ones((1, 1, 2, 2))), T([0.0]))
    np.testing.assert_array_equal(out.data[0, 0], [[12, 16], [24, 28]])


def test_conv2d_identity_kernel():
    x = T(np.random.default_rng(0).normal(size=(2, 1, 5, 4)))
    np.testing.assert_array_equal(conv2d(x, T(np.ones((1, 1, 1, 1)))).data, x.data)


def test_conv2d_stride2_shape_and_values():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    out = conv2d(T(x), T(w), T(b), stride=2, pad_begin=1, pad_end=0)
    assert out.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, 2, (1, 1), (0, 0)), atol=1e-12)


def test_conv2d_padded_matches_loops():
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(1, 2, 5, 6)), rng.normal(size=(3, 2, 3, 2))
    out = conv2d(T(x), T(w), stride=1, pad_begin=(1, 0), pad_end=(2, 1))
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, None, 1, (1, 0), (2, 1)), atol=1e-12)


def test_conv2d_errors():
    x = T(np.zeros((1, 2, 4, 4)))
    with pytest.raises(DimensionError):
        conv2d(x, T(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ConfigurationError):
        conv2d(T(np.zeros((1, 1, 8, 8))), T(np.zeros((1, 1, 3, 3))), stride=2, pad_begin=1, pad_end=1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_conv2d_linearity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(2, 2, 6, 6))
    w = T(rng.normal(size=(3, 2, 3, 3)))
    lhs = conv2d(T(alpha * x + beta * y), w, pad_begin=1, pad_end=1).data
    rhs = alpha * conv2d(T(x), w, pad_begin=1, pad_end=1).data + beta * conv2d(T(y), w, pad_begin=1, pad_end=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


# -- conv_transpose2d -------------------------------------------------------------
def test_conv_transpose_single_tap():
    out = conv_transpose2d(T([[[[1.0]]]]), T(np.ones((1, 1, 2, 2))), up_rate=2, pad=0)
    np.testing.assert_array_equal(out.data[0, 0], np.ones((2, 2)))


def test_conv_transpose_row():
    out = conv_transpose2d(T([[[[1.0, 2.0]]]]), T(np.ones((1, 1, 2, 2))), up_rate=2, pad=0)
    np.testing.assert_array_equal(out.data[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2]])


def test_conv_transpose_matches_zero_insertion():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 3, 4, 4)), rng.normal(size=3)
    out = conv_transpose2d(T(x), T(w), T(b), up_rate=2, pad=1)
    assert out.shape == (1, 3, 10, 10)
    np.testing.assert_allclose(out.data, conv_transpose_zero_insert(x, w, b, 2, 1), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(3, 1, 1, 1), (3, 2, 1, 0), (4, 2, 1, 1), (2, 2, 0, 0)]))
def test_conv_transpose_is_adjoint_of_conv(seed, geom):
    k, stride, pb, pe = geom
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, k, k))
    y_shape = conv2d(T(x), T(w), stride=stride, pad_begin=pb, pad_end=pe).shape
    y = rng.normal(size=y_shape)
    lhs = np.sum(conv2d(T(x), T(w), stride=stride, pad_begin=pb, pad_end=pe).data * y)
    # the adjoint of conv2d is the transposed conv with the same weight, read as (c_in, c_out)
    # and run through autodiff: grad of <conv2d(x), y> w.r.t. x
    xt = Parameter(x.copy(), "x", dtype=np.float64)
    tensor_sum(conv2d(xt, T(w), stride=stride, pad_begin=pb, pad_end=pe) * T(y)).backward()
    rhs_autodiff = np.sum(x * xt.grad)
    assert abs(lhs - rhs_autodiff) <= 1e-4 * max(1.0, abs(lhs))
    if stride == 2 and pb == pe:
        up = conv_transpose2d(T(y), T(w), up_rate=2, pad=pb)
        assert up.shape == x.shape
        assert abs(lhs - np.sum(x * up.data)) <= 1e-4 * max(1.0, abs(lhs))


def test_conv_transpose_adjoint_explicit():
    # conv2d with stride 2, symmetric pad 1, 4x4 kernel <-> 4x4 transposed conv, pad 1
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(1, 3, 8, 8)), rng.normal(size=(2, 3, 4, 4))
    y = rng.normal(size=(1, 2, 4, 4))
    lhs = np.sum(conv2d(T(x), T(w), stride=2, pad_begin=1, pad_end=1).data * y)
    rhs = np.sum(x * conv_transpose2d(T(y), T(w), up_rate=2, pad=1).data)
    assert abs(lhs - rhs) <= 1e-4


# -- batch norm ----------------------------------------------------------------------
def test_batch_norm_constant_input():
    x = T(np.full((2, 3, 4, 4), 7.0))
    out = batch_norm(x, T(np.ones(3)), T(np.zeros(3)), np.zeros(3), np.ones(3), train=True)
    assert np.abs(out.data).max() <= 1e-2


def test_batch_norm_affine_passthrough():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = batch_norm(T(x), T([2.0, 2.0]), T([3.0, 3.0]), np.zeros(2), np.ones(2), train=True)
    np.testing.assert_allclose(out.data, 2 * x + 3, atol=1e-4)


def test_batch_norm_statistics_and_running_update():
    rng = np.random.default_rng(6)
    x = rng.normal(2.0, 3.0, size=(4, 3, 6, 6))
    rm, rv = np.zeros(3), np.ones(3)
    out = batch_norm(T(x), T(np.ones(3)), T(np.zeros(3)), rm, rv, train=True, momentum=0.1)
    assert np.abs(out.data.mean(axis=(0, 2, 3))).max() <= 1e-5
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))


def test_batch_norm_eval_uses_running_stats():
    x = np.random.default_rng(7).normal(size=(2, 2, 3, 3))
    out = batch_norm(T(x), T([1.0, 1.0]), T([0.0, 0.0]), np.array([1.0, -1.0]), np.array([4.0, 4.0]),
                     train=False, eps=0.0)
    np.testing.assert_allclose(out.data[:, 0], (x[:, 0] - 1) / 2)
    np.testing.assert_allclose(out.data[:, 1], (x[:, 1] + 1) / 2)


def test_batch_norm_empty_extent():
    with pytest.raises(InvalidInputError):
        batch_norm(T(np.zeros((0, 2, 3, 3))), T(np.ones(2)), T(np.zeros(2)), np.zeros(2), np.ones(2), True)


# -- relu, concat, l1 ------------------------------------------------------------------
def test_relu_values_and_zero_gradient():
    x = Parameter(np.array([-1.0, 0.0, 2.0]), "x", dtype=np.float64)
    out = relu(x)
    np.testing.assert_array_equal(out.data, [0, 0, 2])
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1])


def test_relu_all_negative():
    x = Parameter(-np.abs(np.random.default_rng(8).normal(size=(1, 2, 3, 3))) - 0.1, "x")
    out = relu(x)
    out.sum().backward()
    assert not out.data.any() and not x.grad.any()


def test_relu_matches_elementwise():
    x = np.random.default_rng(9).normal(size=(2, 3, 4, 4))
    ref = np.array([v if v > 0 else 0.0 for v in x.ravel()]).reshape(x.shape)
    np.testing.assert_array_equal(relu(T(x)).data, ref)


def test_concat_shapes_identity_and_split():
    rng = np.random.default_rng(10)
    a, b = rng.normal(size=(1, 2, 2, 2)), rng.normal(size=(1, 3, 2, 2))
    out = concat_channels(T(a), T(b))
    assert out.shape == (1, 5, 2, 2)
    np.testing.assert_array_equal(out.data[:, :2], a)
    np.testing.assert_array_equal(out.data[:, 2:], b)
    np.testing.assert_array_equal(concat_channels(T(a), T(np.zeros((1, 0, 2, 2)))).data, a)
    with pytest.raises(DimensionError):
        concat_channels(T(a), T(np.zeros((1, 1, 3, 2))))


def test_l1_loss_cases():
    rng = np.random.default_rng(11)
    p, t = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    assert l1_loss(T(p), T(p)).item() == 0.0
    assert l1_loss(T(p + 0.5), T(p)).item() == pytest.approx(0.5, abs=1e-12)
    ref = sum(abs(a - b) for a, b in zip(p.ravel(), t.ravel())) / p.size
    assert l1_loss(T(p), T(t)).item() == pytest.approx(ref, abs=1e-6)
    with pytest.raises(DimensionError):
        l1_loss(T(p), T(t[:1]))


# -- backward ----------------------------------------------------------------------------
def test_backward_sum_gives_ones():
    w = Parameter(np.random.default_rng(12).normal(size=(2, 3)), "w")
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))


def test_backward_l1_tie_gives_zero():
    w = Parameter(np.random.default_rng(13).normal(size=(1, 1, 3, 3)), "w")
    l1_loss(w, w.detach()).backward()
    np.testing.assert_array_equal(w.grad, 0.0)


def test_backward_accumulates():
    w = Parameter(np.ones(4), "w")
    w.sum().backward()
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, 2.0)
    w.zero_grad()
    assert w.grad is None or not w.grad.any()


def test_backward_non_scalar_is_usage_error():
    w = Parameter(np.ones((2, 2)), "w")
    with pytest.raises(UsageError):
        (w * 2.0).backward()


def test_shared_subgraph_visited_once():
    # y = x*x used twice; d/dx (x^2 + x^2) = 4x
    x = Parameter(np.array([3.0]), "x", dtype=np.float64)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_grad_records_nothing():
    w = Parameter(np.ones(3), "w")
    with no_grad():
        out = w * 2.0
    assert not out.requires_grad


def test_default_precision_and_float64_mode():
    assert Tensor([1.0]).dtype == np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


@pytest.mark.parametrize("seed", range(5))
def test_float32_gradients_within_1e3(seed):
    errors = check_seed(seed, dtype=np.float32)
    assert max(errors.values()) <= 1e-3, errors


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    errors = check_seed(seed)
    bad = {k: v for k, v in errors.items() if v > 1e-5}
    assert not bad, bad


def test_forward_is_deterministic():
    rng = np.random.default_rng(14)
    x, w = rng.normal(size=(2, 3, 8, 8)).astype(np.float32), rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    a = conv2d(Tensor(x), Tensor(w), pad_begin=1, pad_end=1).data
    b = conv2d(Tensor(x), Tensor(w), pad_begin=1, pad_end=1).data
    assert a.tobytes() == b.tobytes()
