import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmunet import tensor as T
from mmunet.errors import ConfigError, DataError, ShapeError, UsageError


def naive_conv(x, w, b, stride, pad):
    """Direct 7-loop cross-correlation, used as an independent oracle."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


@pytest.mark.parametrize(
    "shape,k,stride,pad",
    [((2, 3, 6, 6), 3, 1, 1), ((1, 2, 7, 7), 3, 2, 0), ((1, 4, 5, 5), 1, 1, 0), ((2, 1, 9, 9), 3, 2, 1)],
)
def test_conv2d_matches_direct_loops(shape, k, stride, pad):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((5, shape[1], k, k))
    b = rng.standard_normal(5)
    got = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride=stride, pad=pad).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv2d_rejects_nonintegral_output():
    x = T.Tensor(np.zeros((1, 1, 8, 8)))
    with pytest.raises(ConfigError):
        T.conv2d(x, T.Tensor(np.zeros((1, 1, 3, 3))), stride=2, pad=1)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(T.Tensor(np.zeros((1, 2, 4, 4))), T.Tensor(np.zeros((1, 3, 3, 3))), pad=1)


def test_maxpool_tie_goes_to_first_in_window():
    x = T.Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = T.maxpool2(x)
    T.backward(T.tsum(y))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_maxpool_values():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(T.maxpool2(T.Tensor(x)).data[0, 0], [[5, 7], [13, 15]])


def test_bilinear_1d_rows_frozen():
    # [a, b] -> [a, .75a + .25b, .25a + .75b, b] with edge clamping
    x = T.Tensor(np.array([[[[0.0, 1.0], [0.0, 1.0]]]]))
    up = T.upsample_bilinear2(x).data[0, 0]
    np.testing.assert_allclose(up, np.tile([0.0, 0.25, 0.75, 1.0], (4, 1)))


def test_bilinear_preserves_constants_and_column_sums():
    m = T.bilinear_matrix(5)
    np.testing.assert_allclose(m.sum(axis=0), 1.0)
    x = T.Tensor(np.full((1, 2, 3, 3), 2.5))
    np.testing.assert_allclose(T.upsample_bilinear2(x).data, 2.5)


def test_gelu_tanh_value():
    # 0.5 * (1 + tanh(sqrt(2/pi) * (1 + 0.044715)))
    ref = 0.5 * (1 + math.tanh(math.sqrt(2 / math.pi) * 1.044715))
    assert T.gelu(T.Tensor(np.array([1.0]))).data[0] == pytest.approx(ref, abs=1e-15)
    assert ref == pytest.approx(0.8411919906082768, abs=1e-15)


def test_layernorm_normalises_last_axis():
    rng = np.random.default_rng(1)
    x = T.Tensor(rng.standard_normal((3, 4, 16)) * 5 + 2)
    y = T.layernorm(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, rtol=1e-4)


def test_layernorm_permutation_equivariant_bitwise():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5, 13))
    perm = rng.permutation(13)
    g, d = np.ones(13), np.zeros(13)
    a = T.layernorm(T.Tensor(x), T.Tensor(g), T.Tensor(d)).data[..., perm]
    b = T.layernorm(T.Tensor(x[..., perm]), T.Tensor(g), T.Tensor(d)).data
    assert np.array_equal(a, b)


def test_softmax_ce_matches_logsumexp():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((2, 4, 3, 3)) * 3
    t = rng.integers(0, 4, size=(2, 3, 3))
    lse = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, t[:, None], axis=1)[:, 0]
    ref = np.mean(lse - picked)
    assert float(T.softmax_ce(T.Tensor(z), t).data) == pytest.approx(ref, rel=1e-12)


def test_softmax_ce_large_logits_stay_finite():
    z = np.zeros((1, 2, 1, 1))
    z[0, 0] = 1000.0
    loss = T.softmax_ce(T.Tensor(z), np.zeros((1, 1, 1), dtype=int))
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


def test_softmax_ce_reports_bad_pixel():
    t = np.zeros((1, 2, 2), dtype=int)
    t[0, 1, 0] = 7
    with pytest.raises(DataError, match=r"\(0, 1, 0\)"):
        T.softmax_ce(T.Tensor(np.zeros((1, 3, 2, 2))), t)


def test_backward_requires_scalar_loss():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        T.backward(T.mul(x, 2.0))


def test_backward_needs_grad_path():
    with pytest.raises(UsageError):
        T.backward(T.tsum(T.Tensor(np.ones(3))))


def test_repeated_backward_is_bit_identical():
    rng = np.random.default_rng(4)
    w = T.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    x = T.Tensor(rng.standard_normal((5, 4)))
    loss = T.tsum(T.gelu(T.matmul(x, w)))
    T.backward(loss)
    first = w.grad.copy()
    T.backward(loss)
    assert np.array_equal(first, w.grad)


def test_shared_subexpression_gradient_accumulates():
    # y = x*x + x  ->  dy/dx = 2x + 1, x reaches the sum along two paths
    x = T.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    T.backward(T.tsum(T.add(T.mul(x, x), x)))
    np.testing.assert_allclose(x.grad, [4.0, -3.0])


def test_broadcast_gradient_is_summed():
    a = T.Tensor(np.ones((3, 4)), requires_grad=True)
    b = T.Tensor(np.ones(4), requires_grad=True)
    T.backward(T.tsum(T.add(a, b)))
    np.testing.assert_array_equal(b.grad, [3, 3, 3, 3])


def test_split_rejects_bad_boundaries():
    x = T.Tensor(np.zeros((1, 4, 2, 2)))
    for bounds in ([0, 2], [2, 2], [3, 1], [4]):
        with pytest.raises(ConfigError):
            T.split_channels(x, bounds)


@settings(max_examples=40, deadline=None)
@given(
    c=st.integers(2, 9),
    data=st.data(),
)
def test_split_concat_roundtrip(c, data):
    cuts = data.draw(st.lists(st.integers(1, c - 1), min_size=1, max_size=c - 1, unique=True))
    bounds = sorted(cuts)
    x = np.random.default_rng(c).standard_normal((2, c, 3, 3))
    parts = T.split_channels(T.Tensor(x), bounds)
    assert [p.shape[1] for p in parts] == list(np.diff([0, *bounds, c]))
    assert np.array_equal(T.concat_channels(parts).data, x)


@settings(max_examples=30, deadline=None)
@given(perm=st.permutations([0, 1, 2, 3]))
def test_transpose_gradient_is_inverse_permutation(perm):
    rng = np.random.default_rng(5)
    x = T.Tensor(rng.standard_normal((2, 3, 4, 5)), requires_grad=True)
    y = T.transpose(x, tuple(perm))
    r = rng.standard_normal(y.shape)
    T.backward(T.tsum(T.mul(y, T.Tensor(r))))
    np.testing.assert_array_equal(x.grad, np.transpose(r, np.argsort(perm)))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6))
def test_upsample_backward_is_adjoint(h, w):
    # <U x, g> == <x, U^T g> for the linear upsampling operator
    rng = np.random.default_rng(h * 7 + w)
    x = T.Tensor(rng.standard_normal((1, 2, h, w)), requires_grad=True)
    g = rng.standard_normal((1, 2, 2 * h, 2 * w))
    y = T.upsample_bilinear2(x)
    T.backward(T.tsum(T.mul(y, T.Tensor(g))))
    assert np.sum(y.data * g) == pytest.approx(np.sum(x.data * x.grad), rel=1e-10)
