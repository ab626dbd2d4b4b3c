"""Tensor core: op semantics, gradients, adjointness, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpnet import autodiff as ad
from bpnet.errors import ShapeError, UsageError

from gradcheck import check_op


def t(data, grad=False):
    return ad.Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------


def conv1d_loops(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation; the oracle conv1d must match."""
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    lout = (length + 2 * padding - k) // stride + 1
    y = np.zeros((bsz, cout, lout))
    for bi in range(bsz):
        for co in range(cout):
            for l in range(lout):
                acc = b[co]
                for ci in range(cin):
                    for kk in range(k):
                        acc += w[co, ci, kk] * xp[bi, ci, l * stride + kk]
                y[bi, co, l] = acc
    return y


def test_conv1d_hand_example():
    x = t([[[1.0, 2.0, 3.0]]])
    w = t([[[1.0, 0.0, -1.0]]])
    b = t([0.0])
    y = ad.conv1d(x, w, b, stride=1, padding=1)
    np.testing.assert_allclose(y.data, [[[-2.0, -2.0, 2.0]]])


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 1, 9))
    y = ad.conv1d(t(x), t([[[0.0, 1.0, 0.0]]]), t([0.0]), stride=1, padding=1)
    np.testing.assert_allclose(y.data, x)


def test_conv1d_zero_kernel():
    x = t(np.ones((1, 2, 8)))
    y = ad.conv1d(x, t(np.zeros((3, 2, 3))), t(np.zeros(3)), padding=1)
    assert np.all(y.data == 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_conv1d_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    stride = int(rng.integers(1, 4))
    padding = int(rng.integers(0, 3))
    k = int(rng.integers(1, 6))
    length = int(rng.integers(max(1, k - 2 * padding), 9))
    if length + 2 * padding < k:
        length = k
    x = rng.normal(size=(2, 3, length))
    w = rng.normal(size=(4, 3, k))
    b = rng.normal(size=4)
    y = ad.conv1d(t(x), t(w), t(b), stride, padding)
    np.testing.assert_allclose(y.data, conv1d_loops(x, w, b, stride, padding), atol=1e-12)


def test_conv1d_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.conv1d(t(np.zeros((1, 2, 8))), t(np.zeros((4, 3, 3))), t(np.zeros(4)))


def test_conv1d_kernel_longer_than_padded_input():
    with pytest.raises(ShapeError):
        ad.conv1d(t(np.zeros((1, 1, 3))), t(np.zeros((1, 1, 6))), t(np.zeros(1)))


@pytest.mark.parametrize("seed", range(20))
def test_conv1d_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    x = t(rng.normal(size=(2, 3, 8)), grad=True)
    w = t(rng.normal(size=(4, 3, 3)), grad=True)
    b = t(rng.normal(size=4), grad=True)
    worst = check_op(
        lambda: ad.mean(ad.abs(ad.conv1d(x, w, b, stride, padding))),
        {"x": x, "w": w, "b": b},
    )
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# conv1d_transpose
# ---------------------------------------------------------------------------


def test_transpose_exact_doubling():
    x = t(np.random.default_rng(1).normal(size=(1, 2, 4)))
    w = t(np.random.default_rng(2).normal(size=(2, 3, 4)))
    y = ad.conv1d_transpose(x, w, t(np.zeros(3)), stride=2, padding=1)
    assert y.shape == (1, 3, 8)


def test_transpose_zero_input_broadcasts_bias():
    x = t(np.zeros((2, 2, 5)))
    w = t(np.random.default_rng(3).normal(size=(2, 3, 4)))
    bias = np.array([1.0, -2.0, 0.5])
    y = ad.conv1d_transpose(x, w, t(bias), stride=2, padding=1)
    np.testing.assert_allclose(y.data, np.broadcast_to(bias[None, :, None], y.shape))


@pytest.mark.parametrize("seed", range(20))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(200 + seed)
    stride = int(rng.integers(1, 4))
    k = int(rng.integers(2, 6))
    padding = int(rng.integers(0, min(3, (k + 1) // 2)))
    # choose L so that conv's floor division is exact and shapes match
    lout = int(rng.integers(2, 7))
    length = (lout - 1) * stride - 2 * padding + k
    if length < k:
        return
    b_, ci, co = 2, 3, 4
    u = rng.normal(size=(b_, ci, length))
    w = rng.normal(size=(co, ci, k))
    v = rng.normal(size=(b_, co, lout))
    cu = ad.conv1d(t(u), t(w), t(np.zeros(co)), stride, padding)
    tv = ad.conv1d_transpose(t(v), t(w), t(np.zeros(ci)), stride, padding)
    assert cu.shape == v.shape and tv.shape == u.shape
    lhs = float((cu.data * v).sum())
    rhs = float((u * tv.data).sum())
    assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_transpose_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    x = t(rng.normal(size=(2, 3, 5)), grad=True)
    w = t(rng.normal(size=(3, 2, 4)), grad=True)
    b = t(rng.normal(size=2), grad=True)
    worst = check_op(
        lambda: ad.mean(ad.abs(ad.conv1d_transpose(x, w, b, stride=2, padding=1))),
        {"x": x, "w": w, "b": b},
    )
    assert worst < 1e-4


def test_transpose_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.conv1d_transpose(t(np.zeros((1, 2, 8))), t(np.zeros((3, 2, 4))), t(np.zeros(2)))


# ---------------------------------------------------------------------------
# batchnorm1d
# ---------------------------------------------------------------------------


def test_batchnorm_constant_input_collapses_to_beta():
    stats = ad.RunningStats(3)
    x = t(np.full((4, 3, 5), 7.5))
    y = ad.batchnorm1d(x, t(np.ones(3)), t(np.zeros(3)), stats)
    np.testing.assert_allclose(y.data, 0.0, atol=1e-9)
    y = ad.batchnorm1d(x, t(np.ones(3)), t(np.full(3, 3.0)), ad.RunningStats(3))
    np.testing.assert_allclose(y.data, 3.0, atol=1e-9)


def test_batchnorm_normalizes_moments():
    rng = np.random.default_rng(5)
    x = t(rng.normal(loc=2.0, scale=3.0, size=(8, 4, 16)))
    y = ad.batchnorm1d(x, t(np.ones(4)), t(np.zeros(4)), ad.RunningStats(4))
    np.testing.assert_allclose(y.data.mean(axis=(0, 2)), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.data.var(axis=(0, 2)), 1.0, atol=1e-4)


def test_batchnorm_infer_uses_running_stats():
    stats = ad.RunningStats(2)
    stats.mean = np.array([1.0, -1.0])
    stats.var = np.array([4.0, 0.25])
    x = t(np.ones((1, 2, 3)))
    y = ad.batchnorm1d(x, t(np.ones(2)), t(np.zeros(2)), stats, eps=0.0, train=False)
    np.testing.assert_allclose(y.data[0, 0], 0.0, atol=1e-12)
    np.testing.assert_allclose(y.data[0, 1], 4.0, atol=1e-12)


def test_batchnorm_updates_running_stats_in_train_only():
    rng = np.random.default_rng(6)
    x = t(rng.normal(size=(4, 2, 8)))
    stats = ad.RunningStats(2)
    before = stats.copy()
    ad.batchnorm1d(x, t(np.ones(2)), t(np.zeros(2)), stats, train=False)
    assert np.array_equal(stats.mean, before.mean) and np.array_equal(stats.var, before.var)
    ad.batchnorm1d(x, t(np.ones(2)), t(np.zeros(2)), stats, train=True)
    assert not np.array_equal(stats.mean, before.mean)


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.batchnorm1d(t(np.zeros((1, 3, 4))), t(np.ones(2)), t(np.zeros(2)), ad.RunningStats(2))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(seed, train):
    rng = np.random.default_rng(400 + seed)
    x = t(rng.normal(size=(3, 2, 6)), grad=True)
    g = t(rng.normal(size=2) + 1.5, grad=True)
    b = t(rng.normal(size=2), grad=True)
    stats = ad.RunningStats(2)
    stats.mean = rng.normal(size=2)
    stats.var = rng.uniform(0.5, 2.0, size=2)
    snap = stats.copy()

    def build():
        stats.mean = snap.mean.copy()
        stats.var = snap.var.copy()
        return ad.mean(ad.abs(ad.batchnorm1d(x, g, b, stats, train=train)))

    assert check_op(build, {"x": x, "g": g, "b": b}) < 1e-4


# ---------------------------------------------------------------------------
# pointwise / structural
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("value,expect", [(2.0, 2.0), (-2.0, -0.02), (0.0, 0.0)])
def test_leaky_relu_values(value, expect):
    y = ad.leaky_relu(t([value]), slope=0.01)
    assert y.data[0] == pytest.approx(expect)


def test_leaky_relu_slope_domain():
    with pytest.raises(UsageError):
        ad.leaky_relu(t([1.0]), slope=1.5)


def test_concat_shapes_and_empty():
    a = t(np.ones((1, 2, 8)))
    b = t(np.zeros((1, 3, 8)))
    y = ad.concat_channels(a, b)
    assert y.shape == (1, 5, 8)
    empty = t(np.zeros((1, 0, 8)))
    np.testing.assert_array_equal(ad.concat_channels(a, empty).data, a.data)


def test_concat_length_mismatch_is_error():
    with pytest.raises(ShapeError):
        ad.concat_channels(t(np.zeros((1, 2, 8))), t(np.zeros((1, 2, 9))))


def test_concat_backward_splits_gradient():
    rng = np.random.default_rng(8)
    a = t(rng.normal(size=(2, 2, 4)), grad=True)
    b = t(rng.normal(size=(2, 3, 4)), grad=True)
    assert check_op(lambda: ad.mean(ad.abs(ad.concat_channels(a, b))), {"a": a, "b": b}) < 1e-4


def test_add_sub_semantics():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(2, 3, 4))
    z = np.zeros_like(a)
    np.testing.assert_array_equal(ad.add(t(a), t(z)).data, a)
    np.testing.assert_array_equal(ad.add(t(a), t(-a)).data, z)
    with pytest.raises(ShapeError):
        ad.add(t(np.zeros(3)), t(np.zeros(4)))


def test_add_gradient_is_upstream():
    a = t(np.random.default_rng(10).normal(size=(2, 2, 3)), grad=True)
    b = t(np.random.default_rng(11).normal(size=(2, 2, 3)), grad=True)
    loss = ad.sum(ad.add(a, b))
    ad.backward(loss)
    np.testing.assert_array_equal(a.grad, np.ones_like(a.data))
    np.testing.assert_array_equal(b.grad, np.ones_like(b.data))


def test_pad_crop_roundtrip_and_gradients():
    rng = np.random.default_rng(12)
    x = t(rng.normal(size=(1, 2, 10)), grad=True)
    padded = ad.pad1d(x, 3, 2)
    assert padded.shape == (1, 2, 15)
    back = ad.crop1d(padded, 3, 2)
    np.testing.assert_array_equal(back.data, x.data)
    assert check_op(lambda: ad.mean(ad.abs(ad.crop1d(ad.pad1d(x, 3, 2), 1, 1))), {"x": x}) < 1e-4


# ---------------------------------------------------------------------------
# backward semantics
# ---------------------------------------------------------------------------


def test_backward_sum_gradient_is_ones():
    x = t(np.arange(6.0).reshape(1, 2, 3), grad=True)
    ad.backward(ad.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_backward_sum_of_squares():
    x = t(np.array([1.0, -2.0, 3.0]), grad=True)
    loss = ad.sum(ad.abs(x))  # d/dx |x| = sign(x)
    ad.backward(loss)
    np.testing.assert_array_equal(x.grad, np.sign(x.data))


def test_backward_requires_scalar():
    x = t(np.ones((1, 1, 4)), grad=True)
    with pytest.raises(UsageError):
        ad.backward(ad.abs(x))


def test_gradients_accumulate_across_fanout():
    x = t(np.array([2.0]), grad=True)
    y = ad.add(x, x)
    ad.backward(ad.sum(y))
    np.testing.assert_array_equal(x.grad, [2.0])


def test_composite_graph_gradcheck():
    rng = np.random.default_rng(13)
    x = t(rng.normal(size=(2, 2, 8)), grad=True)
    w = t(rng.normal(size=(2, 2, 3)), grad=True)
    b = t(rng.normal(size=2), grad=True)
    g = t(np.ones(2), grad=True)
    beta = t(np.zeros(2), grad=True)
    stats = ad.RunningStats(2)
    snap = stats.copy()

    def build():
        stats.mean = snap.mean.copy()
        stats.var = snap.var.copy()
        h = ad.conv1d(x, w, b, stride=1, padding=1)
        h = ad.batchnorm1d(h, g, beta, stats, train=True)
        h = ad.leaky_relu(h, 0.01)
        return ad.mean(h)

    assert check_op(build, {"x": x, "w": w, "b": b, "g": g, "beta": beta}) < 1e-4


def test_two_passes_identical_gradients():
    grads = []
    for _ in range(2):
        x = t(np.random.default_rng(14).normal(size=(1, 2, 8)), grad=True)
        w = t(np.random.default_rng(15).normal(size=(2, 2, 3)), grad=True)
        loss = ad.mean(ad.abs(ad.conv1d(x, w, t(np.zeros(2)), 1, 1)))
        ad.backward(loss)
        grads.append((x.grad.copy(), w.grad.copy()))
    assert np.array_equal(grads[0][0], grads[1][0])
    assert np.array_equal(grads[0][1], grads[1][1])


def test_graph_topological_order_and_single_visit():
    x = t(np.ones((1, 1, 4)), grad=True)
    h = ad.leaky_relu(x, 0.01)
    y = ad.add(h, h)
    loss = ad.mean(y)
    graph = ad.Graph.trace(loss)
    seen = set()
    for node in graph.nodes:
        for parent in node.inputs:
            if parent._op is not None:
                assert id(parent) in seen, "input visited after its consumer"
        assert id(node.output) not in seen, "node visited twice"
        seen.add(id(node.output))
    assert len(graph.nodes) == len({id(n.output) for n in graph.nodes})


@settings(max_examples=40, deadline=None)
@given(
    length=st.integers(4, 16),
    k=st.integers(1, 5),
    stride=st.integers(1, 3),
    padding=st.integers(0, 3),
)
def test_conv_shape_contract(length, k, stride, padding):
    if length + 2 * padding < k:
        return
    x = t(np.zeros((1, 2, length)))
    w = t(np.zeros((3, 2, k)))
    y = ad.conv1d(x, w, t(np.zeros(3)), stride, padding)
    assert y.shape == (1, 3, (length + 2 * padding - k) // stride + 1)


@settings(max_examples=40, deadline=None)
@given(length=st.integers(2, 12), k=st.integers(2, 5), stride=st.integers(1, 3))
def test_transpose_shape_contract(length, k, stride):
    padding = min(1, k - 1)
    lout = (length - 1) * stride - 2 * padding + k
    if lout < 1:
        return
    x = t(np.zeros((1, 2, length)))
    w = t(np.zeros((2, 3, k)))
    y = ad.conv1d_transpose(x, w, t(np.zeros(3)), stride, padding)
    assert y.shape == (1, 3, lout)
