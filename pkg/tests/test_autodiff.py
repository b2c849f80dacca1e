import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alc import autodiff_nn as nn
from alc.errors import GraphError, LabelRangeError, NumericError, ShapeError
from gradcheck import check_op, operator_cases

P = nn.Parameter


def test_dense_examples():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert np.array_equal(nn.dense(x, P(np.eye(2)), P(np.zeros(2))).data, x)
    assert nn.dense([[1.0, 2.0]], P([[1.0], [1.0]]), P([0.0])).data.tolist() == [[3.0]]
    out = nn.dense(x, P(np.zeros((2, 3))), P([1.0, 2.0, 3.0])).data
    assert out.tolist() == [[1.0, 2.0, 3.0]] * 2
    with pytest.raises(ShapeError):
        nn.dense(x, P(np.zeros((3, 1))), P([0.0]))


def test_conv1d_examples():
    x = np.arange(1.0, 5.0).reshape(1, 1, 4)
    assert np.array_equal(nn.conv1d(x, P([[[1.0]]]), P([0.0])).data, x)
    assert nn.conv1d(x, P([[[1.0, 1.0]]]), P([0.0])).data.tolist() == [[[3.0, 5.0, 7.0]]]
    out = nn.conv1d(x, P(np.zeros((2, 1, 2))), P([0.5, -1.0])).data
    assert out.tolist() == [[[0.5] * 3, [-1.0] * 3]]
    with pytest.raises(ShapeError):
        nn.conv1d(x, P(np.zeros((1, 1, 5))), P([0.0]))


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 60), k=st.integers(1, 10), stride=st.integers(1, 5))
def test_conv1d_output_length(T, k, stride):
    x = np.zeros((1, 1, T))
    if T < k:
        with pytest.raises(ShapeError):
            nn.conv1d(x, P(np.zeros((1, 1, k))), P([0.0]), stride)
    else:
        out = nn.conv1d(x, P(np.zeros((1, 1, k))), P([0.0]), stride)
        assert out.shape[2] == (T - k) // stride + 1


def test_relu_examples():
    assert nn.relu([-1.0, 2.0]).data.tolist() == [0.0, 2.0]
    assert np.array_equal(nn.relu(-np.ones(4)).data, np.zeros(4))
    x = P([0.0, -2.0, 3.0])
    with nn.Tape():
        y = nn.tsum(nn.relu(x))
    nn.backward(y)
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_max_pool_examples():
    x = np.array([[[1.0, 3.0, 2.0, 5.0]]])
    assert nn.max_pool1d(x, 2, 2).data.tolist() == [[[3.0, 5.0]]]
    assert np.array_equal(nn.max_pool1d(np.full((1, 2, 6), 4.0), 3, 2).data, np.full((1, 2, 2), 4.0))
    assert np.array_equal(nn.max_pool1d(x, 1, 1).data, x)


def test_max_pool_tie_goes_to_first():
    x = P([[[2.0, 2.0, 1.0]]])
    with nn.Tape():
        y = nn.tsum(nn.max_pool1d(x, 3, 1))
    nn.backward(y)
    assert x.grad.tolist() == [[[1.0, 0.0, 0.0]]]


def test_global_avg_pool_examples():
    assert nn.global_avg_pool(np.full((1, 1, 5), 2.5)).data.tolist() == [[2.5]]
    assert nn.global_avg_pool([[[1.0, 2.0, 3.0]]]).data.tolist() == [[2.0]]
    x = np.array([[[4.0], [5.0]]])
    assert nn.global_avg_pool(x).data.tolist() == [[4.0, 5.0]]


def test_batch_norm_examples():
    ones, zeros = np.ones(2), np.zeros(2)
    out = nn.batch_norm(np.full((3, 2, 4), 7.0), P(ones), P(zeros), zeros.copy(), ones.copy(), True)
    np.testing.assert_allclose(out.data, 0.0)
    out = nn.batch_norm(np.random.default_rng(0).normal(size=(3, 2, 4)), P(zeros), P([1.5, -2.0]),
                        zeros.copy(), ones.copy(), True)
    np.testing.assert_allclose(out.data[:, 0], 1.5)
    np.testing.assert_allclose(out.data[:, 1], -2.0)
    x = np.array([[[-1.0, 1.0]]])
    out = nn.batch_norm(x, P([1.0]), P([0.0]), np.zeros(1), np.ones(1), True, eps=1e-12)
    np.testing.assert_allclose(out.data, x, atol=1e-9)
    with pytest.raises(NumericError):
        nn.batch_norm(np.ones((2, 1, 3)), P([1.0]), P([0.0]), np.zeros(1), np.ones(1), True, eps=0)


def test_batch_norm_running_stats():
    rm, rv = np.zeros(1), np.ones(1)
    x = np.array([[[1.0, 3.0]]])
    nn.batch_norm(x, P([1.0]), P([0.0]), rm, rv, True, momentum=0.5)
    assert rm.tolist() == [1.0]  # 0.5 * 0 + 0.5 * 2
    assert rv.tolist() == [1.5]  # 0.5 * 1 + 0.5 * unbiased var 2
    out = nn.batch_norm(x, P([1.0]), P([0.0]), rm, rv, False, eps=0.0)
    np.testing.assert_allclose(out.data, (x - 1.0) / math.sqrt(1.5))


def _scalar_lstm(x_seq, wx, wh, b):
    """Independent scalar oracle: one unit, gate order i, f, g, o."""
    sig = lambda z: 1 / (1 + math.exp(-z))
    h = c = 0.0
    for x in x_seq:
        i = sig(wx[0] * x + wh[0] * h + b[0])
        f = sig(wx[1] * x + wh[1] * h + b[1])
        g = math.tanh(wx[2] * x + wh[2] * h + b[2])
        o = sig(wx[3] * x + wh[3] * h + b[3])
        c = f * c + i * g
        h = o * math.tanh(c)
    return h


def test_lstm_zero_weights():
    out = nn.lstm(np.ones((2, 5, 3)), P(np.zeros((3, 8))), P(np.zeros((2, 8))), P(np.zeros(8)))
    assert np.array_equal(out.data, np.zeros((2, 2)))


@pytest.mark.parametrize("xs", [[0.7], [0.7, -1.2, 0.3]])
def test_lstm_scalar_oracle(xs):
    wx, wh, b = [0.5, -0.3, 0.8, 1.1], [0.2, 0.4, -0.6, 0.9], [0.1, 1.0, -0.2, 0.3]
    out = nn.lstm(np.array(xs).reshape(1, -1, 1), P([wx]), P([wh]), P(b))
    assert out.data[0, 0] == pytest.approx(_scalar_lstm(xs, wx, wh, b), abs=1e-12)


def test_lstm_empty_sequence():
    with pytest.raises(ShapeError):
        nn.lstm(np.zeros((1, 0, 2)), P(np.zeros((2, 4))), P(np.zeros((1, 4))), P(np.zeros(4)))


def test_cross_entropy_examples():
    assert float(nn.softmax_cross_entropy(np.zeros((4, 3)), [0, 1, 2, 0]).data) == pytest.approx(
        math.log(3))
    assert float(nn.softmax_cross_entropy([[1.0, 0.0, 0.0]], [0]).data) == pytest.approx(
        -math.log(math.e / (math.e + 2)))
    assert float(nn.softmax_cross_entropy([[50.0, 0.0, 0.0]], [0]).data) < 1e-20
    with pytest.raises(LabelRangeError):
        nn.softmax_cross_entropy(np.zeros((1, 3)), [3])


def test_cross_entropy_gradient_formula(rng):
    logits = P(rng.normal(size=(4, 3)))
    labels = np.array([0, 2, 1, 1])
    with nn.Tape():
        loss = nn.softmax_cross_entropy(logits, labels)
    nn.backward(loss)
    expected = (nn.softmax(logits.data) - np.eye(3)[labels]) / 4
    np.testing.assert_allclose(logits.grad, expected, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6), st.integers(0, 1))
def test_softmax_properties(row, label):
    logits = np.array([row])
    assert nn.softmax(logits).sum() == pytest.approx(1.0, abs=1e-9)
    assert float(nn.softmax_cross_entropy(logits, [label]).data) >= 0.0


def test_backward_sum_is_ones():
    x = P(np.arange(6.0).reshape(2, 3))
    with nn.Tape():
        s = nn.tsum(x)
    nn.backward(s)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_accumulates(rng):
    W, b = P(rng.normal(size=(3, 2))), P(rng.normal(size=2))
    x = rng.normal(size=(4, 3))
    with nn.Tape():
        loss = nn.softmax_cross_entropy(nn.dense(x, W, b), [0, 1, 1, 0])
    nn.backward(loss)
    once = W.grad.copy()
    nn.backward(loss)
    assert np.array_equal(W.grad, 2 * once)
    nn.zero_grads([W, b])
    assert not W.grad.any()


def test_stale_record(rng):
    W, b = P(rng.normal(size=(3, 2))), P(np.zeros(2))
    with nn.Tape() as tape:
        loss = nn.tsum(nn.dense(np.ones((1, 3)), W, b))
    nn.sgd_momentum_step([W, b], 0.1)
    with pytest.raises(GraphError):
        nn.backward(loss)
    with nn.Tape() as tape:
        loss = nn.tsum(nn.dense(np.ones((1, 3)), W, b))
    tape.clear()
    with pytest.raises(GraphError):
        nn.backward(loss)
    with pytest.raises(GraphError):
        nn.backward(nn.tsum(nn.dense(np.ones((1, 3)), W, b)))  # not recorded


def test_tape_reverse_order():
    x = P([1.0, 2.0])
    with nn.Tape() as tape:
        y = nn.relu(x)
        z = nn.tsum(y)
    assert [op.out for op in tape.ops] == [y, z]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises():
    with pytest.raises(NumericError):
        nn.dense([[1e308, 1e308]], P([[1e308], [1e308]]), P([0.0]))


@pytest.mark.parametrize("trial", range(5))
def test_operator_gradients(trial):
    rng = np.random.default_rng(100 + trial)
    for name, op, arrays in operator_cases(rng):
        assert check_op(op, arrays, rng) < 1e-4, name


def test_sgd_momentum_examples():
    p = P([1.0])
    p.grad[:] = 0.5
    nn.sgd_momentum_step([p], lr=0.01, momentum=0.9)
    assert p.velocity[0] == pytest.approx(-0.005, abs=1e-15)
    assert p.data[0] == pytest.approx(0.995, abs=1e-15)
    nn.sgd_momentum_step([p], lr=0.01, momentum=0.9)
    assert p.velocity[0] == pytest.approx(-0.0095, abs=1e-15)
    assert p.data[0] == pytest.approx(0.9855, abs=1e-15)
    q = P([2.0])
    nn.sgd_momentum_step([q], lr=0.01, momentum=0.9)
    assert q.data[0] == 2.0 and q.velocity[0] == 0.0


def test_momentum_zero_is_plain_sgd(rng):
    p = P(rng.normal(size=5))
    start = p.data.copy()
    expected = start.copy()
    for _ in range(3):
        g = rng.normal(size=5)
        p.grad[:] = g
        expected = expected - 0.05 * g
        nn.sgd_momentum_step([p], lr=0.05, momentum=0.0)
    assert np.array_equal(p.data, expected)
