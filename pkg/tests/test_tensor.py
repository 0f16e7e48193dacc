"""Tensor engine: backward contracts, per-op gradients, determinism."""

import numpy as np
import pytest

from demopp import tensor as T
from demopp.gradcheck import gradcheck
from demopp.tensor import Tensor


def test_backward_identity_gradient():
    w = T.parameter([1.0, 2.0, 3.0])
    T.tsum(w).backward()
    assert np.array_equal(w.grad, [1.0, 1.0, 1.0])


def test_backward_quadratic_rule():
    w = T.parameter([2.0, -1.0])
    T.tsum(T.mul(w, w)).backward()
    assert np.array_equal(w.grad, [4.0, -2.0])


def test_backward_map_returns_leaf_grads():
    w = T.parameter([1.0, 2.0])
    v = T.parameter([3.0])
    loss = T.add(T.tsum(T.mul(w, w)), T.tsum(v))
    grads = T.backward(loss)
    assert set(grads) == {w.node_id, v.node_id}
    assert np.array_equal(grads[w.node_id].data, [2.0, 4.0])


def test_backward_rejects_non_scalar_root():
    w = T.parameter([1.0, 2.0])
    y = T.mul(w, 2.0)
    with pytest.raises(T.UsageError, match="scalar"):
        y.backward()


def test_backward_rejects_detached_root():
    w = T.parameter([1.0])
    with pytest.raises(T.UsageError, match="detached"):
        w.backward()
    y = T.tsum(w).detach()
    with pytest.raises(T.UsageError, match="detached"):
        y.backward()


def test_mixed_dtype_rejected():
    a = Tensor(np.ones(3, dtype=np.float32))
    b = Tensor(np.ones(3, dtype=np.float64))
    with pytest.raises(T.UsageError, match="mixed dtypes"):
        T.add(a, b)


def _mlp_loss(x, w1, b1, w2, b2):
    h = T.tanh(T.linear(x, w1, b1))
    return T.tsum(T.mul(T.linear(h, w2, b2), 0.1))


def test_mlp_matches_finite_differences():
    err = gradcheck(_mlp_loss, [(4, 5), (5, 6), (6,), (6, 3), (3,)], seed=0)
    assert err < 1e-6


@pytest.mark.parametrize(
    "name,fn,shapes",
    [
        ("add", lambda a, b: T.tsum(T.add(a, b)), [(3, 4), (4,)]),
        ("sub", lambda a, b: T.tsum(T.sub(a, b)), [(3, 4), (3, 1)]),
        ("mul", lambda a, b: T.tsum(T.mul(a, b)), [(3, 4), (3, 4)]),
        ("div", lambda a, b: T.tsum(T.div(a, T.add(T.mul(b, b), 1.0))), [(3,), (3,)]),
        ("matmul", lambda a, b: T.tsum(T.matmul(a, b)), [(3, 4), (4, 2)]),
        ("batched-matmul", lambda a, b: T.tsum(T.matmul(a, b)), [(2, 3, 4), (2, 4, 2)]),
        ("linear", lambda x, w, b: T.tsum(T.linear(x, w, b)), [(2, 3, 4), (4, 5), (5,)]),
        ("exp", lambda a: T.tsum(T.exp(a)), [(3, 3)]),
        ("log", lambda a: T.tsum(T.log(T.add(T.mul(a, a), 0.5))), [(4,)]),
        ("sqrt", lambda a: T.tsum(T.sqrt(T.add(T.mul(a, a), 1.0))), [(4,)]),
        ("tanh", lambda a: T.tsum(T.tanh(a)), [(5,)]),
        ("sigmoid", lambda a: T.tsum(T.sigmoid(a)), [(5,)]),
        ("silu", lambda a: T.tsum(T.silu(a)), [(5,)]),
        ("softplus", lambda a: T.tsum(T.softplus(a)), [(5,)]),
        ("power", lambda a: T.tsum(T.power(T.add(T.mul(a, a), 1.0), 3)), [(4,)]),
        ("mean", lambda a: T.tmean(T.mul(a, a)), [(3, 4)]),
        ("sum-axis", lambda a: T.tsum(T.mul(T.tsum(a, axis=1), 2.0)), [(3, 4)]),
        ("softmax", lambda a: T.tsum(T.mul(T.softmax(a), np.arange(12.0).reshape(3, 4))), [(3, 4)]),
        ("log_softmax", lambda a: T.tsum(T.mul(T.log_softmax(a), 0.3)), [(3, 4)]),
        ("reshape", lambda a: T.tsum(T.mul(T.reshape(a, (6, 2)), 0.5)), [(3, 4)]),
        ("transpose", lambda a: T.tsum(T.mul(T.transpose(a, (1, 0)), np.arange(12.0).reshape(4, 3))), [(3, 4)]),
        ("concat", lambda a, b: T.tsum(T.mul(T.concat([a, b], axis=1), 0.25)), [(3, 2), (3, 4)]),
        ("getitem", lambda a: T.tsum(T.mul(a[1:, ::2], 2.0)), [(4, 6)]),
        ("take", lambda a: T.tsum(T.take(a, np.array([2, 0, 2]), axis=0)), [(4, 3)]),
        ("broadcast", lambda a: T.tsum(T.mul(T.broadcast_to(a, (5, 3)), np.arange(15.0).reshape(5, 3))), [(1, 3)]),
        ("smooth_l1", lambda a, b: T.tsum(T.smooth_l1(T.mul(a, 3.0), b)), [(4, 2), (4, 2)]),
        ("max", lambda a: T.tsum(T.tmax(a, axis=1)), [(4, 5)]),
        ("abs", lambda a: T.tsum(T.absolute(T.add(a, 0.1))), [(5,)]),
        ("layer_norm", lambda x, g, b: T.tsum(T.mul(T.layer_norm(x, g, b), 0.3)), [(4, 6), (6,), (6,)]),
    ],
)
def test_op_gradients(name, fn, shapes):
    assert gradcheck(fn, shapes, seed=hash(name) % 1000) < 1e-5


def test_gradient_linearity():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 4))

    def grad_of(a_coef, b_coef):
        w = T.parameter(x, T.F64)
        l1 = T.tsum(T.mul(T.tanh(w), 1.0))
        l2 = T.tsum(T.mul(w, w))
        T.add(T.mul(l1, a_coef), T.mul(l2, b_coef)).backward()
        return w.grad

    ga = grad_of(1.0, 0.0)
    gb = grad_of(0.0, 1.0)
    gab = grad_of(0.7, -1.3)
    assert np.abs(gab - (0.7 * ga - 1.3 * gb)).max() < 1e-12


def test_backward_deterministic_bitwise():
    def run():
        rng = np.random.default_rng(9)
        w = T.parameter(rng.standard_normal((6, 6)).astype(np.float32))
        x = Tensor(rng.standard_normal((6, 6)).astype(np.float32))
        h = T.silu(T.matmul(x, w))
        loss = T.tsum(T.mul(T.softmax(h), h))
        loss.backward()
        return w.grad.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_no_grad_blocks_recording():
    w = T.parameter([1.0, 2.0])
    with T.no_grad():
        y = T.tsum(T.mul(w, w))
    assert y._vjp is None and not y.requires_grad


def test_masked_softmax_zeroes_masked_and_rejects_empty_rows():
    x = Tensor(np.zeros((2, 3), dtype=np.float32))
    mask = np.array([[0.0, -np.inf, 0.0], [0.0, 0.0, 0.0]])
    p = T.masked_softmax(x, mask)
    assert p.data[0, 1] == 0.0
    assert np.allclose(p.data.sum(-1), 1.0)
    with pytest.raises(T.UsageError, match="masked"):
        T.masked_softmax(x, np.full((2, 3), -np.inf))


def test_dropout_inverted_and_disabled_at_eval():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((400,), dtype=np.float32))
    y = T.dropout(x, 0.25, rng, training=False)
    assert y is x
    w = T.parameter(np.ones((4000,), dtype=np.float32))
    z = T.dropout(w, 0.25, np.random.default_rng(3), training=True)
    kept = z.data != 0
    assert abs(kept.mean() - 0.75) < 0.05
    assert np.allclose(z.data[kept], 1.0 / 0.75)
