import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomagnav.neural import (MLP, AdamState, NonFiniteError, ShapeError, adam_step, backward,
                              dump_checkpoint, forward, load_checkpoint, soft_update)


def numeric_grads(net, x, w_out, h=1e-6):
    """Central differences of L = sum(out * w_out) w.r.t. every parameter."""
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = np.sum(net(x) * w_out)
            p[idx] = old - h
            fm = np.sum(net(x) * w_out)
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-3, np.abs(a) + np.abs(b)))


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 8), st.sampled_from(["linear", "tanh"]), st.integers(0, 2**31))
def test_gradient_check(n_hidden, width, act, seed):
    rng = np.random.default_rng(seed)
    sizes = [5] + [width] * n_hidden + [2]
    net = MLP(sizes, act, rng)
    x = rng.normal(size=(4, 5))
    w_out = rng.normal(size=(4, 2))
    _, cache = net.forward(x)
    grads, gin = net.backward(cache, w_out)
    for a, b in zip(grads, numeric_grads(net, x, w_out)):
        assert rel_err(a, b) < 1e-5
    # input gradient
    h = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = (np.sum(net(xp) * w_out) - np.sum(net(xm) * w_out)) / (2 * h)
    assert rel_err(gin, num) < 1e-5


def test_identity_layer_and_relu():
    net = MLP.from_layers([(np.eye(3), np.zeros(3))])
    np.testing.assert_array_equal(net([1.0, -2.0, 3.0]), [1.0, -2.0, 3.0])
    relu = MLP.from_layers([(np.eye(3), np.zeros(3)), (np.eye(3), np.zeros(3))])
    np.testing.assert_array_equal(relu([-1.0, -2.0, -3.0]), [0.0, 0.0, 0.0])


def test_full_size_net_shape():
    net = MLP([8, 512, 512, 512, 2], "tanh")
    out = net(np.ones(8))
    assert out.shape == (2,) and np.all(np.isfinite(out))


def test_linear_squared_loss_gradient():
    rng = np.random.default_rng(0)
    W, b = rng.normal(size=(3, 2)), rng.normal(size=2)
    net = MLP.from_layers([(W, b)])
    x, y = rng.normal(size=3), rng.normal(size=2)
    out, cache = forward(net, x)
    grads, _ = backward(net, cache, 2 * (out - y))
    np.testing.assert_allclose(grads[0], np.outer(x, 2 * (W.T @ x + b - y)))
    np.testing.assert_allclose(grads[1], 2 * (W.T @ x + b - y))


def test_zero_output_gradient():
    net = MLP([3, 4, 2])
    _, cache = net.forward(np.ones((2, 3)))
    grads, _ = net.backward(cache, np.zeros((2, 2)))
    assert all(not np.any(g) for g in grads)


def test_shape_errors():
    net = MLP([3, 4, 2])
    with pytest.raises(ShapeError):
        net(np.ones(4))
    _, cache = net.forward(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        net.backward(cache, np.ones((2, 3)))
    with pytest.raises(ShapeError):
        MLP.from_layers([(np.ones((3, 2)), np.ones(2)), (np.ones((3, 1)), np.ones(1))])


def test_forward_bit_identical():
    net = MLP([4, 16, 2], "tanh", np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(10, 4))
    assert np.array_equal(net(x), net(x))


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_bounded():
    net = MLP.from_layers([(np.zeros((2, 2)), np.zeros(2))])
    st_ = AdamState.for_net(net, lr=1e-3)
    g = [np.array([[0.5, -2.0], [3.0, -0.1]]), np.array([1.0, -1.0])]
    adam_step(net, g, st_)
    np.testing.assert_allclose(net.weights[0], -1e-3 * np.sign(g[0]), rtol=1e-4)
    assert np.all(np.abs(net.weights[0]) <= 1e-3 * (1 + 1e-6))


def test_adam_zero_grad_and_determinism():
    rng = np.random.default_rng(0)
    a = MLP([3, 4, 1], rng=rng)
    b = a.copy()
    sa, sb = AdamState.for_net(a), AdamState.for_net(b)
    before = [p.copy() for p in a.parameters()]
    adam_step(a, [np.zeros_like(p) for p in a.parameters()], sa)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), before))
    g = [rng.normal(size=p.shape) for p in b.parameters()]
    adam_step(a, g, sa)
    adam_step(b, [np.zeros_like(p) for p in b.parameters()], sb)
    adam_step(b, g, sb)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_adam_rejects_non_finite():
    net = MLP([2, 2])
    st_ = AdamState.for_net(net)
    before = [p.copy() for p in net.parameters()]
    g = [np.full_like(p, np.nan) for p in net.parameters()]
    with pytest.raises(NonFiniteError):
        adam_step(net, g, st_)
    assert st_.t == 0
    assert all(np.array_equal(p, q) for p, q in zip(net.parameters(), before))


# ---------------------------------------------------------------------------
# soft update


def test_soft_update_examples():
    t = MLP.from_layers([(np.zeros((1, 1)), np.zeros(1))])
    o = MLP.from_layers([(np.full((1, 1), 2.0), np.full(1, 2.0))])
    soft_update(t, o, 0.5)
    assert t.weights[0][0, 0] == 1.0
    soft_update(t, o, 0.0)
    assert t.weights[0][0, 0] == 1.0
    soft_update(t, o, 1.0)
    assert t.weights[0][0, 0] == 2.0
    with pytest.raises(ShapeError):
        soft_update(t, MLP([2, 1]), 0.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_soft_update_contracts(tau, seed):
    rng = np.random.default_rng(seed)
    t, o = MLP([3, 5, 2], rng=rng), MLP([3, 5, 2], rng=rng)
    d0 = sum(np.sum((a - b) ** 2) for a, b in zip(t.parameters(), o.parameters()))
    soft_update(t, o, tau)
    d1 = sum(np.sum((a - b) ** 2) for a, b in zip(t.parameters(), o.parameters()))
    # absolute slack covers float round-off of the blend itself
    assert d1 <= d0 * (1 - tau) ** 2 * (1 + 1e-9) + 1e-28


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact():
    rng = np.random.default_rng(7)
    nets = {"actor": MLP([8, 6, 2], "tanh", rng), "critic": MLP([10, 6, 1], rng=rng)}
    adams = {"critic": AdamState.for_net(nets["critic"], lr=3e-4)}
    adam_step(nets["critic"], [rng.normal(size=p.shape) for p in nets["critic"].parameters()],
              adams["critic"])
    blob = dump_checkpoint(nets, adams, {"episode": 12}, {"gamma": 0.99})
    nets2, adams2, meta, chash = load_checkpoint(blob)
    assert meta == {"episode": 12}
    for k in nets:
        assert nets2[k].output_activation == nets[k].output_activation
        assert all(np.array_equal(a, b) for a, b in zip(nets[k].parameters(), nets2[k].parameters()))
    a2 = adams2["critic"]
    assert a2.t == 1 and a2.lr == 3e-4
    assert all(np.array_equal(a, b) for a, b in zip(adams["critic"].m, a2.m))
    assert dump_checkpoint(nets2, adams2, meta, {"gamma": 0.99}) == blob
    assert "actor" not in adams2


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        load_checkpoint(b"nope")
    blob = dump_checkpoint({"a": MLP([2, 1])})
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(blob[:-3])
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(blob + b"x")
