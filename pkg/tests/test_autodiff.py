import math

import numpy as np
import pytest

from pirnn import autodiff as ad
from pirnn.core import seed_rng
from pirnn.networks import SubnetShape, as_parameters, init_subnet, subnet_sequence, subnet_step


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm(x, h, c, Wx, Wh, b):
    """Loop-by-loop reference cell, gate order i, f, g, o."""
    H = len(h)
    z = [b[r] + sum(Wx[r, j] * x[j] for j in range(len(x))) + sum(Wh[r, j] * h[j] for j in range(H))
         for r in range(4 * H)]
    h1, c1 = [], []
    for k in range(H):
        i, f = _sig(z[k]), _sig(z[H + k])
        g, o = math.tanh(z[2 * H + k]), _sig(z[3 * H + k])
        ck = f * c[k] + i * g
        c1.append(ck)
        h1.append(o * math.tanh(ck))
    return np.array(h1), np.array(c1)


def fd_check(loss_fn, params, h=1e-5, tol=1e-5):
    """Central differences over every entry of every parameter."""
    P = as_parameters(params)
    grads = ad.gradients(loss_fn(P), P)
    worst = 0.0
    for k, v in params.items():
        flat = v.reshape(-1)
        g = grads[k].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp = float(loss_fn(as_parameters(params)).value)
            flat[j] = old - h
            lm = float(loss_fn(as_parameters(params)).value)
            flat[j] = old
            num = (lp - lm) / (2 * h)
            err = abs(num - g[j]) / max(abs(num), abs(g[j]), 1e-6)
            worst = max(worst, err)
    assert worst < tol
    return worst


def test_lstm_cell_zero():
    H, d = 4, 3
    out = ad.lstm_cell(np.zeros((1, d)), np.zeros((1, H)), np.zeros((1, H)),
                       np.zeros((4 * H, d)), np.zeros((4 * H, H)), np.zeros(4 * H)).value
    assert np.array_equal(out, np.zeros((1, 2 * H)))


def test_lstm_cell_gate_saturation():
    rng = seed_rng(0)
    H, d = 4, 3
    b = np.zeros(4 * H)
    b[:H] = -1e3          # input gate closed
    b[H:2 * H] = 1e3      # forget gate open
    c_prev = rng.standard_normal((2, H))
    out = ad.lstm_cell(rng.standard_normal((2, d)), rng.standard_normal((2, H)), c_prev,
                       0.1 * rng.standard_normal((4 * H, d)), 0.1 * rng.standard_normal((4 * H, H)),
                       b).value
    assert np.array_equal(out[:, H:], c_prev)


def test_lstm_cell_matches_scalar_reference():
    rng = seed_rng(1)
    d, H = 3, 4
    x, h, c = rng.standard_normal(d), rng.standard_normal(H), rng.standard_normal(H)
    Wx, Wh, b = rng.standard_normal((4 * H, d)), rng.standard_normal((4 * H, H)), rng.standard_normal(4 * H)
    out = ad.lstm_cell(x[None], h[None], c[None], Wx, Wh, b).value[0]
    h1, c1 = scalar_lstm(x, h, c, Wx, Wh, b)
    assert np.allclose(out[:H], h1, rtol=1e-12, atol=1e-14)
    assert np.allclose(out[H:], c1, rtol=1e-12, atol=1e-14)
    assert np.all(np.abs(out[:H]) < 1)


def test_lstm_sequence_matches_cell_loop():
    rng = seed_rng(2)
    B, T, d, H = 2, 6, 3, 5
    p = ad.init_lstm(rng, d, H, "l")
    X = rng.standard_normal((B, T, d))
    seq = ad.lstm_sequence(X, p["l.Wx"], p["l.Wh"], p["l.b"]).value
    h = c = np.zeros((B, H))
    for t in range(T):
        hc = ad.lstm_cell(X[:, t], h, c, p["l.Wx"], p["l.Wh"], p["l.b"]).value
        h, c = hc[:, :H], hc[:, H:]
        assert np.allclose(seq[:, t], h, rtol=0, atol=1e-15)


def test_lstm_dimension_errors():
    with pytest.raises(ValueError):
        ad.lstm_cell(np.zeros((1, 2)), np.zeros((1, 4)), np.zeros((1, 4)),
                     np.zeros((16, 3)), np.zeros((16, 4)), np.zeros(16))
    with pytest.raises(ValueError):
        ad.lstm_sequence(np.zeros((1, 5, 2)), np.zeros((16, 3)), np.zeros((16, 4)), np.zeros(16))


def test_dense_examples():
    x = np.array([[0.5, 2.0, 0.0]])
    assert np.array_equal(ad.dense(x, np.eye(3), np.zeros(3), activate=True).value, x)
    x = np.array([[-1.0, 2.0, -3.0]])
    assert np.array_equal(ad.dense(x, np.eye(3), np.zeros(3), activate=True).value, [[0.0, 2.0, 0.0]])
    assert np.array_equal(ad.dense(x, np.eye(3), np.zeros(3)).value, x)
    rng = seed_rng(3)
    x, W, b = rng.standard_normal((4, 7, 5)), rng.standard_normal((6, 5)), rng.standard_normal(6)
    ref = np.einsum("btj,ij->bti", x, W) + b
    assert np.allclose(ad.dense(x, W, b).value, ref, rtol=1e-13, atol=1e-14)
    with pytest.raises(ValueError):
        ad.dense(x, W.T, b)


def test_gradient_of_sum_is_ones():
    p = {"w": seed_rng(4).standard_normal((3, 4))}
    P = as_parameters(p)
    g = ad.gradients(ad.total(P["w"]), P)
    assert np.array_equal(g["w"], np.ones((3, 4)))


def test_gradient_of_unused_parameter_is_zero():
    rng = seed_rng(5)
    P = as_parameters({"a": rng.standard_normal(3), "b": rng.standard_normal(3)})
    g = ad.gradients(ad.total(ad.square(P["a"])), P)
    assert np.array_equal(g["b"], np.zeros(3))
    assert np.allclose(g["a"], 2 * P["a"].value)


def test_gradient_of_unrecorded_value_rejected():
    t = ad.Tensor(np.ones(3))
    P = {"x": ad.parameter(np.ones(3))}
    with pytest.raises(ValueError):
        ad.gradients(ad.total(P["x"]), {"x": P["x"], "c": t})
    with pytest.raises(ValueError):
        ad.backward(ad.total(t))
    with pytest.raises(ValueError):
        ad.backward(P["x"])


def test_elementwise_ops_fd():
    rng = seed_rng(6)
    params = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((3,)),
              "w": rng.standard_normal((3, 2))}

    def loss(P):
        a, b = P["a"], P["b"]
        u = ad.tanh(a * b) + ad.sigmoid(a - b) + ad.relu(a + 0.3)
        v = ad.concat([u, ad.stack([b, b * b], axis=0)], axis=0)
        return ad.mean(ad.square(ad.matmul(v, P["w"]))) + ad.total(ad.getitem(a, (0, slice(1, 3))))
    fd_check(loss, params)


def test_blend_routes_gradients():
    mask = np.array([[1.0, 0.0, 1.0]])
    P = as_parameters({"p": np.ones((1, 3)), "r": np.ones((1, 3))})
    g = ad.gradients(ad.total(ad.blend(mask, P["p"], P["r"])), P)
    assert np.array_equal(g["p"], mask) and np.array_equal(g["r"], 1 - mask)


def test_time_derivative_exact_for_quadratics():
    dt = 0.1
    t = np.arange(8) * dt
    X = (3 * t * t - 2 * t + 1)[None, :, None]
    assert np.allclose(ad.time_derivative(X, dt).value[0, :, 0], 6 * t - 2, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        ad.time_derivative(np.zeros((1, 2, 1)), dt)


def test_time_derivative_adjoint():
    rng = seed_rng(7)
    x, y = rng.standard_normal((2, 9, 3)), rng.standard_normal((2, 9, 3))
    lhs = np.sum(ad._fd(x, 0.02) * y)
    rhs = np.sum(x * ad._fd_adjoint(y, 0.02))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_stacked_lstm_mlp_gradient_check():
    """Two LSTM layers plus three dense layers on a ten-step sequence."""
    rng = seed_rng(8)
    shape = SubnetShape(2, 3, hidden=4, dense=(5, 4))
    params = init_subnet(rng, shape, "n")
    for v in params.values():
        v += 0.1 * rng.standard_normal(v.shape)     # move biases off zero
    X = rng.standard_normal((2, 10, 2))
    Y = rng.standard_normal((2, 10, 3))
    fd_check(lambda P: ad.mse(subnet_sequence(P, shape, "n", X, 0.7, np.array([1.0, 2.0, 0.5])), Y),
             params)


def test_recurrent_step_gradient_check_and_equivalence():
    rng = seed_rng(9)
    shape = SubnetShape(2, 2, hidden=3, dense=(4,))
    params = init_subnet(rng, shape, "s")
    for v in params.values():
        v += 0.1 * rng.standard_normal(v.shape)
    X = rng.standard_normal((2, 6, 2))
    Y = rng.standard_normal((2, 6, 2))

    def unrolled(P):
        state = ad.Tensor(np.zeros((2, shape.state_size)))
        outs = []
        for t in range(6):
            o = subnet_step(P, shape, "s", X[:, t], state)
            outs.append(o[:, :2])
            state = o[:, 2:]
        return ad.stack(outs, axis=1)

    P = as_parameters(params)
    assert np.allclose(unrolled(P).value, subnet_sequence(P, shape, "s", X).value, rtol=0, atol=1e-14)
    fd_check(lambda P: ad.mse(unrolled(P), Y), params)


def test_forward_is_bit_reproducible():
    rng = seed_rng(10)
    shape = SubnetShape(1, 2, hidden=8)
    params = init_subnet(rng, shape, "n")
    X = rng.standard_normal((3, 20, 1))
    P = as_parameters(params)
    a = subnet_sequence(P, shape, "n", X).value
    b = subnet_sequence(P, shape, "n", X).value
    assert np.array_equal(a, b)


def test_init_lstm_conventions():
    p = ad.init_lstm(seed_rng(0), 3, 5, "l")
    assert p["l.Wx"].shape == (20, 3) and p["l.Wh"].shape == (20, 5)
    assert np.array_equal(p["l.b"][5:10], np.ones(5)) and not np.any(p["l.b"][:5])
    for k in range(4):
        q = p["l.Wh"][5 * k:5 * k + 5]
        assert np.allclose(q @ q.T, np.eye(5), atol=1e-12)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    opt = ad.Adam(p, lr=0.1)
    opt.step({"w": np.zeros(2)})
    assert np.array_equal(p["w"], [1.0, -2.0]) and opt.t == 1


def test_adam_constant_gradient_step_size():
    p = {"w": np.zeros(3)}
    opt = ad.Adam(p, lr=0.01)
    g = np.array([3.0, -0.5, 1e-3])
    prev = p["w"].copy()
    for _ in range(2000):
        prev = p["w"].copy()
        opt.step({"w": g})
    step = p["w"] - prev
    assert np.allclose(step, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_quadratic_bowl():
    p = {"theta": np.array([1.0])}
    opt = ad.Adam(p, lr=0.01)
    for _ in range(5000):
        opt.step({"theta": 2 * p["theta"]})
    assert abs(p["theta"][0]) < 1e-3


def test_adam_rejects_nonfinite_with_name():
    opt = ad.Adam({"layer.W": np.zeros(2)})
    with pytest.raises(FloatingPointError, match="layer.W"):
        opt.step({"layer.W": np.array([np.nan, 0.0])})
    assert opt.t == 0


def test_adam_step_function():
    p = {"w": np.array([1.0])}
    opt = ad.Adam(p, lr=0.5)
    out, state = ad.adam_step(p, {"w": np.array([1.0])}, opt)
    assert out is p and state is opt
    assert p["w"][0] == pytest.approx(0.5, rel=1e-6)
