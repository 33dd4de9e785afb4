"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Tensor` records the op that produced it; :func:`backward` walks the
graph in reverse topological order. Layers are fused ops (a dense layer, an
LSTM cell, a whole LSTM sequence) with hand-written adjoints, which keeps the
tape short enough for step-by-step recurrent rollouts.
"""
from __future__ import annotations

import math

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(value, name=None) -> Tensor:
    """Trainable leaf; shares memory with ``value`` when it is already a float64 array."""
    return Tensor(value, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn):
    parents = tuple(p for p in parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(value, req, parents if req else (), backward_fn if req else None)


def _acc(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True) if np.shape(g) == t.value.shape \
            else np.broadcast_to(g, t.value.shape).copy()
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))
    return _node(a.value + b.value, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))
    return _node(a.value - b.value, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.value, b.shape))
    return _node(a.value * b.value, (a, b), bw)


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _node(a.value * mask, (a,), lambda g: _acc(a, g * mask))


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid(a.value)
    return _node(y, (a,), lambda g: _acc(a, g * y * (1 - y)))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: _acc(a, g * (1 - y * y)))


def square(a):
    a = as_tensor(a)
    return _node(a.value ** 2, (a,), lambda g: _acc(a, 2 * g * a.value))


def total(a):
    a = as_tensor(a)
    return _node(a.value.sum(), (a,), lambda g: _acc(a, np.broadcast_to(g, a.shape)))


def mean(a):
    a = as_tensor(a)
    n = a.value.size
    return _node(a.value.mean(), (a,), lambda g: _acc(a, np.broadcast_to(g / n, a.shape)))


# --- structural ---------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _acc(a, g @ np.swapaxes(b.value, -1, -2))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))
    return _node(a.value @ b.value, (a, b), bw)


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        _acc(a, full)
    return _node(a.value[idx], (a,), bw)


def concat(items, axis=-1):
    items = [as_tensor(t) for t in items]
    sizes = np.cumsum([t.value.shape[axis] for t in items])[:-1]

    def bw(g):
        for t, piece in zip(items, np.split(g, sizes, axis=axis)):
            _acc(t, piece)
    return _node(np.concatenate([t.value for t in items], axis=axis), items, bw)


def stack(items, axis=0):
    items = [as_tensor(t) for t in items]

    def bw(g):
        for k, t in enumerate(items):
            if t.requires_grad:
                _acc(t, np.take(g, k, axis=axis))
    return _node(np.stack([t.value for t in items], axis=axis), items, bw)


def blend(mask, pred, real):
    """``mask * pred + (1 - mask) * real`` with a constant 0/1 ``mask``."""
    pred, real = as_tensor(pred), as_tensor(real)
    mask = np.asarray(mask, dtype=np.float64)

    def bw(g):
        _acc(pred, _unbroadcast(g * mask, pred.shape))
        _acc(real, _unbroadcast(g * (1 - mask), real.shape))
    return _node(mask * pred.value + (1 - mask) * real.value, (pred, real), bw)


# --- layers --------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def dense(x, W, b, activate=False):
    """``y = x W^T + b``, optionally followed by ReLU; works on any leading shape."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"dense: input {x.shape} incompatible with weight {W.shape}, bias {b.shape}")
    y = x.value @ W.value.T + b.value
    if activate:
        mask = y > 0
        y = y * mask

    def bw(g):
        if activate:
            g = g * mask
        g2 = g.reshape(-1, g.shape[-1])
        if W.requires_grad:
            _acc(W, g2.T @ x.value.reshape(-1, x.shape[-1]))
        if b.requires_grad:
            _acc(b, g2.sum(axis=0))
        if x.requires_grad:
            _acc(x, g @ W.value)
    return _node(y, (x, W, b), bw)


def _gates(z, H):
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    return i, f, g, o


def lstm_cell(x, h, c, Wx, Wh, b):
    """One LSTM step (gate order i, f, g, o). Returns a tensor holding ``[h_t, c_t]``
    along the last axis; split with :func:`split_hc`."""
    x, h, c, Wx, Wh, b = (as_tensor(t) for t in (x, h, c, Wx, Wh, b))
    H = Wh.shape[1]
    if x.shape[-1] != Wx.shape[1] or Wx.shape[0] != 4 * H or h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError(f"lstm_cell: dimension mismatch x{x.shape} h{h.shape} Wx{Wx.shape} Wh{Wh.shape}")
    z = x.value @ Wx.value.T + h.value @ Wh.value.T + b.value
    i, f, g, o = _gates(z, H)
    c1 = f * c.value + i * g
    tc = np.tanh(c1)
    h1 = o * tc

    def bw(grad):
        dh, dc = grad[..., :H], grad[..., H:]
        dc = dc + dh * o * (1 - tc * tc)
        dz = np.concatenate([dc * g * i * (1 - i), dc * c.value * f * (1 - f),
                             dc * i * (1 - g * g), dh * tc * o * (1 - o)], axis=-1)
        if Wx.requires_grad:
            _acc(Wx, dz.T @ x.value)
        if Wh.requires_grad:
            _acc(Wh, dz.T @ h.value)
        if b.requires_grad:
            _acc(b, dz.sum(axis=0))
        if x.requires_grad:
            _acc(x, dz @ Wx.value)
        if h.requires_grad:
            _acc(h, dz @ Wh.value)
        if c.requires_grad:
            _acc(c, dc * f)
    return _node(np.concatenate([h1, c1], axis=-1), (x, h, c, Wx, Wh, b), bw)


def split_hc(hc, H):
    return getitem(hc, (Ellipsis, slice(0, H))), getitem(hc, (Ellipsis, slice(H, 2 * H)))


def lstm_sequence(X, Wx, Wh, b):
    """Run an LSTM over ``X`` of shape ``(B, T, d)`` from zero state; returns ``(B, T, H)``.

    The adjoint is full backpropagation through time.
    """
    X, Wx, Wh, b = (as_tensor(t) for t in (X, Wx, Wh, b))
    B, T, d = X.shape
    H = Wh.shape[1]
    if d != Wx.shape[1] or Wx.shape[0] != 4 * H:
        raise ValueError(f"lstm_sequence: input {X.shape} incompatible with Wx {Wx.shape}")
    Zx = X.value @ Wx.value.T + b.value
    WhT = Wh.value.T
    I = np.empty((B, T, H)); F = np.empty((B, T, H)); Gg = np.empty((B, T, H)); O = np.empty((B, T, H))
    Cs = np.empty((B, T + 1, H)); Hs = np.empty((B, T + 1, H)); TC = np.empty((B, T, H))
    Cs[:, 0] = 0.0
    Hs[:, 0] = 0.0
    for t in range(T):
        z = Zx[:, t] + Hs[:, t] @ WhT
        i, f, g, o = _gates(z, H)
        c1 = f * Cs[:, t] + i * g
        tc = np.tanh(c1)
        I[:, t], F[:, t], Gg[:, t], O[:, t], TC[:, t] = i, f, g, o, tc
        Cs[:, t + 1] = c1
        Hs[:, t + 1] = o * tc

    def bw(dH):
        dZ = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        Whv = Wh.value
        for t in range(T - 1, -1, -1):
            i, f, g, o, tc = I[:, t], F[:, t], Gg[:, t], O[:, t], TC[:, t]
            dh = dH[:, t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            dz = dZ[:, t]
            dz[:, :H] = dc * g * i * (1 - i)
            dz[:, H:2 * H] = dc * Cs[:, t] * f * (1 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1 - o)
            dc_next = dc * f
            dh_next = dz @ Whv
        dZ2 = dZ.reshape(-1, 4 * H)
        if Wx.requires_grad:
            _acc(Wx, dZ2.T @ X.value.reshape(-1, d))
        if Wh.requires_grad:
            _acc(Wh, dZ2.T @ Hs[:, :T].reshape(-1, H))
        if b.requires_grad:
            _acc(b, dZ2.sum(axis=0))
        if X.requires_grad:
            _acc(X, dZ @ Wx.value)
    return _node(Hs[:, 1:].copy(), (X, Wx, Wh, b), bw)


def time_derivative(X, dt):
    """Finite-difference d/dt along axis 1: central inside, second-order one-sided
    at both ends. Exact for polynomials of degree <= 2."""
    X = as_tensor(X)
    if X.shape[1] < 3:
        raise ValueError("time_derivative needs at least 3 samples")
    return _node(_fd(X.value, dt), (X,), lambda g: _acc(X, _fd_adjoint(g, dt)))


def _fd(x, dt):
    d = np.empty_like(x)
    d[:, 1:-1] = (x[:, 2:] - x[:, :-2]) / (2 * dt)
    d[:, 0] = (-3 * x[:, 0] + 4 * x[:, 1] - x[:, 2]) / (2 * dt)
    d[:, -1] = (3 * x[:, -1] - 4 * x[:, -2] + x[:, -3]) / (2 * dt)
    return d


def _fd_adjoint(g, dt):
    out = np.zeros_like(g)
    gi = g[:, 1:-1] / (2 * dt)
    out[:, 2:] += gi
    out[:, :-2] -= gi
    g0 = g[:, 0] / (2 * dt)
    out[:, 0] -= 3 * g0
    out[:, 1] += 4 * g0
    out[:, 2] -= g0
    gn = g[:, -1] / (2 * dt)
    out[:, -1] += 3 * gn
    out[:, -2] -= 4 * gn
    out[:, -3] += gn
    return out


def mse(a, b, weight=1.0):
    """``weight * mean((a - b)**2)``; ``b`` may be a constant."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    r = a.value - b.value
    n = r.size

    def bw(g):
        gr = (2 * weight / n) * g * r
        _acc(a, gr)
        _acc(b, -gr)
    return _node(weight * np.mean(r * r), (a, b), bw)


# --- fused recurrent subnet step ------------------------------------------------

def _cell_fwd(x, h, c, Wx, Wh, b):
    H = Wh.shape[1]
    z = x @ Wx.T + h @ Wh.T + b
    i, f, g, o = _gates(z, H)
    c1 = f * c + i * g
    tc = np.tanh(c1)
    return o * tc, c1, (x, h, c, i, f, g, o, tc)


def _cell_bwd(dh1, dc1, cache, Wx, Wh):
    x, h, c, i, f, g, o, tc = cache
    dc = dc1 + dh1 * o * (1 - tc * tc)
    dz = np.concatenate([dc * g * i * (1 - i), dc * c * f * (1 - f),
                         dc * i * (1 - g * g), dh1 * tc * o * (1 - o)], axis=-1)
    return dz @ Wx, dz @ Wh, dc * f, dz.T @ x, dz.T @ h, dz.sum(axis=0)


def rmlp_forward(x, state, lstm, dense_layers, in_scale, out_scale):
    """Numpy forward of one step through stacked LSTM cells and a ReLU MLP.

    ``state`` packs ``[h_1, c_1, h_2, c_2, ...]`` along the last axis. Returns
    ``(y, new_state, cache)``; the final dense layer is linear.
    """
    H = lstm[0][1].shape[1]
    u = x * in_scale
    new_state = np.empty_like(state)
    caches = []
    for k, (Wx, Wh, b) in enumerate(lstm):
        h, c = state[:, 2 * k * H:(2 * k + 1) * H], state[:, (2 * k + 1) * H:(2 * k + 2) * H]
        u, c1, cache = _cell_fwd(u, h, c, Wx, Wh, b)
        new_state[:, 2 * k * H:(2 * k + 1) * H] = u
        new_state[:, (2 * k + 1) * H:(2 * k + 2) * H] = c1
        caches.append(cache)
    masks = []
    last = len(dense_layers) - 1
    dcache = []
    for k, (W, b) in enumerate(dense_layers):
        dcache.append(u)
        u = u @ W.T + b
        if k < last:
            m = u > 0
            u = u * m
            masks.append(m)
    return u * out_scale, new_state, (caches, dcache, masks)


def recurrent_mlp_step(x, state, lstm, dense_layers, in_scale, out_scale):
    """Tape op for :func:`rmlp_forward`; output is ``[y, new_state]`` on the last axis.

    ``lstm`` is a list of ``(Wx, Wh, b)`` tensors, ``dense_layers`` a list of
    ``(W, b)``; ``in_scale``/``out_scale`` are constant multipliers.
    """
    x, state = as_tensor(x), as_tensor(state)
    flat = [t for triple in lstm for t in triple] + [t for pair in dense_layers for t in pair]
    lv = [tuple(t.value for t in triple) for triple in lstm]
    dv = [tuple(t.value for t in pair) for pair in dense_layers]
    y, new_state, (caches, dcache, masks) = rmlp_forward(x.value, state.value, lv, dv,
                                                        in_scale, out_scale)
    n_out = y.shape[-1]
    H = lv[0][1].shape[1]

    def bw(g):
        dy = g[:, :n_out] * out_scale
        ds_next = g[:, n_out:]
        for k in range(len(dv) - 1, -1, -1):
            W, b = dense_layers[k]
            if k < len(dv) - 1:
                dy = dy * masks[k]
            _acc(W, dy.T @ dcache[k])
            _acc(b, dy.sum(axis=0))
            dy = dy @ W.value
        du = dy
        ds_prev = np.empty_like(state.value)
        for k in range(len(lv) - 1, -1, -1):
            Wx, Wh, b = lstm[k]
            dh = du + ds_next[:, 2 * k * H:(2 * k + 1) * H]
            dc = ds_next[:, (2 * k + 1) * H:(2 * k + 2) * H]
            du, dh0, dc0, dWx, dWh, db = _cell_bwd(dh, dc, caches[k], Wx.value, Wh.value)
            _acc(Wx, dWx)
            _acc(Wh, dWh)
            _acc(b, db)
            ds_prev[:, 2 * k * H:(2 * k + 1) * H] = dh0
            ds_prev[:, (2 * k + 1) * H:(2 * k + 2) * H] = dc0
        _acc(x, du * in_scale)
        _acc(state, ds_prev)
    return _node(np.concatenate([y, new_state], axis=-1), [x, state] + flat, bw)


# --- driver -----------------------------------------------------------------------

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable tensor."""
    if loss.value.size != 1:
        raise ValueError("backward needs a scalar loss")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any recorded parameter")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            if node.parents:
                node.grad = None          # free intermediate adjoints


def gradients(loss: Tensor, params: dict) -> dict:
    """Gradients of ``loss`` w.r.t. every parameter in ``params`` (zeros if unreached)."""
    for k, p in params.items():
        if not p.requires_grad:
            raise ValueError(f"{k!r} is not a recorded parameter")
        p.grad = None
    backward(loss)
    out = {k: (np.zeros_like(p.value) if p.grad is None else p.grad) for k, p in params.items()}
    for p in params.values():
        p.grad = None
    return out


# --- parameters and optimizer -------------------------------------------------------

def init_lstm(rng, d, H, prefix):
    """Uniform input weights, orthogonal recurrent blocks, forget-gate bias +1."""
    lim = math.sqrt(6.0 / (d + H))
    Wx = rng.uniform(-lim, lim, size=(4 * H, d))
    blocks = []
    for _ in range(4):
        q, r = np.linalg.qr(rng.standard_normal((H, H)))
        blocks.append(q * np.sign(np.diag(r)))
    Wh = np.vstack(blocks)
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return {f"{prefix}.Wx": Wx, f"{prefix}.Wh": Wh, f"{prefix}.b": b}


def init_dense(rng, d_in, d_out, prefix):
    lim = math.sqrt(6.0 / (d_in + d_out))
    return {f"{prefix}.W": rng.uniform(-lim, lim, size=(d_out, d_in)),
            f"{prefix}.b": np.zeros(d_out)}


class Adam:
    """Bias-corrected Adam over a dict of numpy arrays (updated in place)."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {k!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "lr": self.lr, "m": self.m, "v": self.v}


def adam_step(params: dict, grads: dict, state: Adam):
    state.step(grads)
    return params, state
