"""Stacked-LSTM + MLP subnets shared by the physics-informed model and the baseline.

A subnet is ``n_lstm`` LSTM layers followed by dense layers with ReLU on all but
the last. Parameters live in a flat ``{name: array}`` dict so that checkpoints,
optimizers and gradient checks can treat every model the same way.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class SubnetShape:
    d_in: int
    d_out: int
    hidden: int = 32
    dense: tuple = (32, 16)
    n_lstm: int = 2

    def __post_init__(self):
        object.__setattr__(self, "dense", tuple(int(w) for w in self.dense))
        if min(self.d_in, self.d_out, self.hidden, self.n_lstm) < 1 or any(w < 1 for w in self.dense):
            raise ValueError(f"invalid subnet shape {self}")

    @property
    def state_size(self) -> int:
        return 2 * self.hidden * self.n_lstm

    def names(self, prefix):
        lstm = [tuple(f"{prefix}.lstm{k + 1}.{p}" for p in ("Wx", "Wh", "b")) for k in range(self.n_lstm)]
        n_dense = len(self.dense) + 1
        dense = [(f"{prefix}.dense{k + 1}.W", f"{prefix}.dense{k + 1}.b") for k in range(n_dense)]
        return lstm, dense

    def layer_table(self, prefix):
        """``(name, kind, input, output, n_params)`` per layer."""
        rows = []
        d = self.d_in
        for k in range(self.n_lstm):
            h = self.hidden
            rows.append((f"{prefix}.lstm{k + 1}", "lstm", d, h, 4 * h * (d + h + 1)))
            d = h
        widths = list(self.dense) + [self.d_out]
        for k, w in enumerate(widths):
            kind = "dense_relu" if k < len(widths) - 1 else "dense_linear"
            rows.append((f"{prefix}.dense{k + 1}", kind, d, w, w * (d + 1)))
            d = w
        return rows

    def n_params(self) -> int:
        return sum(r[-1] for r in self.layer_table("x"))


def init_subnet(rng, shape: SubnetShape, prefix) -> dict:
    params = {}
    d = shape.d_in
    for k in range(shape.n_lstm):
        params.update(ad.init_lstm(rng, d, shape.hidden, f"{prefix}.lstm{k + 1}"))
        d = shape.hidden
    for k, w in enumerate(list(shape.dense) + [shape.d_out]):
        params.update(ad.init_dense(rng, d, w, f"{prefix}.dense{k + 1}"))
        d = w
    return params


def _grouped(P, shape, prefix):
    lstm, dense = shape.names(prefix)
    return [tuple(P[n] for n in t) for t in lstm], [tuple(P[n] for n in t) for t in dense]


def subnet_sequence(P: dict, shape: SubnetShape, prefix, X, in_scale=1.0, out_scale=1.0):
    """Whole-sequence forward on the tape: ``X`` is ``(B, T, d_in)``."""
    lstm, dense = _grouped(P, shape, prefix)
    u = ad.mul(X, np.asarray(in_scale, dtype=float))
    for Wx, Wh, b in lstm:
        u = ad.lstm_sequence(u, Wx, Wh, b)
    for k, (W, b) in enumerate(dense):
        u = ad.dense(u, W, b, activate=k < len(dense) - 1)
    return ad.mul(u, np.asarray(out_scale, dtype=float))


def subnet_step(P: dict, shape: SubnetShape, prefix, x, state, in_scale=1.0, out_scale=1.0):
    """One step on the tape; returns a tensor ``[y, new_state]`` along the last axis."""
    lstm, dense = _grouped(P, shape, prefix)
    return ad.recurrent_mlp_step(x, state, lstm, dense, np.asarray(in_scale, dtype=float),
                                 np.asarray(out_scale, dtype=float))


def subnet_step_numpy(params: dict, shape: SubnetShape, prefix, x, state, in_scale=1.0, out_scale=1.0):
    """Tape-free step used for inference; same arithmetic as :func:`subnet_step`."""
    lstm, dense = _grouped(params, shape, prefix)
    y, new_state, _ = ad.rmlp_forward(x, state, lstm, dense, np.asarray(in_scale, dtype=float),
                                      np.asarray(out_scale, dtype=float))
    return y, new_state


def as_parameters(params: dict) -> dict:
    """Trainable tensors sharing memory with ``params``."""
    return {k: ad.parameter(v, name=k) for k, v in params.items()}


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, max_norm):
    if max_norm is None:
        return grads, global_norm(grads)
    n = global_norm(grads)
    if n > max_norm:
        grads = {k: g * (max_norm / n) for k, g in grads.items()}
    return grads, n


class PlateauDecay:
    """Multiply the optimizer learning rate by ``factor`` after ``patience`` epochs
    without a relative improvement of ``threshold`` in the monitored loss."""

    def __init__(self, optimizer, factor=0.5, patience=5, threshold=1e-3, min_lr=1e-6):
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.reset()

    def reset(self):
        self.best = np.inf
        self.wait = 0

    def step(self, loss):
        if loss < self.best * (1 - self.threshold):
            self.best = loss
            self.wait = 0
            return
        self.wait += 1
        if self.wait >= self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.wait = 0


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; ``params`` holds the last good parameters."""

    def __init__(self, epoch, reason, params):
        super().__init__(f"training diverged in epoch {epoch}: {reason}")
        self.epoch = epoch
        self.params = params


def rms_scale(a, axis, floor=1e-12):
    s = np.sqrt(np.mean(np.square(a), axis=axis))
    return np.where(s > floor, s, 1.0)
