"""Purely data-driven benchmark: one recurrent network from ground acceleration
straight to every response channel, trained with plain MSE."""
from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import autodiff as ad
from .core import GroundMotionRecord, ResponseHistory, load_checkpoint, save_checkpoint, seed_rng
from .networks import (PlateauDecay, SubnetShape, TrainingDiverged, as_parameters, clip_gradients,
                       init_subnet, rms_scale, subnet_sequence)
from .validation import check_choice, check_motions, check_positive, check_responses

log = logging.getLogger(__name__)

PREFIX = "seq"


class BaselineNet:
    def __init__(self, n_channels, hidden=32, dense=(32, 16), in_scale=1.0, out_scale=None):
        self.shape = SubnetShape(1, int(n_channels), hidden, tuple(dense))
        self.in_scale = float(in_scale)
        self.out_scale = np.ones(n_channels) if out_scale is None else np.asarray(out_scale, dtype=float)

    def init_params(self, rng):
        return init_subnet(rng, self.shape, PREFIX)

    def forward(self, P, ag):
        return subnet_sequence(P, self.shape, PREFIX, ad.Tensor(ag[:, :, None]),
                               1.0 / self.in_scale, self.out_scale)

    def loss(self, out, Y):
        """MSE over every channel, in scaled units."""
        return ad.mse(ad.mul(out, 1.0 / self.out_scale), Y / self.out_scale)

    def predict(self, params, ag):
        out = self.forward(params, np.atleast_2d(ag)).value
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("baseline produced non-finite output")
        return out

    def layer_table(self):
        return self.shape.layer_table("Baseline")

    def n_params(self):
        return self.shape.n_params()

    def config(self):
        return {"n_channels": self.shape.d_out, "hidden": self.shape.hidden,
                "dense": list(self.shape.dense), "in_scale": self.in_scale,
                "out_scale": self.out_scale.tolist()}

    @classmethod
    def from_config(cls, c):
        return cls(c["n_channels"], c["hidden"], tuple(c["dense"]), c["in_scale"], c["out_scale"])


def train_baseline(net, params, ag, Y, epochs, opt, rng, batch_size=5, clip_norm=None,
                   plateau=None, trace=None, verbose=False):
    """Shuffled mini-batch Adam on the sequence MSE; returns the per-epoch trace."""
    trace = [] if trace is None else trace
    n = ag.shape[0]
    for _ in range(int(epochs)):
        epoch = len(trace)
        good = {k: v.copy() for k, v in params.items()}
        total, count = 0.0, 0
        perm = rng.permutation(n)
        for k in range(0, n, batch_size):
            idx = perm[k:k + batch_size]
            P = as_parameters(params)
            L = net.loss(net.forward(P, ag[idx]), Y[idx])
            try:
                if not math.isfinite(float(L.value)):
                    raise FloatingPointError(f"non-finite loss {float(L.value)}")
                grads, _ = clip_gradients(ad.gradients(L, P), clip_norm)
                opt.step(grads)
            except FloatingPointError as exc:
                for kk, v in good.items():
                    params[kk][...] = v
                raise TrainingDiverged(epoch, str(exc), good) from None
            total += len(idx) * float(L.value)
            count += len(idx)
        trace.append({"epoch": epoch, "mse": total / count, "lr": opt.lr})
        if plateau is not None:
            plateau.step(total / count)
        if verbose:
            log.info("baseline epoch %d mse=%.4e", epoch, total / count)
    return trace


def predict_baseline(model, record: GroundMotionRecord) -> ResponseHistory:
    if not math.isclose(record.dt, model.dt, rel_tol=1e-9):
        raise ValueError(f"record dt {record.dt} differs from model dt {model.dt}")
    Y = model.predict(record.samples[None])[0]
    return ResponseHistory.from_channels(record.dt, Y, model.n_dof, model.force_names_)


class LSTMBaseline(RegressorMixin, BaseEstimator):
    """Sequence-to-sequence LSTM mapping ``ag (n_seq, T)`` to ``Y (n_seq, T, C)``."""

    def __init__(self, n_dof=1, dt=0.02, hidden_size=32, dense_sizes=(32, 16), epochs=100,
                 batch_size=5, learning_rate=1e-3, lr_decay=0.5, lr_patience=5, scaling="rms",
                 clip_norm=None, random_state=0, verbose=False):
        self.n_dof = n_dof
        self.dt = dt
        self.hidden_size = hidden_size
        self.dense_sizes = dense_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_patience = lr_patience
        self.scaling = scaling
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.verbose = verbose

    def fit(self, X, y, force_names=None):
        check_positive("n_dof", self.n_dof, integer=True)
        check_positive("batch_size", self.batch_size, integer=True)
        check_choice("scaling", self.scaling, {"none", "rms"})
        ag = check_motions(X)
        Y = check_responses(y, ag, self.n_dof)
        n_force = Y.shape[2] - 3 * self.n_dof
        self.force_names_ = list(force_names) if force_names is not None else \
            [f"f{k + 1}" for k in range(n_force)]
        if self.scaling == "rms":
            in_s, out_s = float(rms_scale(ag.ravel(), 0)), rms_scale(Y.reshape(-1, Y.shape[2]), 0)
        else:
            in_s, out_s = 1.0, None
        rng = seed_rng(self.random_state)
        self.net_ = BaselineNet(Y.shape[2], self.hidden_size, tuple(self.dense_sizes), in_s, out_s)
        self.params_ = self.net_.init_params(rng)
        self.initial_params_ = {k: v.copy() for k, v in self.params_.items()}
        opt = ad.Adam(self.params_, lr=self.learning_rate)
        self.history_ = train_baseline(self.net_, self.params_, ag, Y, self.epochs, opt, rng,
                                       self.batch_size, self.clip_norm,
                                       PlateauDecay(opt, self.lr_decay, self.lr_patience),
                                       verbose=self.verbose)
        self.n_features_in_ = ag.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "params_"):
            raise RuntimeError("model is not fitted")
        return self.net_.predict(self.params_, check_motions(X))

    def score(self, X, y, sample_weight=None):
        """Mean displacement R² over sequences and DOFs."""
        from .evaluation import r_squared
        ag = check_motions(X)
        Y = check_responses(y, ag, self.n_dof)
        P = self.predict(ag)
        return float(np.mean([r_squared(Y[b, :, j], P[b, :, j]) for b in range(len(ag))
                              for j in range(self.n_dof)]))

    @property
    def n_params_(self):
        return self.net_.n_params()

    def save(self, path):
        meta = {"kind": "baseline", "estimator": self.get_params(), "net": self.net_.config(),
                "force_names": self.force_names_, "history": self.history_,
                "n_features_in": self.n_features_in_}
        meta["estimator"]["dense_sizes"] = list(self.dense_sizes)
        save_checkpoint(path, self.params_, meta)

    @classmethod
    def load(cls, path) -> "LSTMBaseline":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "baseline":
            raise ValueError(f"{path} is not a baseline checkpoint")
        est = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["estimator"].items()})
        est.net_ = BaselineNet.from_config(meta["net"])
        est.params_ = params
        est.force_names_ = meta["force_names"]
        est.history_ = meta["history"]
        est.n_features_in_ = meta["n_features_in"]
        return est
