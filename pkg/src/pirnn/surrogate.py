"""Physics-informed recurrent surrogate: a state network and a restoring-force
network trained jointly with a derivative-consistency loss.

At step ``i`` the state network maps ``(x, v, a)`` at ``i-1`` plus the ground
acceleration at ``i`` to ``(x, v)`` at ``i``; the restoring-force network maps
``(x, v)`` at ``i`` plus the ground acceleration to the acceleration and the
element force channels. Training starts with teacher forcing (true previous
states feed the state network) and continues with scheduled sampling, where
each step's input is replaced by the model's own previous prediction with a
probability that grows over the epochs. Inference is a closed-loop rollout.

Arrays follow one layout throughout: ground motions ``ag`` are ``(B, T)`` and
responses ``Y`` are ``(B, T, C)`` with channels ``[x_1..x_n, v_1..v_n,
a_1..a_n, f_1..f_m]``.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import autodiff as ad
from .core import GroundMotionRecord, ResponseHistory, load_checkpoint, save_checkpoint, seed_rng
from .networks import (PlateauDecay, SubnetShape, TrainingDiverged, as_parameters, clip_gradients,
                       init_subnet, rms_scale, subnet_sequence, subnet_step, subnet_step_numpy)
from .validation import check_choice, check_motions, check_positive, check_responses

log = logging.getLogger(__name__)

STATE = "state"
REST = "rest"


def tensor_differentiate(series, dt):
    """Time derivative of ``(B, T, ...)`` series (or a 1-D series) by finite differences.

    Works on tensors (recorded for backpropagation) and on plain arrays.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(series, ad.Tensor):
        return ad.time_derivative(series, dt)
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        return ad.time_derivative(x[None], dt).value[0]
    return ad.time_derivative(x, dt).value


@dataclass
class LossBreakdown:
    L1: float
    L2: float
    L3: float
    L_total: float
    weights: tuple = (1.0, 1.0, 1.0)
    tensors: dict = field(default_factory=dict, repr=False)

    def as_dict(self):
        return {"L1": self.L1, "L2": self.L2, "L3": self.L3, "Ltotal": self.L_total}


def combine_losses(L1, L2, L3, weights=(1.0, 1.0, 1.0)) -> LossBreakdown:
    """Weighted sum of the three component losses (tensors or floats)."""
    w1, w2, w3 = weights
    if any(w < 0 for w in weights):
        raise ValueError("loss weights must be non-negative")
    total = ad.add(ad.add(ad.mul(L1, float(w1)), ad.mul(L2, float(w2))), ad.mul(L3, float(w3)))
    terms = {"L1": ad.as_tensor(L1), "L2": ad.as_tensor(L2), "L3": ad.as_tensor(L3), "Ltotal": total}
    vals = {k: float(t.value) for k, t in terms.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        raise FloatingPointError(f"non-finite loss {vals}")
    return LossBreakdown(vals["L1"], vals["L2"], vals["L3"], vals["Ltotal"], tuple(weights), terms)


@dataclass(frozen=True)
class ScheduleConfig:
    teacher_epochs: int = 50
    scheduled_epochs: int = 50
    p_start: float = 0.0
    p_end: float = 0.5

    def __post_init__(self):
        if self.teacher_epochs < 0 or self.scheduled_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if not 0 <= self.p_start <= self.p_end <= 1:
            raise ValueError("need 0 <= p_start <= p_end <= 1")

    def probability(self, k: int) -> float:
        """Replacement probability in scheduled epoch ``k`` (0-based), linear ramp."""
        M = self.scheduled_epochs
        if M <= 1:
            return self.p_end
        return self.p_start + (self.p_end - self.p_start) * k / (M - 1)


class PirnnNet:
    """Network definition plus forward passes; parameters are passed in explicitly.

    Parameters
    ----------
    n_dof, n_force : response dimensions.
    dt : sample interval used by the derivative-consistency loss.
    scales : optional dict with per-channel scales ``x, v, a, f`` and scalar
        ``ag``. Network inputs are divided by and outputs multiplied by them, and
        losses are measured in scaled units. All ones means no scaling.
    state_update : ``"direct"`` predicts ``(x, v)``; ``"residual"`` predicts the
        change from the input state.
    restnet_teacher_input : ``"predicted"`` feeds state-network outputs to the
        restoring-force network during teacher forcing, ``"real"`` feeds the true
        states. Scheduled sampling and rollout always use predictions.
    """

    def __init__(self, n_dof, n_force, dt, hidden=32, dense=(32, 16), scales=None,
                 state_update="direct", restnet_teacher_input="predicted", force_loss=True,
                 weights=(1.0, 1.0, 1.0), sign_convention="relative", influence=None):
        self.n = int(n_dof)
        self.nf = int(n_force)
        self.dt = float(check_positive("dt", dt))
        self.state_update = check_choice("state_update", state_update, {"direct", "residual"})
        self.restnet_teacher_input = check_choice("restnet_teacher_input", restnet_teacher_input,
                                                  {"predicted", "real"})
        self.sign_convention = check_choice("sign_convention", sign_convention, {"relative", "positive"})
        self.force_loss = bool(force_loss)
        self.weights = tuple(float(w) for w in weights)
        n, nf = self.n, self.nf
        self.gamma = np.ones(n) if influence is None else np.asarray(influence, dtype=float)
        self.state_shape = SubnetShape(3 * n + 1, 2 * n, hidden, tuple(dense))
        self.rest_shape = SubnetShape(2 * n + 1, n + nf, hidden, tuple(dense))
        s = {"x": np.ones(n), "v": np.ones(n), "a": np.ones(n), "f": np.ones(nf), "ag": 1.0}
        for k, v in (scales or {}).items():
            s[k] = np.asarray(v, dtype=float) if k != "ag" else float(v)
        self.scales = s
        self._state_in = 1.0 / np.concatenate([s["x"], s["v"], s["a"], [s["ag"]]])
        self._state_out = np.concatenate([s["x"], s["v"]])
        self._rest_in = 1.0 / np.concatenate([s["x"], s["v"], [s["ag"]]])
        self._rest_out = np.concatenate([s["a"], s["f"]])
        self.last_sources = {}

    # --- parameters -------------------------------------------------------------

    @property
    def n_channels(self):
        return 3 * self.n + self.nf

    def init_params(self, rng) -> dict:
        p = init_subnet(rng, self.state_shape, STATE)
        p.update(init_subnet(rng, self.rest_shape, REST))
        return p

    def theta(self, params, which):
        """Parameter subset: ``1`` for the state network, ``2`` for the restoring-force network."""
        prefix = {1: STATE, 2: REST}[which] + "."
        return {k: v for k, v in params.items() if k.startswith(prefix)}

    def layer_table(self):
        return self.state_shape.layer_table("StateNet") + self.rest_shape.layer_table("RestNet")

    def n_params(self):
        return self.state_shape.n_params() + self.rest_shape.n_params()

    # --- helpers -----------------------------------------------------------------

    def initial_channels(self, ag0):
        """At-rest initial channels: zero state, ``a = -gamma ag`` (or ``+`` for the
        "positive" sign convention), zero element forces."""
        ag0 = np.asarray(ag0, dtype=float)
        sgn = -1.0 if self.sign_convention == "relative" else 1.0
        out = np.zeros(ag0.shape + (self.n_channels,))
        out[..., 2 * self.n:3 * self.n] = sgn * ag0[..., None] * self.gamma
        return out

    def _split(self, Y):
        n = self.n
        return Y[..., :n], Y[..., n:2 * n], Y[..., 2 * n:3 * n], Y[..., 3 * n:]

    # --- forward passes --------------------------------------------------------------

    def forward(self, P: dict, ag, Y, mask=None):
        """Predictions on the tape for a batch.

        ``P`` maps parameter names to tensors; ``mask`` ``(B, T)`` selects steps whose
        state-network input is the model's previous prediction (1) rather than the
        truth (0). Returns a dict with ``X, V, A, F`` of shape ``(B, T, .)`` (index 0
        holds the true initial conditions) and ``steps`` = prediction tensors for
        indices ``1..T-1``.
        """
        if mask is None or not np.any(mask):
            return self._forward_teacher(P, ag, Y)
        return self._forward_steps(P, ag, Y, np.asarray(mask, dtype=float))

    def _assemble(self, Y, xv, af):
        n = self.n
        first = Y[:, :1]
        X = ad.concat([first[..., :n], ad.getitem(xv, (Ellipsis, slice(0, n)))], axis=1)
        V = ad.concat([first[..., n:2 * n], ad.getitem(xv, (Ellipsis, slice(n, 2 * n)))], axis=1)
        return {"X": X, "V": V, "xv": xv, "af": af}

    def _forward_teacher(self, P, ag, Y):
        n = self.n
        prev = Y[:, :-1, :3 * n]
        agn = ag[:, 1:, None]
        sin = np.concatenate([prev, agn], axis=-1)
        xv = subnet_sequence(P, self.state_shape, STATE, ad.Tensor(sin), self._state_in, self._state_out)
        if self.state_update == "residual":
            xv = ad.add(xv, prev[..., :2 * n])
        if self.restnet_teacher_input == "predicted":
            rin = ad.concat([xv, agn], axis=-1)
            rsrc = "predicted"
        else:
            rin = ad.Tensor(np.concatenate([Y[:, 1:, :2 * n], agn], axis=-1))
            rsrc = "real"
        af = subnet_sequence(P, self.rest_shape, REST, rin, self._rest_in, self._rest_out)
        self.last_sources = {"statenet": "real", "restnet": rsrc}
        return self._assemble(Y, xv, af)

    def _forward_steps(self, P, ag, Y, mask):
        n, nf = self.n, self.nf
        B, T = ag.shape
        hs = ad.Tensor(np.zeros((B, self.state_shape.state_size)))
        hr = ad.Tensor(np.zeros((B, self.rest_shape.state_size)))
        prev_pred = ad.Tensor(Y[:, 0, :3 * n])
        xvs, afs = [], []
        used_pred = False
        for i in range(1, T):
            real = Y[:, i - 1, :3 * n]
            m = mask[:, i:i + 1]
            if m.any():
                prev = ad.blend(m, prev_pred, real)
                used_pred = True
            else:
                prev = ad.Tensor(real)

            agi = ag[:, i:i + 1]
            o = subnet_step(P, self.state_shape, STATE, ad.concat([prev, agi]), hs,
                            self._state_in, self._state_out)
            xv = ad.getitem(o, (slice(None), slice(0, 2 * n)))
            hs = ad.getitem(o, (slice(None), slice(2 * n, None)))
            if self.state_update == "residual":
                xv = ad.add(xv, ad.getitem(prev, (slice(None), slice(0, 2 * n))))
            r = subnet_step(P, self.rest_shape, REST, ad.concat([xv, agi]), hr,
                            self._rest_in, self._rest_out)
            af = ad.getitem(r, (slice(None), slice(0, n + nf)))
            hr = ad.getitem(r, (slice(None), slice(n + nf, None)))
            prev_pred = ad.concat([xv, ad.getitem(af, (slice(None), slice(0, n)))])
            xvs.append(xv)
            afs.append(af)
        self.last_sources = {"statenet": "mixed" if used_pred else "real", "restnet": "predicted"}
        return self._assemble(Y, ad.stack(xvs, axis=1), ad.stack(afs, axis=1))

    # --- loss ---------------------------------------------------------------------------

    def loss(self, out: dict, Y) -> LossBreakdown:
        """Composite loss in scaled units.

        ``L1`` = mean squared mismatch between the finite-difference derivative of
        the predicted displacement series and the predicted velocity; ``L2`` = MSE
        of displacement plus MSE of velocity; ``L3`` = MSE of acceleration plus,
        when enabled, MSE of the element forces.
        """
        n, nf = self.n, self.nf
        s = self.scales
        X, V, xv, af = out["X"], out["V"], out["xv"], out["af"]
        if Y.shape[:2] != X.shape[:2] or Y.shape[2] != self.n_channels:
            raise ValueError(f"targets {Y.shape} do not match predictions {X.shape[:2]} x "
                             f"{self.n_channels} channels")
        resid = ad.sub(tensor_differentiate(X, self.dt), V)
        L1 = ad.mse(ad.mul(resid, 1.0 / s["v"]), np.zeros(resid.shape))
        tx = Y[:, 1:, :2 * n]
        inv_xv = 1.0 / np.concatenate([s["x"], s["v"]])
        sxv = ad.mul(xv, inv_xv)
        L2 = ad.add(ad.mse(ad.getitem(sxv, (Ellipsis, slice(0, n))), tx[..., :n] * inv_xv[:n]),
                    ad.mse(ad.getitem(sxv, (Ellipsis, slice(n, 2 * n))), tx[..., n:] * inv_xv[n:]))
        inv_af = 1.0 / np.concatenate([s["a"], s["f"]])
        saf = ad.mul(af, inv_af)
        ta = Y[:, 1:, 2 * n:] * inv_af
        L3 = ad.mse(ad.getitem(saf, (Ellipsis, slice(0, n))), ta[..., :n])
        if self.force_loss and nf:
            L3 = ad.add(L3, ad.mse(ad.getitem(saf, (Ellipsis, slice(n, n + nf))), ta[..., n:]))
        return combine_losses(L1, L2, L3, self.weights)

    # --- inference ----------------------------------------------------------------------

    def rollout(self, params: dict, ag) -> np.ndarray:
        """Closed-loop prediction from rest; only ``ag`` and the initial conditions are read.

        Returns ``(B, T, C)``. Raises ``FloatingPointError`` naming the step where
        a prediction becomes non-finite.
        """
        ag = np.atleast_2d(np.asarray(ag, dtype=float))
        n, nf = self.n, self.nf
        B, T = ag.shape
        out = np.empty((B, T, self.n_channels))
        out[:, 0] = self.initial_channels(ag[:, 0])
        hs = np.zeros((B, self.state_shape.state_size))
        hr = np.zeros((B, self.rest_shape.state_size))
        prev = out[:, 0, :3 * n]
        for i in range(1, T):
            agi = ag[:, i:i + 1]
            xv, hs = subnet_step_numpy(params, self.state_shape, STATE, np.concatenate([prev, agi], axis=1),
                                       hs, self._state_in, self._state_out)
            if self.state_update == "residual":
                xv = xv + prev[:, :2 * n]
            af, hr = subnet_step_numpy(params, self.rest_shape, REST, np.concatenate([xv, agi], axis=1),
                                       hr, self._rest_in, self._rest_out)
            if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(af))):
                raise FloatingPointError(f"rollout produced a non-finite prediction at step {i}")
            out[:, i, :2 * n] = xv
            out[:, i, 2 * n:] = af
            prev = out[:, i, :3 * n]
        return out

    def config(self) -> dict:
        return {"n_dof": self.n, "n_force": self.nf, "dt": self.dt,
                "hidden": self.state_shape.hidden, "dense": list(self.state_shape.dense),
                "scales": {k: np.asarray(v).tolist() for k, v in self.scales.items()},
                "state_update": self.state_update, "restnet_teacher_input": self.restnet_teacher_input,
                "force_loss": self.force_loss, "weights": list(self.weights),
                "sign_convention": self.sign_convention, "influence": self.gamma.tolist()}

    @classmethod
    def from_config(cls, cfg: dict) -> "PirnnNet":
        return cls(cfg["n_dof"], cfg["n_force"], cfg["dt"], cfg["hidden"], tuple(cfg["dense"]),
                   cfg["scales"], cfg["state_update"], cfg["restnet_teacher_input"], cfg["force_loss"],
                   tuple(cfg["weights"]), cfg["sign_convention"], cfg["influence"])


# --- training ----------------------------------------------------------------------------

def _batches(rng, n, batch_size):
    perm = rng.permutation(n)
    return [perm[k:k + batch_size] for k in range(0, n, batch_size)]


def loss_and_grads(net: PirnnNet, params: dict, ag, Y, mask=None):
    P = as_parameters(params)
    out = net.forward(P, ag, Y, mask)
    lb = net.loss(out, Y)
    grads = ad.gradients(lb.tensors["Ltotal"], P)
    return lb, grads


def _run_epochs(net, params, ag, Y, probs, phase, opt, rng, batch_size, clip_norm, plateau,
                val, trace, epoch0, verbose, snapshots=None):
    n = ag.shape[0]
    for k, p in enumerate(probs):
        epoch = epoch0 + k
        good = {kk: v.copy() for kk, v in params.items()}
        sums = np.zeros(4)
        count = 0
        for idx in _batches(rng, n, batch_size):
            u = rng.random(ag[idx].shape)
            mask = (u < p).astype(float) if p > 0 else None
            try:
                lb, grads = loss_and_grads(net, params, ag[idx], Y[idx], mask)
                grads, _ = clip_gradients(grads, clip_norm)
                opt.step(grads)
            except FloatingPointError as exc:
                for kk, v in good.items():
                    params[kk][...] = v
                raise TrainingDiverged(epoch, str(exc), good) from None
            w = len(idx)
            sums += w * np.array([lb.L1, lb.L2, lb.L3, lb.L_total])
            count += w
        L = sums / count
        if snapshots is not None and k >= len(probs) - snapshots[0]:
            snapshots[1].append({kk: v.copy() for kk, v in params.items()})
        row = {"epoch": epoch, "phase": phase, "p": p, "lr": opt.lr,
               "L1": L[0], "L2": L[1], "L3": L[2], "Ltotal": L[3], "val_R2_disp": float("nan")}
        if val is not None:
            row["val_R2_disp"] = _val_r2(net, params, *val)
        trace.append(row)
        if plateau is not None:
            plateau.step(L[3])
        if verbose:
            log.info("epoch %d %s p=%.3f L1=%.3e L2=%.3e L3=%.3e L=%.3e val_R2=%.4f", epoch, phase,
                     p, *L, row["val_R2_disp"])
    return trace


def _val_r2(net, params, ag, Y):
    from .evaluation import r_squared
    try:
        pred = net.rollout(params, ag)
    except FloatingPointError:
        return float("nan")
    n = net.n
    return float(np.mean([r_squared(Y[b, :, j], pred[b, :, j]) for b in range(ag.shape[0])
                          for j in range(n)]))


def train_teacher_forced(net, params, ag, Y, epochs, opt, rng, batch_size=5, clip_norm=None,
                         plateau=None, val=None, trace=None, verbose=False):
    """Teacher-forced epochs; updates ``params`` in place and returns the per-epoch trace."""
    trace = [] if trace is None else trace
    return _run_epochs(net, params, ag, Y, [0.0] * int(epochs), "teacher", opt, rng, batch_size,
                       clip_norm, plateau, val, trace, len(trace), verbose)


def train_scheduled(net, params, ag, Y, schedule: ScheduleConfig, opt, rng, batch_size=5,
                    clip_norm=None, plateau=None, val=None, trace=None, verbose=False,
                    average_last=0):
    """Scheduled-sampling epochs with the probability ramp of ``schedule``.

    With ``average_last = K > 0`` the parameters left in ``params`` are the mean
    of the end-of-epoch weights over the final ``K`` epochs.
    """
    trace = [] if trace is None else trace
    probs = [schedule.probability(k) for k in range(schedule.scheduled_epochs)]
    snaps = (int(average_last), []) if average_last else None
    _run_epochs(net, params, ag, Y, probs, "scheduled", opt, rng, batch_size,
                clip_norm, plateau, val, trace, len(trace), verbose, snaps)
    if snaps and snaps[1]:
        for k in params:
            params[k][...] = np.mean([w[k] for w in snaps[1]], axis=0)
    return trace


def rollout(model, record: GroundMotionRecord) -> ResponseHistory:
    """Closed-loop response of a fitted :class:`PhysicsInformedRNN` to one record."""
    if not math.isclose(record.dt, model.dt, rel_tol=1e-9):
        raise ValueError(f"record dt {record.dt} differs from model dt {model.dt}")
    Y = model.predict(record.samples[None])[0]
    return ResponseHistory.from_channels(record.dt, Y, model.n_dof, model.force_names_)


# --- estimator --------------------------------------------------------------------------------

class PhysicsInformedRNN(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(ag, Y)`` trains both phases, ``predict(ag)`` rolls out.

    ``ag`` is ``(n_seq, T)``; ``Y`` is ``(n_seq, T, 3 n_dof + n_force)`` with
    channels ``x, v, a`` per DOF followed by element forces.
    """

    def __init__(self, n_dof=1, dt=0.02, hidden_size=32, dense_sizes=(32, 16), teacher_epochs=50,
                 scheduled_epochs=50, max_replace_prob=0.5, batch_size=5, learning_rate=1e-3,
                 lr_decay=0.5, lr_patience=5, scaling="rms", state_update="direct",
                 restnet_teacher_input="predicted", force_loss=True, loss_weights=(1.0, 1.0, 1.0),
                 clip_norm=None, sign_convention="relative", average_last=5, track_validation=True,
                 random_state=0, verbose=False):
        self.n_dof = n_dof
        self.dt = dt
        self.hidden_size = hidden_size
        self.dense_sizes = dense_sizes
        self.teacher_epochs = teacher_epochs
        self.scheduled_epochs = scheduled_epochs
        self.max_replace_prob = max_replace_prob
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_patience = lr_patience
        self.scaling = scaling
        self.state_update = state_update
        self.restnet_teacher_input = restnet_teacher_input
        self.force_loss = force_loss
        self.loss_weights = loss_weights
        self.clip_norm = clip_norm
        self.sign_convention = sign_convention
        self.average_last = average_last
        self.track_validation = track_validation
        self.random_state = random_state
        self.verbose = verbose

    def _make_net(self, ag, Y, n_force):
        check_choice("scaling", self.scaling, {"none", "rms"})
        scales = None
        if self.scaling == "rms":
            n = self.n_dof
            s = rms_scale(Y.reshape(-1, Y.shape[-1]), axis=0)
            scales = {"x": s[:n], "v": s[n:2 * n], "a": s[2 * n:3 * n], "f": s[3 * n:],
                      "ag": float(rms_scale(ag.ravel(), axis=0))}
        return PirnnNet(self.n_dof, n_force, self.dt, self.hidden_size, tuple(self.dense_sizes),
                        scales, self.state_update, self.restnet_teacher_input, self.force_loss,
                        tuple(self.loss_weights), self.sign_convention)

    def fit(self, X, y, X_val=None, y_val=None, force_names=None):
        check_positive("n_dof", self.n_dof, integer=True)
        check_positive("batch_size", self.batch_size, integer=True)
        check_positive("learning_rate", self.learning_rate)
        ag = check_motions(X)
        Y = check_responses(y, ag, self.n_dof)
        n_force = Y.shape[2] - 3 * self.n_dof
        self.force_names_ = list(force_names) if force_names is not None else \
            [f"f{k + 1}" for k in range(n_force)]
        if len(self.force_names_) != n_force:
            raise ValueError("force_names does not match the number of force channels")
        val = None
        if X_val is not None and self.track_validation:
            agv = check_motions(X_val)
            val = (agv, check_responses(y_val, agv, self.n_dof))
        rng = seed_rng(self.random_state)
        self.net_ = self._make_net(ag, Y, n_force)
        self.params_ = self.net_.init_params(rng)
        self.initial_params_ = {k: v.copy() for k, v in self.params_.items()}
        opt = ad.Adam(self.params_, lr=self.learning_rate)
        plateau = PlateauDecay(opt, self.lr_decay, self.lr_patience)
        sched = ScheduleConfig(self.teacher_epochs, self.scheduled_epochs, 0.0, self.max_replace_prob)
        self.history_ = []
        common = dict(batch_size=self.batch_size, clip_norm=self.clip_norm, plateau=plateau, val=val,
                      trace=self.history_, verbose=self.verbose)
        train_teacher_forced(self.net_, self.params_, ag, Y, sched.teacher_epochs, opt, rng, **common)
        self.teacher_params_ = {k: v.copy() for k, v in self.params_.items()}
        plateau.reset()
        if self.average_last < 0:
            raise ValueError(f"average_last must be >= 0, got {self.average_last}")
        train_scheduled(self.net_, self.params_, ag, Y, sched, opt, rng, average_last=self.average_last,
                        **common)
        self.n_features_in_ = ag.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("model is not fitted")

    def predict(self, X):
        self._check_fitted()
        return self.net_.rollout(self.params_, check_motions(X))

    def score(self, X, y, sample_weight=None):
        """Mean displacement R² over sequences and DOFs of the closed-loop rollout."""
        from .evaluation import r_squared
        ag = check_motions(X)
        Y = check_responses(y, ag, self.n_dof)
        P = self.predict(ag)
        return float(np.mean([r_squared(Y[b, :, j], P[b, :, j]) for b in range(len(ag))
                              for j in range(self.n_dof)]))

    def loss_breakdown(self, X, y, mask=None) -> LossBreakdown:
        self._check_fitted()
        ag = check_motions(X)
        Y = check_responses(y, ag, self.n_dof)
        return self.net_.loss(self.net_.forward(as_parameters(self.params_), ag, Y, mask), Y)

    def teacher_only(self) -> "PhysicsInformedRNN":
        """Copy of the fitted model with the parameters reached after teacher forcing."""
        self._check_fitted()
        other = copy.deepcopy(self)
        other.params_ = {k: v.copy() for k, v in self.teacher_params_.items()}
        return other

    @property
    def n_params_(self):
        self._check_fitted()
        return self.net_.n_params()

    def layer_table(self):
        return self._make_net(np.zeros((1, 3)), np.zeros((1, 3, 3 * self.n_dof)), 0).layer_table() \
            if not hasattr(self, "net_") else self.net_.layer_table()

    def save(self, path):
        self._check_fitted()
        meta = {"kind": "pirnn", "estimator": self.get_params(), "net": self.net_.config(),
                "force_names": self.force_names_, "history": self.history_,
                "n_features_in": self.n_features_in_}
        meta["estimator"]["dense_sizes"] = list(self.dense_sizes)
        meta["estimator"]["loss_weights"] = list(self.loss_weights)
        params = dict(self.params_)
        params.update({f"teacher/{k}": v for k, v in self.teacher_params_.items()})
        save_checkpoint(path, params, meta)

    @classmethod
    def load(cls, path) -> "PhysicsInformedRNN":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "pirnn":
            raise ValueError(f"{path} is not a physics-informed model checkpoint")
        est = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["estimator"].items()})
        est.net_ = PirnnNet.from_config(meta["net"])
        est.params_ = {k: v for k, v in params.items() if not k.startswith("teacher/")}
        est.teacher_params_ = {k[len("teacher/"):]: v for k, v in params.items() if k.startswith("teacher/")}
        est.force_names_ = meta["force_names"]
        est.history_ = meta["history"]
        est.n_features_in_ = meta["n_features_in"]
        return est
