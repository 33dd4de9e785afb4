"""Direct time integration of ``M A + C V + R(X, V) = -M gamma ag``.

Three schemes share one state layout:

* ``KR_ALPHA`` - explicit model-based scheme; displacement and velocity are
  updated explicitly and only a linear solve for the acceleration is needed.
* ``HHT_ALPHA`` and ``NEWMARK`` - implicit, Newton iteration on the
  acceleration with element tangents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import GroundMotionRecord, ResponseHistory, StructuralModel
from .structural_models import elastic_stiffness, evaluate_elements, initial_state


def _norm(x):
    return math.sqrt(float(x @ x))


class Method(str, Enum):
    KR_ALPHA = "kr"
    HHT_ALPHA = "hht"
    NEWMARK = "newmark"


class NonConvergence(RuntimeError):
    def __init__(self, step, iterations, residual):
        super().__init__(f"Newton did not converge at step {step} after {iterations} "
                         f"iterations (relative residual {residual:.3e})")
        self.step = step
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.HHT_ALPHA
    dt: float = 0.02
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    rho_inf: float = 1.0
    alpha_hht: float = -0.05
    beta: float = 0.25
    gamma: float = 0.5
    sign_convention: str = "relative"   # "positive" drops the minus sign on the ground load
    substeps_on_failure: int = 4

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.newton_tol > 0 or self.newton_max_iter < 1:
            raise ValueError("newton_tol must be > 0 and newton_max_iter >= 1")
        if not 0 <= self.rho_inf <= 1:
            raise ValueError("rho_inf must lie in [0, 1]")
        if not -1 / 3 <= self.alpha_hht <= 0:
            raise ValueError("alpha_hht must lie in [-1/3, 0]")
        if self.sign_convention not in ("relative", "positive"):
            raise ValueError("sign_convention must be 'relative' or 'positive'")

    def with_dt(self, dt):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw["dt"] = dt
        return IntegratorConfig(**kw)


@dataclass(frozen=True)
class KRAlphaParams:
    alpha1: np.ndarray
    alpha2: np.ndarray
    alpha3: np.ndarray
    alpha_f: float
    alpha_m: float
    rho_inf: float
    gamma: float
    beta: float


def kr_alpha_coefficients(M, C, K, rho_inf, dt) -> KRAlphaParams:
    """Integration parameter matrices from the constant (initial) M, C, K."""
    if not 0 <= rho_inf <= 1:
        raise ValueError("rho_inf must lie in [0, 1]")
    M, C, K = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (M, C, K))
    am = (2 * rho_inf - 1) / (rho_inf + 1)
    af = rho_inf / (rho_inf + 1)
    gam = 0.5 - am + af
    beta = 0.25 * (1 - am + af) ** 2
    D = M + gam * dt * C + beta * dt * dt * K
    try:
        a1 = np.linalg.solve(D, M)
        a3 = np.linalg.solve(D, am * M + af * gam * dt * C + af * beta * dt * dt * K)
    except np.linalg.LinAlgError:
        raise ValueError("M + gamma dt C + beta dt^2 K is singular") from None
    return KRAlphaParams(a1, (0.5 + gam) * a1, a3, af, am, rho_inf, gam, beta)


def effective_load(model: StructuralModel, ag: float, sign_convention="relative"):
    s = -1.0 if sign_convention == "relative" else 1.0
    return s * (model.M @ model.gamma) * ag


def initial_acceleration(model: StructuralModel, X0, V0, ag0, hidden=None,
                         sign_convention="relative"):
    """Solve ``M A0 = F0 - C V0 - R(X0, V0)``."""
    hidden = initial_state(model) if hidden is None else hidden
    X0 = np.asarray(X0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    R, _, _, _, _ = evaluate_elements(model, X0, V0, hidden)
    F0 = effective_load(model, ag0, sign_convention)
    return np.linalg.solve(model.M, F0 - model.C @ V0 - R)


@dataclass
class State:
    X: np.ndarray
    V: np.ndarray
    A: np.ndarray
    R: np.ndarray            # restoring force incl. linear damping C V at (X, V)
    hidden: tuple
    forces: dict = field(default_factory=dict)


class Integrator:
    """Stateful driver for one model/config; ``stats`` accumulates Newton counts."""

    def __init__(self, model: StructuralModel, cfg: IntegratorConfig):
        self.model = model
        self.cfg = cfg
        self.stats = {"steps": 0, "newton_iterations": 0, "max_residual": 0.0, "retries": 0}
        self._kr = {}
        self._jinv = {}
        self._K0 = elastic_stiffness(model)

    def _kr_params(self, dt):
        if dt not in self._kr:
            p = kr_alpha_coefficients(self.model.M, self.model.C, self._K0, self.cfg.rho_inf, dt)
            lhs = self.model.M @ (np.eye(self.model.n_dof) - p.alpha3)
            self._kr[dt] = (p, np.linalg.inv(lhs))
        return self._kr[dt]

    def _linear_jacobian_inv(self, dt, alpha, beta, gamma):
        # without nonlinear elements the Newton matrix is constant
        key = (dt, alpha, beta, gamma)
        if key not in self._jinv:
            m = self.model
            J = m.M + (1 + alpha) * (gamma * dt * m.C + beta * dt * dt * m.K)
            self._jinv[key] = np.linalg.inv(J)
        return self._jinv[key]

    def start(self, ag0, X0=None, V0=None) -> State:
        n = self.model.n_dof
        X0 = np.zeros(n) if X0 is None else np.asarray(X0, dtype=float).copy()
        V0 = np.zeros(n) if V0 is None else np.asarray(V0, dtype=float).copy()
        hidden = initial_state(self.model)
        R, _, _, forces, _ = evaluate_elements(self.model, X0, V0, hidden)
        F0 = effective_load(self.model, ag0, self.cfg.sign_convention)
        A0 = np.linalg.solve(self.model.M, F0 - self.model.C @ V0 - R)
        return State(X0, V0, A0, R + self.model.C @ V0, hidden, forces)

    def step(self, s: State, ag0, ag1, index=0, dt=None) -> State:
        dt = self.cfg.dt if dt is None else dt
        if self.cfg.method is Method.KR_ALPHA:
            return self._step_kr(s, ag0, ag1, dt)
        if self.cfg.method is Method.HHT_ALPHA:
            a = self.cfg.alpha_hht
            return self._step_implicit(s, ag0, ag1, dt, a, (1 - a) ** 2 / 4, (1 - 2 * a) / 2, index)
        return self._step_implicit(s, ag0, ag1, dt, 0.0, self.cfg.beta, self.cfg.gamma, index)

    def _step_kr(self, s, ag0, ag1, dt):
        p, lhs_inv = self._kr_params(dt)
        m = self.model
        V1 = s.V + dt * (p.alpha1 @ s.A)
        X1 = s.X + dt * s.V + dt * dt * (p.alpha2 @ s.A)
        R1, _, _, forces, hidden = evaluate_elements(m, X1, V1, s.hidden)
        R1 = R1 + m.C @ V1
        af = p.alpha_f
        F0 = effective_load(m, ag0, self.cfg.sign_convention)
        F1 = effective_load(m, ag1, self.cfg.sign_convention)
        rhs = (1 - af) * (F1 - R1) + af * (F0 - s.R) - m.M @ (p.alpha3 @ s.A)
        A1 = lhs_inv @ rhs
        self.stats["steps"] += 1
        return State(X1, V1, A1, R1, hidden, forces)

    def _step_implicit(self, s, ag0, ag1, dt, alpha, beta, gamma, index):
        m = self.model
        cfg = self.cfg
        F0 = effective_load(m, ag0, cfg.sign_convention)
        F1 = effective_load(m, ag1, cfg.sign_convention)
        Xp = s.X + dt * s.V + dt * dt * (0.5 - beta) * s.A
        Vp = s.V + dt * (1 - gamma) * s.A
        load = (1 + alpha) * F1 - alpha * F0 + alpha * s.R

        def trial(A1):
            X1 = Xp + beta * dt * dt * A1
            V1 = Vp + gamma * dt * A1
            R1, Kt, Ct, forces, hidden = evaluate_elements(m, X1, V1, s.hidden)
            internal = R1 + m.C @ V1
            inertia = m.M @ A1
            r = load - inertia - (1 + alpha) * internal
            ref = max(_norm(load), _norm(inertia), (1 + alpha) * _norm(internal), 1e-300)
            return (X1, V1, Kt, Ct, forces, hidden, internal, r), _norm(r), ref

        A1 = s.A.copy()
        cur, r_abs, ref = trial(A1)
        for it in range(1, cfg.newton_max_iter + 1):
            res_norm = r_abs / ref
            if res_norm <= cfg.newton_tol:
                break
            X1, V1, Kt, Ct, forces, hidden, internal, r = cur
            if m.elements:
                J = m.M + (1 + alpha) * (gamma * dt * (m.C + Ct) + beta * dt * dt * Kt)
                dA = np.linalg.solve(J, r)
            else:
                dA = self._linear_jacobian_inv(dt, alpha, beta, gamma) @ r
            # backtrack when the full step does not reduce the residual; the
            # damper tangent is unbounded near zero velocity
            lam = 1.0
            for _ in range(30):
                nxt, n_abs, n_ref = trial(A1 + lam * dA)
                if n_abs < r_abs:
                    break
                lam *= 0.5
            A1 = A1 + lam * dA
            cur, r_abs, ref = nxt, n_abs, n_ref
        else:
            raise NonConvergence(index, cfg.newton_max_iter, r_abs / ref)
        X1, V1, Kt, Ct, forces, hidden, internal, r = cur
        self.stats["steps"] += 1
        self.stats["newton_iterations"] += it - 1
        self.stats["max_residual"] = max(self.stats["max_residual"], res_norm)
        return State(X1, V1, A1, internal, hidden, forces)

    def advance(self, s: State, ag0, ag1, index) -> State:
        """One step with the substep retry policy."""
        try:
            return self.step(s, ag0, ag1, index)
        except NonConvergence:
            n = self.cfg.substeps_on_failure
            if n <= 1:
                raise
            self.stats["retries"] += 1
            h = self.cfg.dt / n
            for k in range(n):
                a0 = ag0 + (ag1 - ag0) * k / n
                a1 = ag0 + (ag1 - ag0) * (k + 1) / n
                s = self.step(s, a0, a1, index, dt=h)
            return s

    def run(self, record: GroundMotionRecord, X0=None, V0=None) -> ResponseHistory:
        if not math.isclose(record.dt, self.cfg.dt, rel_tol=1e-9):
            raise ValueError(f"record dt {record.dt} differs from integrator dt {self.cfg.dt}")
        ag = record.samples
        n, N = self.model.n_dof, record.n
        X = np.empty((N, n))
        V = np.empty((N, n))
        A = np.empty((N, n))
        s = self.start(ag[0], X0, V0)
        names = list(s.forces)
        F = {k: np.empty(N) for k in names}
        for i in range(N):
            if i:
                s = self.advance(s, ag[i - 1], ag[i], i)
            X[i], V[i], A[i] = s.X, s.V, s.A
            for k in names:
                F[k][i] = s.forces[k]
        return ResponseHistory(record.dt, X, V, A, F)


def step(state: State, ag0, ag1, cfg: IntegratorConfig, model: StructuralModel) -> State:
    return Integrator(model, cfg).step(state, ag0, ag1)


def integrate(model: StructuralModel, record: GroundMotionRecord, cfg: IntegratorConfig,
              X0=None, V0=None) -> ResponseHistory:
    return Integrator(model, cfg).run(record, X0, V0)
