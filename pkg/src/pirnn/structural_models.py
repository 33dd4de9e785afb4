"""Nonlinear restoring-force laws and the two example structures.

Elements are immutable definitions. Their history lives in a separate state
value that :func:`restoring_force` returns instead of mutating, so a caller
can evaluate any number of trial states and commit only the accepted one.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import linalg

from .core import StructuralModel, weight_to_mass


def _sign(x: float) -> float:
    return float(x > 0) - float(x < 0)


# --- parameter sets -------------------------------------------------------

@dataclass(frozen=True)
class BoucWenParams:
    m: float = 1.0
    c: float = 2 * 0.05 * 2 * math.pi
    k: float = (2 * math.pi) ** 2
    a: float = 0.1
    A: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    n_exp: float = 3.0

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("Bouc-Wen parameters must be finite")
        if self.m <= 0 or self.k <= 0:
            raise ValueError("m and k must be positive")
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if not 0 <= self.a <= 1:
            raise ValueError("post-yield ratio a must lie in [0, 1]")
        if self.beta + self.gamma <= 0:
            raise ValueError("beta + gamma must be positive")
        if self.n_exp < 1:
            raise ValueError("n_exp must be >= 1")

    @classmethod
    def from_period(cls, period=1.0, zeta=0.05, m=1.0, **kw):
        w = 2 * math.pi / period
        return cls(m=m, c=2 * zeta * w * m, k=w * w * m, **kw)

    @property
    def z_bound(self) -> float:
        """Ultimate bound on |z| for the adopted Bouc-Wen form."""
        return (self.A / (self.beta + self.gamma)) ** (1.0 / self.n_exp)


@dataclass(frozen=True)
class BilinearParams:
    k_elastic: float
    yield_force: float
    hardening_ratio: float = 0.028

    def __post_init__(self):
        if not (self.k_elastic > 0 and self.yield_force > 0):
            raise ValueError("k_elastic and yield_force must be positive")
        if not 0 <= self.hardening_ratio < 1:
            raise ValueError("hardening_ratio must lie in [0, 1)")

    @property
    def yield_deformation(self) -> float:
        return self.yield_force / self.k_elastic


@dataclass(frozen=True)
class DamperParams:
    c_d: float
    alpha: float = 0.2
    v_reg: float = 1e-6       # [m/s] the law is linear below this speed

    def __post_init__(self):
        if not (math.isfinite(self.c_d) and self.c_d >= 0):
            raise ValueError("c_d must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ValueError("velocity exponent must lie in (0, 1]")
        if not self.v_reg > 0:
            raise ValueError("v_reg must be positive")


@dataclass(frozen=True)
class FrameConfig:
    """Two-story shear frame; story 1 carries a yielding brace and a nonlinear damper."""

    floor_weights: tuple = (6720e3, 10080e3)
    target_period: float = 0.8
    story_stiffness: tuple | None = None     # columns [N/m]; None -> tuned to target_period
    column_stiffness_ratio: float = 1.0       # k_col2 / k_col1 when tuning
    brace_stiffness_ratio: float = 1.0        # k_brace / k_col1
    brace_yield_drift: float = 0.01           # [m]
    hardening_ratio: float = 0.028
    damper_c: float = 4.0e5                   # [N (s/m)^alpha]
    damper_alpha: float = 0.2
    zeta: float = 0.02

    def __post_init__(self):
        if len(self.floor_weights) != 2 or min(self.floor_weights) <= 0:
            raise ValueError("two positive floor weights are required")
        if self.story_stiffness is not None and (
                len(self.story_stiffness) != 2 or min(self.story_stiffness) <= 0):
            raise ValueError("two positive story stiffnesses are required")
        if self.target_period <= 0 or self.column_stiffness_ratio <= 0:
            raise ValueError("target_period and column_stiffness_ratio must be positive")
        if self.brace_stiffness_ratio < 0 or self.brace_yield_drift <= 0:
            raise ValueError("brace stiffness ratio must be >= 0 and yield drift > 0")
        if not 0 <= self.zeta < 1:
            raise ValueError("zeta must lie in [0, 1)")
        DamperParams(self.damper_c, self.damper_alpha)

    @property
    def masses(self) -> np.ndarray:
        return np.array([weight_to_mass(w) for w in self.floor_weights])


# --- scalar laws -----------------------------------------------------------

def boucwen_rate(z: float, xdot: float, p: BoucWenParams) -> float:
    """Rate of the hysteretic displacement z."""
    return xdot * (p.A - (p.beta * _sign(xdot * z) + p.gamma) * abs(z) ** p.n_exp)


def _boucwen_advance(z0: float, dx: float, p: BoucWenParams, max_sub: float):
    """Backward-Euler integration of dz/dx over ``dx``; returns (z, dz/d(dx)).

    ``dx`` is covered by whole substeps of length ``max_sub`` followed by one
    shorter remainder, so z is continuous in ``dx`` (a count that grows with
    ``|dx|`` would make it jump and stall the structural Newton loop). Only the
    remainder depends on ``dx``. Backward Euler keeps |z| inside the analytic
    bound for any substep.
    """
    A, b, g, n = p.A, p.beta, p.gamma, p.n_exp
    s = _sign(dx)

    def rate(z):
        return A - (b * _sign(s * z) + g) * abs(z) ** n

    if dx == 0.0:
        # direction unknown: mean of loading and unloading tangents
        return z0, A - g * abs(z0) ** n
    full = math.floor(abs(dx) / max_sub)
    rem = abs(dx) - full * max_sub
    z = z0
    for h in [s * max_sub] * full + ([s * rem] if rem > 0 else []):
        zk = z
        z = zk + h * rate(zk)
        for _ in range(50):
            coef = b * _sign(s * z) + g
            phi = z - zk - h * (A - coef * abs(z) ** n)
            dphi = 1.0 + h * coef * n * abs(z) ** (n - 1) * _sign(z)
            step = phi / dphi
            z -= step
            if abs(step) <= 1e-15 * (1.0 + abs(z)):
                break
    if rem == 0:
        return z, rate(z)
    coef = b * _sign(s * z) + g
    gp = -coef * n * abs(z) ** (n - 1) * _sign(z)
    return z, rate(z) / (1.0 - s * rem * gp)


def bilinear_force(p: BilinearParams, state, deformation: float):
    """Kinematic-hardening bilinear law. ``state`` is the committed (deformation, force).

    Returns ``(force, tangent, new_state)``.
    """
    d0, f0 = state
    k, b = p.k_elastic, p.hardening_ratio
    f_trial = f0 + k * (deformation - d0)
    upper = (1 - b) * p.yield_force + b * k * deformation
    lower = -(1 - b) * p.yield_force + b * k * deformation
    if f_trial > upper:
        f, kt = upper, b * k
    elif f_trial < lower:
        f, kt = lower, b * k
    else:
        f, kt = f_trial, k
    return f, kt, (deformation, f)


def damper_force(v, p: DamperParams):
    """Power-law viscous damper force, odd in ``v``.

    Below ``p.v_reg`` the law continues linearly through zero; the pure power law
    has an infinite slope there, which leaves Newton iterations unable to
    resolve a step that ends near zero velocity.
    """
    v = np.asarray(v, dtype=float)
    a = np.maximum(np.abs(v), p.v_reg)
    return p.c_d * v * a ** (p.alpha - 1)


def _damper_tangent(v: float, p: DamperParams) -> float:
    if abs(v) < p.v_reg:
        return p.c_d * p.v_reg ** (p.alpha - 1)
    return p.alpha * p.c_d * abs(v) ** (p.alpha - 1)


# --- elements ----------------------------------------------------------------

@dataclass(frozen=True)
class BoucWenElement:
    """Complete SDOF restoring force ``a k x + (1 - a) k z`` on one DOF."""

    params: BoucWenParams
    dof: int = 0
    name: str = "restoring"
    substep_fraction: float = 0.005

    @property
    def dofs(self):
        return (self.dof,)

    def initial_state(self):
        return (0.0, 0.0)          # (committed deformation, z)

    def initial_tangent(self):
        p = self.params
        return p.a * p.k + (1 - p.a) * p.k * p.A, 0.0

    def evaluate(self, state, d, v):
        p = self.params
        d0, z0 = state
        z, dzdx = _boucwen_advance(z0, d - d0, p, self.substep_fraction * p.z_bound)
        f = p.a * p.k * d + (1 - p.a) * p.k * z
        kt = p.a * p.k + (1 - p.a) * p.k * dzdx
        return f, kt, 0.0, (d, z)


@dataclass(frozen=True)
class BilinearBrace:
    """Brace between ``dofs[0]`` and ``dofs[1]`` (-1 = ground); axial projection 1."""

    params: BilinearParams
    node_i: int = 0
    node_j: int = -1
    name: str = "brace"

    @property
    def dofs(self):
        return tuple(d for d in (self.node_i, self.node_j) if d >= 0)

    def initial_state(self):
        return (0.0, 0.0)

    def initial_tangent(self):
        return self.params.k_elastic, 0.0

    def evaluate(self, state, d, v):
        f, kt, new = bilinear_force(self.params, state, d)
        return f, kt, 0.0, new


@dataclass(frozen=True)
class ViscousDamper:
    params: DamperParams
    node_i: int = 0
    node_j: int = -1
    name: str = "damper"

    @property
    def dofs(self):
        return tuple(d for d in (self.node_i, self.node_j) if d >= 0)

    def initial_state(self):
        return 0.0               # committed velocity

    def initial_tangent(self):
        return 0.0, 0.0

    def evaluate(self, state, d, v):
        p = self.params
        f = float(damper_force(v, p))
        ct = _damper_tangent(v, p)
        return f, 0.0, ct, v


def _kinematics(e, n):
    L = np.zeros(n)
    L[e.node_i if hasattr(e, "node_i") else e.dof] = 1.0
    if getattr(e, "node_j", -1) >= 0:
        L[e.node_j] = -1.0
    return L


# --- model-level evaluation ---------------------------------------------------

def initial_state(model: StructuralModel):
    return tuple(e.initial_state() for e in model.elements)


def evaluate_elements(model: StructuralModel, X, V, hidden):
    """Restoring force, tangent matrices, element forces and trial state.

    Returns ``(R, K_t, C_t, forces, new_hidden)`` where ``R`` excludes the
    linear damping term ``C V`` and ``C_t`` holds only the element
    velocity tangents.
    """
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    n = model.n_dof
    if X.shape != (n,) or V.shape != (n,):
        raise ValueError(f"state vectors must have shape ({n},)")
    if len(hidden) != len(model.elements):
        raise ValueError("hidden state does not match model elements")
    R = model.K @ X
    Kt = model.K.copy()
    Ct = np.zeros((n, n))
    forces = {}
    new_hidden = []
    for e, h in zip(model.elements, hidden):
        L = _kinematics(e, n)
        f, kt, ct, h1 = e.evaluate(h, float(L @ X), float(L @ V))
        R = R + L * f
        if kt:
            Kt += kt * np.outer(L, L)
        if ct:
            Ct += ct * np.outer(L, L)
        if e.name:
            forces[e.name] = f
        new_hidden.append(h1)
    return R, Kt, Ct, forces, tuple(new_hidden)


def restoring_force(model: StructuralModel, X, V, hidden):
    """``R(X, V)`` and the trial element state; nothing is committed."""
    R, _, _, _, new_hidden = evaluate_elements(model, X, V, hidden)
    return R, new_hidden


def elastic_stiffness(model: StructuralModel) -> np.ndarray:
    """Linear stiffness plus every element's initial tangent."""
    n = model.n_dof
    K = model.K.copy()
    for e in model.elements:
        L = _kinematics(e, n)
        K += e.initial_tangent()[0] * np.outer(L, L)
    return K


def natural_periods(model: StructuralModel) -> np.ndarray:
    w2 = linalg.eigh(elastic_stiffness(model), model.M, eigvals_only=True)
    if np.any(w2 <= 0):
        raise ValueError("elastic stiffness is not positive definite")
    return np.sort(2 * np.pi / np.sqrt(w2))[::-1]


# --- example structures -----------------------------------------------------

def boucwen_sdof(p: BoucWenParams | None = None) -> StructuralModel:
    p = p or BoucWenParams()
    return StructuralModel(M=[[p.m]], C=[[p.c]], K=[[0.0]], gamma=[1.0],
                           elements=(BoucWenElement(p),), name="boucwen_sdof")


def _shear_k(k1, k2):
    return np.array([[k1 + k2, -k2], [-k2, k2]])


def rayleigh_damping(M, K, zeta, modes=(0, 1)):
    w = np.sort(np.sqrt(linalg.eigh(K, M, eigvals_only=True)))
    wi, wj = w[modes[0]], w[modes[1]]
    a0 = 2 * zeta * wi * wj / (wi + wj)
    a1 = 2 * zeta / (wi + wj)
    return a0 * M + a1 * K


def assemble_frame(cfg: FrameConfig | None = None) -> StructuralModel:
    """Two-DOF shear building with brace and damper in story 1."""
    cfg = cfg or FrameConfig()
    M = np.diag(cfg.masses)
    if cfg.story_stiffness is None:
        unit = np.array([1.0, cfg.column_stiffness_ratio])
        Ku = _shear_k(*unit) + cfg.brace_stiffness_ratio * np.diag([1.0, 0.0])
        w1 = np.sqrt(linalg.eigh(Ku, M, eigvals_only=True).min())
        scale = (2 * np.pi / cfg.target_period / w1) ** 2
        kc = unit * scale
    else:
        kc = np.asarray(cfg.story_stiffness, dtype=float)
    Kcol = _shear_k(*kc)
    k_brace = cfg.brace_stiffness_ratio * kc[0]
    elements = []
    if k_brace > 0:
        elements.append(BilinearBrace(BilinearParams(
            k_brace, k_brace * cfg.brace_yield_drift, cfg.hardening_ratio)))
    elements.append(ViscousDamper(DamperParams(cfg.damper_c, cfg.damper_alpha)))
    K_el = Kcol + k_brace * np.diag([1.0, 0.0])
    C = rayleigh_damping(M, K_el, cfg.zeta)
    return StructuralModel(M=M, C=C, K=Kcol, gamma=np.ones(2), elements=tuple(elements),
                           name="frame2")


# --- config files -------------------------------------------------------------

def load_model_config(path):
    """Read a JSON model description: ``{"type": "boucwen"|"frame", ...params}``."""
    with open(path) as fh:
        raw = json.load(fh)
    return model_from_config(raw)


def model_from_config(raw: dict):
    raw = dict(raw)
    kind = raw.pop("type", "boucwen")
    if kind == "boucwen":
        if "period" in raw or "zeta" in raw:
            return kind, BoucWenParams.from_period(**raw)
        return kind, BoucWenParams(**raw)
    if kind == "frame":
        for key in ("floor_weights", "story_stiffness"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        return kind, FrameConfig(**raw)
    raise ValueError(f"unknown model type {kind!r}")


def build_model(kind: str, params) -> StructuralModel:
    return boucwen_sdof(params) if kind == "boucwen" else assemble_frame(params)


def describe(kind: str, params) -> dict:
    """Resolved parameters and derived quantities, for printing."""
    model = build_model(kind, params)
    out = {"type": kind, **asdict(params)}
    out["n_dof"] = model.n_dof
    out["periods_s"] = natural_periods(model).tolist()
    out["mass_kg"] = np.diag(model.M).tolist()
    out["force_channels"] = model.force_names
    if kind == "frame":
        k2 = model.K[1, 1]
        out["story_stiffness_resolved"] = [model.K[0, 0] - k2, k2]
        for e in model.elements:
            if isinstance(e, BilinearBrace):
                out["brace"] = asdict(e.params)
    else:
        out["z_bound"] = params.z_bound
    return out
