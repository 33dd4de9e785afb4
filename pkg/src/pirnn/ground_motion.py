"""Stochastic ground motions, elastic response spectra, amplitude scaling and
dataset generation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

from .core import G, Dataset, GroundMotionRecord, seed_rng
from .integrators import Integrator, IntegratorConfig, NonConvergence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthesisConfig:
    duration: float = 30.0
    dt: float = 0.02
    f_low: float = 0.2
    f_high: float = 20.0
    filter_order: int = 4
    rise_fraction: float = 0.1       # quadratic ramp ends at rise_fraction * duration
    plateau_fraction: float = 0.4    # strong phase ends at plateau_fraction * duration
    end_level: float = 0.05          # envelope value reached at the end of the record
    amplitude: float = 0.4 * G       # median peak ground acceleration [m/s^2]
    amplitude_cov: float = 0.0       # lognormal scatter of the peak, 0 = exact
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        nyq = 0.5 / self.dt
        if not 0 < self.f_low < self.f_high < nyq:
            raise ValueError(f"need 0 < f_low < f_high < Nyquist ({nyq} Hz)")
        if not 0 < self.rise_fraction <= self.plateau_fraction < 1:
            raise ValueError("need 0 < rise_fraction <= plateau_fraction < 1")
        if not 0 < self.end_level < 1:
            raise ValueError("end_level must lie in (0, 1)")
        if self.amplitude <= 0 or self.amplitude_cov < 0:
            raise ValueError("amplitude must be positive and amplitude_cov non-negative")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1


def envelope(t, cfg: SynthesisConfig) -> np.ndarray:
    t1 = cfg.rise_fraction * cfg.duration
    t2 = cfg.plateau_fraction * cfg.duration
    decay = -math.log(cfg.end_level) / (cfg.duration - t2)
    return np.where(t < t1, (t / t1) ** 2, np.where(t < t2, 1.0, np.exp(-decay * (t - t2))))


def baseline_correct(a, dt):
    """Subtract ``p0 + p1 t`` so the trapezoid-integrated final velocity and
    displacement are both zero."""
    a = np.asarray(a, dtype=float)
    t = np.arange(a.size) * dt

    def final_vd(x):
        v = np.concatenate([[0.0], np.cumsum(0.5 * dt * (x[1:] + x[:-1]))])
        d = np.sum(0.5 * dt * (v[1:] + v[:-1]))
        return np.array([v[-1], d])

    basis = np.column_stack([final_vd(np.ones_like(t)), final_vd(t)])
    p = np.linalg.solve(basis, final_vd(a))
    return a - p[0] - p[1] * t


def synthesize(cfg: SynthesisConfig, id: str | None = None) -> GroundMotionRecord:
    """Filtered, enveloped white noise with baseline correction, scaled to a peak."""
    rng = seed_rng(cfg.seed)
    n = cfg.n_samples
    t = np.arange(n) * cfg.dt
    sos = signal.butter(cfg.filter_order, [cfg.f_low, cfg.f_high], btype="bandpass",
                        fs=1.0 / cfg.dt, output="sos")
    a = signal.sosfiltfilt(sos, rng.standard_normal(n)) * envelope(t, cfg)
    a = baseline_correct(a, cfg.dt)
    peak = cfg.amplitude
    if cfg.amplitude_cov > 0:
        s = math.sqrt(math.log1p(cfg.amplitude_cov ** 2))
        peak *= math.exp(s * rng.standard_normal() - 0.5 * s * s)
    a *= peak / np.abs(a).max()
    prov = {"generator": "filtered_white_noise", **asdict(cfg)}
    return GroundMotionRecord(id or f"syn_{cfg.seed}", cfg.dt, a, prov)


def synthesize_suite(n: int, cfg: SynthesisConfig, prefix="syn"):
    """``n`` independent records; record ``i`` is seeded from (cfg.seed, i)."""
    seeds = np.random.SeedSequence(cfg.seed).generate_state(n, dtype=np.uint64)
    kw = asdict(cfg)
    out = []
    for i, s in enumerate(seeds):
        kw["seed"] = int(s)
        out.append(synthesize(SynthesisConfig(**kw), id=f"{prefix}_{i:03d}"))
    return out


def arias_intensity(record: GroundMotionRecord) -> np.ndarray:
    """Cumulative Arias intensity [m/s]."""
    a2 = record.samples ** 2
    return math.pi / (2 * G) * np.concatenate(
        [[0.0], np.cumsum(0.5 * record.dt * (a2[1:] + a2[:-1]))])


def significant_duration(record: GroundMotionRecord, lo=0.05, hi=0.95):
    """Start and end time of the lo-hi Arias-intensity window."""
    ia = arias_intensity(record)
    ia = ia / ia[-1]
    t = record.time
    return float(np.interp(lo, ia, t)), float(np.interp(hi, ia, t))


# --- spectra -----------------------------------------------------------------

@dataclass(frozen=True)
class TargetSpectrum:
    periods: np.ndarray
    Sa: np.ndarray
    zeta: float = 0.05

    def __post_init__(self):
        p = np.asarray(self.periods, dtype=float)
        s = np.asarray(self.Sa, dtype=float)
        if p.ndim != 1 or p.shape != s.shape:
            raise ValueError("periods and Sa must be 1-D and equally long")
        if np.any(np.diff(p) <= 0) or p[0] <= 0:
            raise ValueError("periods must be positive and strictly increasing")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("Sa must be finite and non-negative")
        object.__setattr__(self, "periods", p)
        object.__setattr__(self, "Sa", s)

    def at(self, periods):
        return np.exp(np.interp(np.log(periods), np.log(self.periods), np.log(self.Sa)))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"periods": self.periods.tolist(), "Sa": self.Sa.tolist(),
                       "zeta": self.zeta}, fh, indent=1)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(np.array(d["periods"]), np.array(d["Sa"]), d.get("zeta", 0.05))


def period_grid(t_min=0.05, t_max=4.0, n=60) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


def design_spectrum(periods=None, sds=1.5 * G, sd1=0.9 * G, zeta=0.05) -> TargetSpectrum:
    """Two-branch design spectrum: ramp to a constant-acceleration plateau, then 1/T."""
    periods = period_grid() if periods is None else np.asarray(periods, dtype=float)
    ts = sd1 / sds
    t0 = 0.2 * ts
    sa = np.where(periods < t0, sds * (0.4 + 0.6 * periods / t0),
                  np.where(periods <= ts, sds, sd1 / periods))
    return TargetSpectrum(periods, sa, zeta)


def _sdof_peaks(ag, dt, periods, zeta):
    """Peak relative displacement of linear SDOFs under piecewise-linear ``ag``
    (exact recurrence of Nigam and Jennings), vectorized over periods."""
    w = 2 * np.pi / np.asarray(periods, dtype=float)
    wd = w * np.sqrt(1 - zeta ** 2)
    e = np.exp(-zeta * w * dt)
    s, c = np.sin(wd * dt), np.cos(wd * dt)
    zr = zeta / np.sqrt(1 - zeta ** 2)
    a11 = e * (zr * s + c)
    a12 = e * s / wd
    a21 = -w / np.sqrt(1 - zeta ** 2) * e * s
    a22 = e * (c - zr * s)
    t1 = (2 * zeta ** 2 - 1) / (w ** 2 * dt)
    t2 = 2 * zeta / (w ** 3 * dt)
    b11 = e * ((t1 + zeta / w) * s / wd + (t2 + 1 / w ** 2) * c) - t2
    b12 = -e * (t1 * s / wd + t2 * c) - 1 / w ** 2 + t2
    b21 = e * ((t1 + zeta / w) * (c - zr * s) - (t2 + 1 / w ** 2) * (wd * s + zeta * w * c)) + 1 / (w ** 2 * dt)
    b22 = -e * (t1 * (c - zr * s) - t2 * (wd * s + zeta * w * c)) - 1 / (w ** 2 * dt)
    x = np.zeros_like(w)
    v = np.zeros_like(w)
    peak = np.zeros_like(w)
    # load p = -ag (unit mass)
    for i in range(len(ag) - 1):
        p0, p1 = -ag[i], -ag[i + 1]
        x, v = a11 * x + a12 * v + b11 * p0 + b12 * p1, a21 * x + a22 * v + b21 * p0 + b22 * p1
        np.maximum(peak, np.abs(x), out=peak)
    return peak


def response_spectrum(record: GroundMotionRecord, periods, zeta=0.05) -> TargetSpectrum:
    """Pseudo-acceleration spectrum ``Sa = w^2 max|x|``."""
    periods = np.asarray(periods, dtype=float)
    if np.any(periods <= 0):
        raise ValueError("periods must be positive")
    if not 0 <= zeta < 1:
        raise ValueError("zeta must lie in [0, 1)")
    sd = _sdof_peaks(record.samples, record.dt, periods, zeta)
    return TargetSpectrum(periods, (2 * np.pi / periods) ** 2 * sd, zeta)


def scale_to_target(record: GroundMotionRecord, target: TargetSpectrum, band=(0.4, 2.0)):
    """Single factor minimizing the mean squared log-spectral misfit over ``band``."""
    lo, hi = band
    if not target.periods[0] <= lo < hi <= target.periods[-1]:
        raise ValueError(f"band {band} outside target period grid")
    sel = (target.periods >= lo) & (target.periods <= hi)
    per = target.periods[sel]
    sa = response_spectrum(record, per, target.zeta).Sa
    if np.any(sa <= 0):
        raise ValueError(f"record {record.id!r} has zero spectral ordinates in band {band}")
    factor = float(np.exp(np.mean(np.log(target.Sa[sel]) - np.log(sa))))
    return record.scaled(factor), factor


# --- datasets -----------------------------------------------------------------

def _split_counts(n, split):
    a, b = split
    if isinstance(a, float) or isinstance(b, float):
        if a + b > 1 + 1e-12:
            raise ValueError("split fractions exceed 1")
        a, b = int(round(a * n)), int(round(b * n))
    if a + b > n:
        raise ValueError(f"split {a}/{b} needs {a + b} records, only {n} available")
    return a, b


def _simulate(model, gm, cfg):
    try:
        return Integrator(model, cfg).run(gm)
    except NonConvergence as exc:
        return exc


def build_dataset(model, motions, cfg: IntegratorConfig, split=(0.7, 0.3), seed=0,
                  n_jobs=1) -> Dataset:
    """Simulate every motion and assign a seeded train/validation split.

    Motions whose simulation does not converge are dropped with a warning.
    """
    if n_jobs == 1:
        results = [_simulate(model, gm, cfg) for gm in motions]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(delayed(_simulate)(model, gm, cfg) for gm in motions)
    records = []
    for gm, res in zip(motions, results):
        if isinstance(res, NonConvergence):
            log.warning("record %s excluded: %s", gm.id, res)
            continue
        records.append((gm, res))
    n_train, n_val = _split_counts(len(records), split)
    perm = seed_rng(seed).permutation(len(records))
    train = sorted(int(i) for i in perm[:n_train])
    val = sorted(int(i) for i in perm[n_train:n_train + n_val])
    return Dataset(records, train, val)
