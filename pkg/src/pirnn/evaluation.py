"""Accuracy metrics, per-example reports and plot-ready exports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import channel_header

CHANNEL_TYPES = ("displacement", "velocity", "acceleration", "force")
SCATTER_STRIDE = 5
HIST_BINS = 20


def r_squared(real, pred) -> float:
    """``1 - SS_res / SS_tot`` with ``SS_tot`` taken about the mean of ``real``."""
    real = np.asarray(real, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if real.shape != pred.shape:
        raise ValueError(f"length mismatch {real.size} vs {pred.size}")
    if real.size < 2:
        raise ValueError("r_squared needs at least two samples")
    ss_tot = float(np.sum((real - real.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("real series is constant; R² is undefined")
    return 1.0 - float(np.sum((real - pred) ** 2)) / ss_tot


def mse(real, pred) -> float:
    real = np.asarray(real, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if real.shape != pred.shape:
        raise ValueError(f"length mismatch {real.size} vs {pred.size}")
    if real.size == 0:
        raise ValueError("mse of empty series")
    return float(np.mean((real - pred) ** 2))


def channel_groups(n_dof: int, force_names) -> dict:
    """Channel indices per response type."""
    n = n_dof
    return {"displacement": list(range(n)), "velocity": list(range(n, 2 * n)),
            "acceleration": list(range(2 * n, 3 * n)),
            "force": list(range(3 * n, 3 * n + len(force_names)))}


def hysteresis_area(deformation, force) -> float:
    """Net area enclosed by the force-deformation path (shoelace integral of f dd)."""
    d = np.asarray(deformation, dtype=float)
    f = np.asarray(force, dtype=float)
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(d)))


@dataclass
class MetricReport:
    """Per-example metrics per channel plus aggregates per response type."""

    ids: list
    columns: list
    groups: dict
    r2: np.ndarray                 # (n_examples, n_channels)
    mse: np.ndarray
    aggregate: dict = field(default_factory=dict)

    @classmethod
    def build(cls, ids, Y, P, n_dof, force_names):
        Y = np.asarray(Y, dtype=float)
        P = np.asarray(P, dtype=float)
        if Y.shape != P.shape:
            raise ValueError(f"prediction shape {P.shape} does not match targets {Y.shape}")
        columns = channel_header(n_dof, force_names)[2:]
        if Y.shape[2] != len(columns):
            raise ValueError(f"expected {len(columns)} channels, got {Y.shape[2]}")
        r2 = np.array([[r_squared(Y[b, :, j], P[b, :, j]) for j in range(Y.shape[2])]
                       for b in range(Y.shape[0])])
        m = np.array([[mse(Y[b, :, j], P[b, :, j]) for j in range(Y.shape[2])]
                      for b in range(Y.shape[0])])
        rep = cls(list(ids), columns, channel_groups(n_dof, force_names), r2, m)
        rep.aggregate = rep._aggregate()
        return rep

    def type_r2(self, kind) -> np.ndarray:
        """Per-example R² of one response type, averaged over its channels."""
        return self.r2[:, self.groups[kind]].mean(axis=1)

    def _aggregate(self):
        out = {}
        for kind, idx in self.groups.items():
            if not idx:
                continue
            r = self.type_r2(kind)
            m_all = self.mse[:, idx].mean(axis=1)
            m_first = self.mse[:, idx[0]]
            out[kind] = {
                "mean_r2": float(np.mean(r)), "std_r2": float(np.std(r)),
                "min_r2": float(np.min(r)),
                "mean_mse_all_channels": float(np.mean(m_all)),
                "mean_mse_first_channel": float(np.mean(m_first)),
                "best_id": self.ids[int(np.argmax(r))], "worst_id": self.ids[int(np.argmin(r))],
                "per_channel": {self.columns[j]: {"mean_r2": float(np.mean(self.r2[:, j])),
                                                   "std_r2": float(np.std(self.r2[:, j])),
                                                   "mean_mse": float(np.mean(self.mse[:, j]))}
                                for j in idx},
            }
        return out

    def to_json(self):
        return {"n_examples": len(self.ids), "columns": self.columns, "aggregate": self.aggregate}


def r2_histogram(values, bins=HIST_BINS):
    """Counts over ``bins`` equal bins spanning ``[min R², 1]``."""
    v = np.asarray(values, dtype=float)
    lo = float(min(v.min(), 1.0))
    if lo == 1.0:
        lo = 1.0 - 1e-12
    counts, edges = np.histogram(v, bins=bins, range=(lo, 1.0))
    return counts, edges


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def export_report(report: MetricReport, Y, P, dt, out_dir, hysteresis_pairs=None):
    """Write per-example metrics, overlays, histograms, scatter and hysteresis data.

    ``hysteresis_pairs`` lists ``(deformation_channel, force_channel)`` index pairs
    (deformation is the channel value itself). Returns the written paths.
    """
    out = Path(out_dir)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for b, ex in enumerate(report.ids):
        for j, col in enumerate(report.columns):
            rows.append([ex, col, report.r2[b, j], report.mse[b, j]])
    _write_csv(out / "per_example.csv", ["id", "channel", "r2", "mse"], rows)
    written.append(out / "per_example.csv")

    T = Y.shape[1]
    t = np.arange(T) * dt
    for b, ex in enumerate(report.ids):
        hdr = ["t"] + [f"{c}_{s}" for c in report.columns for s in ("real", "pred")]
        data = np.column_stack([t] + [a for j in range(len(report.columns))
                                      for a in (Y[b, :, j], P[b, :, j])])
        p = out / "overlays" / f"{ex}.csv"
        np.savetxt(p, data, delimiter=",", header=",".join(hdr), comments="", fmt="%.17g")
        written.append(p)

    rows = []
    for kind, idx in report.groups.items():
        if not idx:
            continue
        counts, edges = r2_histogram(report.type_r2(kind))
        rows += [[kind, edges[k], edges[k + 1], int(counts[k])] for k in range(len(counts))]
    _write_csv(out / "r2_histogram.csv", ["type", "lo", "hi", "count"], rows)
    written.append(out / "r2_histogram.csv")

    rows = []
    for b, ex in enumerate(report.ids):
        for j in report.groups["displacement"]:
            for i in range(0, T, SCATTER_STRIDE):
                rows.append([ex, report.columns[j], i, Y[b, i, j], P[b, i, j]])
    _write_csv(out / "scatter_displacement.csv", ["id", "channel", "step", "real", "pred"], rows)
    written.append(out / "scatter_displacement.csv")

    if hysteresis_pairs:
        rows = []
        for b, ex in enumerate(report.ids):
            for dj, fj in hysteresis_pairs:
                for i in range(T):
                    rows.append([ex, report.columns[fj], i, Y[b, i, dj], Y[b, i, fj],
                                 P[b, i, dj], P[b, i, fj]])
        _write_csv(out / "hysteresis.csv", ["id", "force_channel", "step", "deformation_real",
                                            "force_real", "deformation_pred", "force_pred"], rows)
        written.append(out / "hysteresis.csv")

    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json(), fh, indent=1)
    written.append(out / "report.json")
    return written


def aggregate_from_csv(path, n_dof, force_names):
    """Recompute the per-type mean/std R² from an exported ``per_example.csv``."""
    r2 = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            r2.setdefault(row["id"], {})[row["channel"]] = float(row["r2"])
    ids = list(r2)
    columns = channel_header(n_dof, force_names)[2:]
    R = np.array([[r2[i][c] for c in columns] for i in ids])
    out = {}
    for kind, idx in channel_groups(n_dof, force_names).items():
        if idx:
            v = R[:, idx].mean(axis=1)
            out[kind] = {"mean_r2": float(np.mean(v)), "std_r2": float(np.std(v))}
    return out


def evaluate_predictions(ids, Y, P, dt, n_dof, force_names, out_dir=None, hysteresis_pairs=None):
    rep = MetricReport.build(ids, Y, P, n_dof, force_names)
    if out_dir is not None:
        export_report(rep, Y, P, dt, out_dir, hysteresis_pairs)
    return rep


def default_hysteresis_pairs(n_dof, force_names):
    """Deformation/force channel pairs: every force channel against the first DOF
    (the story carrying the nonlinear elements)."""
    return [(0, 3 * n_dof + k) for k in range(len(force_names))]


def evaluate_model(model, dataset, split="val", out_dir=None) -> MetricReport:
    """Predict ``split`` of ``dataset`` with a fitted estimator and report/export metrics."""
    recs = dataset.subset(split)
    if not recs:
        raise ValueError(f"split {split!r} is empty")
    ag, Y = dataset.arrays(split)
    names = dataset.force_names
    expected = 3 * dataset.n_dof + len(names)
    if Y.shape[2] != expected:
        raise ValueError(f"dataset provides {Y.shape[2]} channels, expected {expected}")
    P = model.predict(ag)
    if P.shape != Y.shape:
        raise ValueError(f"model predicts {P.shape[2]} channels but the dataset has {Y.shape[2]}; "
                         "was it trained on a different structure?")
    ids = [gm.id for gm, _ in recs]
    dt = recs[0][0].dt
    if not math.isclose(dt, model.dt, rel_tol=1e-9):
        raise ValueError(f"dataset dt {dt} differs from model dt {model.dt}")
    return evaluate_predictions(ids, Y, P, dt, dataset.n_dof, names, out_dir,
                                default_hysteresis_pairs(dataset.n_dof, names))
