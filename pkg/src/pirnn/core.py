"""Shared domain types, dataset/checkpoint serialization and RNG seeding.

All quantities are SI (kg, m, s, N). Time series are stored as ``(n_steps,
n_channels)`` arrays, one column per channel.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

G = 9.81

DATASET_FORMAT = "pirnn-dataset"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"PIRN"
CHECKPOINT_VERSION = 1


class SchemaError(ValueError):
    """Raised when a dataset or checkpoint on disk does not match the expected layout."""


def _frozen(a, name, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def weight_to_mass(weight_n: float) -> float:
    """Convert a floor weight in newtons to mass in kg."""
    return weight_n / G


def seed_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for ``seed``; the stream is platform independent."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class GroundMotionRecord:
    """Uniformly sampled ground acceleration [m/s^2]."""

    id: str
    dt: float
    samples: np.ndarray
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        s = _frozen(self.samples, "samples", ndim=1)
        if s.size < 2:
            raise ValueError("a ground motion needs at least 2 samples")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def scaled(self, factor: float) -> "GroundMotionRecord":
        prov = dict(self.provenance)
        prov["scale_factor"] = prov.get("scale_factor", 1.0) * float(factor)
        return GroundMotionRecord(self.id, self.dt, self.samples * factor, prov)


@dataclass(frozen=True)
class ResponseHistory:
    """Per-DOF displacement/velocity/acceleration histories plus named force channels."""

    dt: float
    X: np.ndarray
    V: np.ndarray
    A: np.ndarray
    elem_forces: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        arrs = {}
        for name in ("X", "V", "A"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim == 1:
                a = a[:, None]
            arrs[name] = _frozen(a, name, ndim=2)
        shape = arrs["X"].shape
        if arrs["V"].shape != shape or arrs["A"].shape != shape:
            raise ValueError("X, V and A must share shape")
        forces = {}
        for k, v in self.elem_forces.items():
            f = _frozen(v, f"force {k!r}", ndim=1)
            if f.size != shape[0]:
                raise ValueError(f"force channel {k!r} has length {f.size}, expected {shape[0]}")
            forces[str(k)] = f
        object.__setattr__(self, "dt", float(self.dt))
        for k, v in arrs.items():
            object.__setattr__(self, k, v)
        object.__setattr__(self, "elem_forces", forces)

    @property
    def n_steps(self) -> int:
        return self.X.shape[0]

    @property
    def n_dof(self) -> int:
        return self.X.shape[1]

    @property
    def force_names(self) -> list[str]:
        return list(self.elem_forces)

    def channels(self, force_names: Sequence[str] | None = None) -> np.ndarray:
        """Stack into ``(n_steps, 3 n_dof + n_forces)`` as x..., v..., a..., f..."""
        names = self.force_names if force_names is None else list(force_names)
        cols = [self.X, self.V, self.A]
        if names:
            cols.append(np.column_stack([self.elem_forces[k] for k in names]))
        return np.hstack(cols)

    @classmethod
    def from_channels(cls, dt, arr, n_dof, force_names=()):
        arr = np.asarray(arr, dtype=np.float64)
        n = n_dof
        forces = {k: arr[:, 3 * n + j] for j, k in enumerate(force_names)}
        return cls(dt, arr[:, :n], arr[:, n:2 * n], arr[:, 2 * n:3 * n], forces)


@dataclass(frozen=True)
class StructuralModel:
    """Linear matrices plus the stateful nonlinear elements of a structure.

    ``K`` holds only the linear stiffness; element contributions are added by
    :func:`pirnn.structural_models.restoring_force`.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    gamma: np.ndarray
    elements: tuple = ()
    name: str = "model"

    def __post_init__(self):
        M = _frozen(np.atleast_2d(self.M), "M", ndim=2)
        C = _frozen(np.atleast_2d(self.C), "C", ndim=2)
        K = _frozen(np.atleast_2d(self.K), "K", ndim=2)
        g = _frozen(np.atleast_1d(self.gamma), "gamma", ndim=1)
        n = M.shape[0]
        for name, a in (("M", M), ("C", C), ("K", K)):
            if a.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {a.shape}")
            if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max())):
                raise ValueError(f"{name} must be symmetric")
        if g.shape != (n,):
            raise ValueError(f"gamma must have length {n}")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise ValueError("M must be positive definite") from None
        if np.linalg.eigvalsh(K).min() < -1e-9 * max(1.0, np.abs(K).max()):
            raise ValueError("K must be positive semidefinite")
        for e in self.elements:
            if max(e.dofs) >= n:
                raise ValueError(f"element {e!r} references DOF outside 0..{n - 1}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "elements", tuple(self.elements))

    @property
    def n_dof(self) -> int:
        return self.M.shape[0]

    @property
    def force_names(self) -> list[str]:
        return [e.name for e in self.elements if e.name]


@dataclass
class Dataset:
    """Ground motions paired with simulated responses and a train/validation split."""

    records: list
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.records)
        tr, va = set(self.train), set(self.val)
        if tr & va:
            raise ValueError("train and validation splits overlap")
        if any(i < 0 or i >= n for i in tr | va):
            raise ValueError("split index out of range")
        for gm, resp in self.records:
            if gm.n != resp.n_steps or not np.isclose(gm.dt, resp.dt, rtol=0, atol=1e-15):
                raise ValueError(f"record {gm.id!r}: response does not match motion length/dt")
        if n:
            n_dof = self.records[0][1].n_dof
            names = self.records[0][1].force_names
            for _, r in self.records:
                if r.n_dof != n_dof or r.force_names != names:
                    raise ValueError("all responses must share DOF count and force channels")

    def __len__(self):
        return len(self.records)

    @property
    def n_dof(self) -> int:
        return self.records[0][1].n_dof if self.records else 0

    @property
    def force_names(self) -> list[str]:
        return self.records[0][1].force_names if self.records else []

    def subset(self, split: str) -> list:
        idx = {"train": self.train, "val": self.val, "all": range(len(self.records))}[split]
        return [self.records[i] for i in idx]

    def arrays(self, split: str = "train"):
        """``(ag, Y)`` arrays of shape ``(n_seq, T)`` and ``(n_seq, T, n_channels)``.

        All records in the split must share their length.
        """
        recs = self.subset(split)
        if not recs:
            raise ValueError(f"split {split!r} is empty")
        lengths = {gm.n for gm, _ in recs}
        if len(lengths) != 1:
            raise ValueError("records have differing lengths; cannot stack")
        ag = np.stack([gm.samples for gm, _ in recs])
        Y = np.stack([r.channels(self.force_names) for _, r in recs])
        return ag, Y


def channel_header(n_dof: int, force_names: Sequence[str]) -> list[str]:
    cols = ["t", "ag"]
    for p in ("x", "v", "a"):
        cols += [f"{p}{i + 1}" for i in range(n_dof)]
    return cols + [f"f_{k}" for k in force_names]


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``manifest.json`` plus one CSV per record into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n_dof, names = dataset.n_dof, dataset.force_names
    split_of = {i: "train" for i in dataset.train}
    split_of.update({i: "val" for i in dataset.val})
    entries = []
    for i, (gm, resp) in enumerate(dataset.records):
        fname = f"rec_{i:04d}.csv"
        arr = np.column_stack([gm.time, gm.samples, resp.channels(names)])
        np.savetxt(path / fname, arr, delimiter=",", fmt="%.17g",
                   header=",".join(channel_header(n_dof, names)), comments="")
        entries.append({
            "id": gm.id, "file": fname, "dt": gm.dt, "n": gm.n,
            "split": split_of.get(i), "provenance": dict(gm.provenance),
        })
    manifest = {
        "format": DATASET_FORMAT, "version": DATASET_VERSION,
        "n_dof": n_dof, "force_channels": names,
        "columns": channel_header(n_dof, names), "records": entries,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"{path}: no manifest.json") from None
    if manifest.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{path}: not a dataset manifest")
    if manifest.get("version") != DATASET_VERSION:
        raise SchemaError(f"{path}: unsupported dataset version {manifest.get('version')}")
    n_dof, names = manifest["n_dof"], manifest["force_channels"]
    header = channel_header(n_dof, names)
    records, train, val = [], [], []
    for i, e in enumerate(manifest["records"]):
        with open(path / e["file"]) as fh:
            cols = fh.readline().strip().split(",")
        if cols != header:
            raise SchemaError(f"{e['file']}: header {cols} does not match manifest {header}")
        arr = np.loadtxt(path / e["file"], delimiter=",", skiprows=1, ndmin=2)
        if arr.shape != (e["n"], len(header)):
            raise SchemaError(f"{e['file']}: shape {arr.shape}, expected {(e['n'], len(header))}")
        gm = GroundMotionRecord(e["id"], e["dt"], arr[:, 1], e.get("provenance", {}))
        resp = ResponseHistory.from_channels(e["dt"], arr[:, 2:], n_dof, names)
        records.append((gm, resp))
        if e.get("split") == "train":
            train.append(i)
        elif e.get("split") == "val":
            val.append(i)
    return Dataset(records, train, val)


def save_record_csv(record: GroundMotionRecord, path) -> None:
    np.savetxt(path, np.column_stack([record.time, record.samples]), delimiter=",",
               fmt="%.17g", header="t,ag", comments="")


def load_record_csv(path, id: str | None = None) -> GroundMotionRecord:
    """Read a ``t,ag`` CSV (extra columns ignored); dt is taken from the time column."""
    path = Path(path)
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    if cols[:2] != ["t", "ag"]:
        raise SchemaError(f"{path}: expected header starting with t,ag, got {cols[:2]}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = arr[:, 0]
    if t.size < 2:
        raise SchemaError(f"{path}: fewer than 2 samples")
    dt = float(np.round((t[-1] - t[0]) / (t.size - 1), 12))
    return GroundMotionRecord(id or path.stem, dt, arr[:, 1], {"source": path.name})


# checkpoints

def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: Mapping) -> None:
    """Binary checkpoint: magic, version, dimension table, JSON metadata, f64 LE blob."""
    names = list(params)
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<II", CHECKPOINT_VERSION, len(names))
    for k in names:
        a = np.asarray(params[k])
        b = k.encode()
        out += struct.pack("<H", len(b)) + b + struct.pack("<B", a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
    m = json.dumps(meta, sort_keys=True).encode()
    out += struct.pack("<I", len(m)) + m
    for k in names:
        out += np.ascontiguousarray(params[k], dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(out)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(params, meta)`` from a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise SchemaError(f"{path}: bad magic {buf[:4]!r}")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    table = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        table.append((name, shape))
    (ml,) = struct.unpack_from("<I", buf, off)
    off += 4
    meta = json.loads(buf[off:off + ml].decode())
    off += ml
    params = {}
    for name, shape in table:
        count = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    if off != len(buf):
        raise SchemaError(f"{path}: {len(buf) - off} trailing bytes")
    return params, meta
