"""Command-line entry point: ``pirnn <subcommand> ...``.

Every subcommand writes its artifacts under ``--out`` (a directory) together with
``run.json``: the argument vector, the resolved configuration, and content hashes
of all inputs and outputs.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import (SchemaError, load_dataset, load_record_csv, save_dataset, save_record_csv)

log = logging.getLogger("pirnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- hashing and run records -------------------------------------------------------

def blob_hash(path) -> str:
    """Git-style blob hash of a file (sha1 over ``blob <size>\\0`` + content)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(path) -> str:
    """Blob hash for files; for directories a tree hash over sorted relative paths,
    skipping ``run.json``."""
    p = Path(path)
    if p.is_file():
        return blob_hash(p)
    h = hashlib.sha1()
    for f in sorted(q for q in p.rglob("*") if q.is_file() and q.name != "run.json"):
        h.update(f"{f.relative_to(p).as_posix()} {blob_hash(f)}\n".encode())
    return h.hexdigest()


def write_run(out: Path, args, argv, resolved, inputs, outputs):
    rec = {
        "tool": "pirnn", "version": __version__, "argv": list(argv), "subcommand": args.cmd,
        "resolved": resolved,
        "inputs": {str(p): content_hash(p) for p in inputs},
        "outputs": {str(Path(p).relative_to(out)) if Path(p).is_relative_to(out) else str(p):
                    content_hash(p) for p in outputs},
    }
    with open(out / "run.json", "w") as fh:
        json.dump(rec, fh, indent=1, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None


def _parse_sets(items):
    """``key=value`` overrides; values are parsed as JSON when possible."""
    out = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"--set expects key=value, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _require(path, what):
    if not Path(path).exists():
        raise SchemaError(f"{what} not found: {path}")
    return Path(path)


# --- model -----------------------------------------------------------------------------

def _model_from_args(args):
    from .structural_models import model_from_config
    raw = _read_json(args.model) if getattr(args, "model", None) else {"type": args.type}
    raw.update(_parse_sets(getattr(args, "set", None)))
    kind, params = model_from_config(raw)
    return kind, params, raw


def cmd_model(args, out):
    from .structural_models import describe
    if args.action != "describe":
        raise UsageError(f"unknown model action {args.action!r}")
    kind, params, raw = _model_from_args(args)
    info = describe(kind, params)
    text = json.dumps(info, indent=1, default=_jsonable)
    print(text)
    outputs = []
    if out is not None:
        (out / "model.json").write_text(text + "\n")
        outputs.append(out / "model.json")
    return {"model": raw}, [args.model] if args.model else [], outputs


# --- ground motions -------------------------------------------------------------------

def _motion_files(path):
    p = _require(path, "ground motion")
    files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not files:
        raise SchemaError(f"no ground-motion CSV files in {p}")
    return files


def cmd_gm(args, out):
    from .ground_motion import (SynthesisConfig, TargetSpectrum, design_spectrum, period_grid,
                                response_spectrum, scale_to_target, synthesize_suite)
    from .core import G
    if args.action == "synth":
        cfg = SynthesisConfig(duration=args.duration, dt=args.dt, amplitude=args.pga * G,
                              amplitude_cov=args.pga_cov, seed=args.seed)
        motions = synthesize_suite(args.n, cfg, prefix=args.prefix)
        outputs = []
        for gm in motions:
            p = out / f"{gm.id}.csv"
            save_record_csv(gm, p)
            outputs.append(p)
        return {"synthesis": asdict(cfg), "n": args.n, "prefix": args.prefix}, [], outputs
    if args.action == "spectrum":
        periods = np.asarray(args.periods, dtype=float) if args.periods else period_grid()
        rows, inputs = [], []
        files = _motion_files(args.gm)
        for f in files:
            gm = load_record_csv(f)
            rows.append(response_spectrum(gm, periods, args.zeta).Sa)
            inputs.append(f)
        hdr = "period," + ",".join(f.stem for f in files)
        p = out / "spectra.csv"
        np.savetxt(p, np.column_stack([periods] + rows), delimiter=",", fmt="%.17g",
                   header=hdr, comments="")
        return {"periods": periods.tolist(), "zeta": args.zeta}, inputs, [p]
    if args.action == "scale":
        target = TargetSpectrum.from_json(args.target) if args.target else design_spectrum()
        inputs = [Path(args.target)] if args.target else []
        outputs, factors = [], {}
        for f in _motion_files(args.gm):
            gm = load_record_csv(f)
            scaled, factor = scale_to_target(gm, target, tuple(args.band))
            p = out / f.name
            save_record_csv(scaled, p)
            factors[gm.id] = factor
            inputs.append(f)
            outputs.append(p)
        (out / "factors.json").write_text(json.dumps(factors, indent=1, sort_keys=True))
        target.to_json(out / "target.json")
        outputs += [out / "factors.json", out / "target.json"]
        return {"band": list(args.band), "target": args.target or "design"}, inputs, outputs
    raise UsageError(f"unknown gm action {args.action!r}")


# --- simulation and datasets ----------------------------------------------------------------

def _integrator_cfg(args):
    from .integrators import IntegratorConfig
    kw = {"method": args.method, "dt": args.dt}
    if args.rho_inf is not None:
        kw["rho_inf"] = args.rho_inf
    if args.alpha is not None:
        kw["alpha_hht"] = args.alpha
    return IntegratorConfig(**kw)


def cmd_simulate(args, out):
    from .core import channel_header
    from .integrators import Integrator
    from .structural_models import build_model
    kind, params, raw = _model_from_args(args)
    model = build_model(kind, params)
    cfg = _integrator_cfg(args)
    files = _motion_files(args.gm)
    outputs, stats = [], {}
    for f in files:
        gm = load_record_csv(f)
        c = cfg if cfg.dt == gm.dt else cfg.with_dt(gm.dt)
        integ = Integrator(model, c)
        resp = integ.run(gm)
        names = resp.force_names
        p = out / (f"{f.stem}_response.csv" if len(files) > 1 else "response.csv")
        np.savetxt(p, np.column_stack([gm.time, gm.samples, resp.channels(names)]), delimiter=",",
                   fmt="%.17g", header=",".join(channel_header(model.n_dof, names)), comments="")
        outputs.append(p)
        stats[gm.id] = integ.stats
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True, default=_jsonable))
    resolved = {"model": raw, "integrator": {**asdict(cfg), "method": cfg.method.value}}
    inputs = files + ([Path(args.model)] if args.model else [])
    return resolved, inputs, outputs + [out / "stats.json"]


def cmd_dataset(args, out):
    from .ground_motion import build_dataset
    from .structural_models import build_model
    kind, params, raw = _model_from_args(args)
    model = build_model(kind, params)
    files = _motion_files(args.gm)
    motions = [load_record_csv(f) for f in files]
    dts = {m.dt for m in motions}
    if len(dts) != 1:
        raise SchemaError(f"ground motions have differing dt: {sorted(dts)}")
    cfg = _integrator_cfg(args).with_dt(motions[0].dt)
    split = tuple(float(s) if "." in s else int(s) for s in args.split)
    ds = build_dataset(model, motions, cfg, split=split, seed=args.seed, n_jobs=args.threads)
    save_dataset(ds, out)
    (out / "model.json").write_text(json.dumps(raw, indent=1, sort_keys=True))
    resolved = {"model": raw, "integrator": {**asdict(cfg), "method": cfg.method.value},
                "split": list(split), "seed": args.seed, "n_records": len(ds),
                "n_dropped": len(motions) - len(ds)}
    outputs = sorted(p for p in out.iterdir() if p.name != "run.json")
    inputs = files + ([Path(args.model)] if args.model else [])
    return resolved, inputs, outputs


# --- learning -----------------------------------------------------------------------------

def _estimator_class(kind):
    from .baseline import LSTMBaseline
    from .surrogate import PhysicsInformedRNN
    try:
        return {"pirnn": PhysicsInformedRNN, "baseline": LSTMBaseline}[kind]
    except KeyError:
        raise UsageError(f"unknown model kind {kind!r} (pirnn or baseline)") from None


def _build_estimator(kind, cfg: dict):
    cls = _estimator_class(kind)
    valid = set(cls().get_params())
    unknown = set(cfg) - valid
    if unknown:
        raise UsageError(f"unknown {kind} option(s): {sorted(unknown)}; valid: {sorted(valid)}")
    cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()}
    return cls(**cfg)


def load_estimator(path):
    from .baseline import LSTMBaseline
    from .core import load_checkpoint
    from .surrogate import PhysicsInformedRNN
    _require(path, "checkpoint")
    _, meta = load_checkpoint(path)
    cls = {"pirnn": PhysicsInformedRNN, "baseline": LSTMBaseline}.get(meta.get("kind"))
    if cls is None:
        raise SchemaError(f"{path}: unknown model kind {meta.get('kind')!r}")
    return cls.load(path)


def cmd_train(args, out):
    import csv
    ds = load_dataset(_require(args.dataset, "dataset"))
    cfg = _read_json(args.config) if args.config else {}
    cfg.update(_parse_sets(args.set))
    if args.seed is not None:
        cfg["random_state"] = args.seed
    ag, Y = ds.arrays("train")
    dt = ds.records[0][0].dt
    cfg.setdefault("n_dof", ds.n_dof)
    cfg.setdefault("dt", dt)
    if cfg["n_dof"] != ds.n_dof or abs(cfg["dt"] - dt) > 1e-12:
        raise SchemaError(f"config n_dof/dt ({cfg['n_dof']}, {cfg['dt']}) do not match the dataset "
                          f"({ds.n_dof}, {dt})")
    est = _build_estimator(args.model, cfg)
    if args.model == "pirnn":
        val = ds.arrays("val") if ds.val else (None, None)
        est.fit(ag, Y, *val, force_names=ds.force_names)
        cols = ["epoch", "L1", "L2", "L3", "Ltotal", "val_R2_disp"]
    else:
        est.fit(ag, Y, force_names=ds.force_names)
        cols = ["epoch", "mse"]
    ckpt = out / "model.ckpt"
    est.save(ckpt)
    logp = out / "train_log.csv"
    with open(logp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in est.history_:
            w.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in cols])
    resolved = {"model": args.model, "estimator": est.get_params(), "n_params": est.n_params_}
    inputs = [Path(args.dataset)] + ([Path(args.config)] if args.config else [])
    return resolved, inputs, [ckpt, logp]


def cmd_predict(args, out):
    from .core import channel_header
    est = load_estimator(args.ckpt)
    gm = load_record_csv(_require(args.gm, "ground motion"))
    if abs(gm.dt - est.dt) > 1e-9:
        raise SchemaError(f"record dt {gm.dt} differs from model dt {est.dt}")
    Y = est.predict(gm.samples[None])[0]
    p = out / "prediction.csv"
    np.savetxt(p, np.column_stack([gm.time, gm.samples, Y]), delimiter=",", fmt="%.17g",
               header=",".join(channel_header(est.n_dof, est.force_names_)), comments="")
    return {"ckpt": str(args.ckpt)}, [Path(args.ckpt), Path(args.gm)], [p]


def cmd_eval(args, out):
    from .evaluation import evaluate_model
    est = load_estimator(args.ckpt)
    ds = load_dataset(_require(args.dataset, "dataset"))
    if ds.force_names != est.force_names_ or ds.n_dof != est.n_dof:
        raise SchemaError(f"dataset channels ({ds.n_dof} DOF, {ds.force_names}) do not match the "
                          f"model ({est.n_dof} DOF, {est.force_names_})")
    rep = evaluate_model(est, ds, args.split, out)
    print(json.dumps({k: {kk: v[kk] for kk in ("mean_r2", "std_r2", "mean_mse_all_channels")}
                      for k, v in rep.aggregate.items()}, indent=1))
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "run.json")
    return {"split": args.split}, [Path(args.ckpt), Path(args.dataset)], outputs


def cmd_netinfo(args, out):
    if args.ckpt:
        est = load_estimator(args.ckpt)
        table, n_dof = est.net_.layer_table(), est.n_dof
        inputs = [Path(args.ckpt)]
    else:
        from .baseline import BaselineNet
        from .surrogate import PirnnNet
        if args.model == "pirnn":
            net = PirnnNet(args.n_dof, args.n_force, 0.02, args.hidden, tuple(args.dense))
        else:
            net = BaselineNet(3 * args.n_dof + args.n_force, args.hidden, tuple(args.dense))
        table, n_dof, inputs = net.layer_table(), args.n_dof, []
    lines = [f"{'layer':<20}{'kind':<14}{'in':>6}{'out':>6}{'params':>10}"]
    lines += [f"{n:<20}{k:<14}{i:>6}{o:>6}{p:>10}" for n, k, i, o, p in table]
    total = sum(r[-1] for r in table)
    lines.append(f"{'total':<46}{total:>10}")
    print("\n".join(lines))
    outputs = []
    if out is not None:
        (out / "netinfo.txt").write_text("\n".join(lines) + "\n")
        outputs.append(out / "netinfo.txt")
    return {"layers": [list(r) for r in table], "total_params": total, "n_dof": n_dof}, inputs, outputs


# --- parser ---------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_integrator_flags(p):
    p.add_argument("--method", default="hht", choices=["hht", "newmark", "kr"])
    p.add_argument("--dt", type=float, default=0.02, help="step [s] (taken from the motions when they differ)")
    p.add_argument("--rho-inf", type=float, default=None, help="KR-alpha spectral radius")
    p.add_argument("--alpha", type=float, default=None, help="HHT alpha in [-1/3, 0]")


def _add_model_flags(p):
    p.add_argument("--model", help="structure config JSON ({\"type\": \"boucwen\"|\"frame\", ...})")
    p.add_argument("--type", default="boucwen", choices=["boucwen", "frame"],
                   help="structure when no --model file is given")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")


def build_parser():
    p = _Parser(prog="pirnn", description="Physics-informed recurrent surrogates for seismic response.")
    p.add_argument("--version", action="version", version=f"pirnn {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes / BLAS threads (default $PIRNN_THREADS or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    m = sub.add_parser("model", help="describe a structure")
    m.add_argument("action", choices=["describe"])
    _add_model_flags(m)
    m.add_argument("--out")

    g = sub.add_parser("gm", help="ground motions: synthesize, spectra, scaling")
    g.add_argument("action", choices=["synth", "spectrum", "scale"])
    g.add_argument("--n", type=int, default=40)
    g.add_argument("--duration", type=float, default=30.0)
    g.add_argument("--dt", type=float, default=0.02)
    g.add_argument("--pga", type=float, default=0.4, help="peak ground acceleration [g]")
    g.add_argument("--pga-cov", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--prefix", default="syn")
    g.add_argument("--gm", "--in", dest="gm", help="record CSV or directory of CSVs")
    g.add_argument("--periods", type=float, nargs="+")
    g.add_argument("--zeta", type=float, default=0.05)
    g.add_argument("--target", help="target spectrum JSON (default: design spectrum)")
    g.add_argument("--band", type=float, nargs=2, default=(0.4, 2.0))
    g.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="integrate one record")
    _add_model_flags(s)
    _add_integrator_flags(s)
    s.add_argument("--gm", required=True)
    s.add_argument("--out", required=True)

    d = sub.add_parser("dataset", help="simulate a directory of records into a dataset")
    _add_model_flags(d)
    _add_integrator_flags(d)
    d.add_argument("--gm", required=True, help="directory of record CSVs")
    d.add_argument("--split", nargs=2, default=("0.7", "0.3"), help="train/val counts or fractions")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)

    t = sub.add_parser("train", help="fit a surrogate on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", default="pirnn", choices=["pirnn", "baseline"])
    t.add_argument("--config", help="estimator options JSON")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)

    pr = sub.add_parser("predict", help="closed-loop prediction for one record")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--gm", required=True)
    pr.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="metrics and plot data for a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="val", choices=["train", "val", "all"])
    e.add_argument("--out", required=True)

    n = sub.add_parser("netinfo", help="layer table and parameter counts")
    n.add_argument("--ckpt")
    n.add_argument("--model", default="pirnn", choices=["pirnn", "baseline"])
    n.add_argument("--n-dof", type=int, default=1)
    n.add_argument("--n-force", type=int, default=1)
    n.add_argument("--hidden", type=int, default=32)
    n.add_argument("--dense", type=int, nargs="+", default=[32, 16])
    n.add_argument("--out")
    return p


COMMANDS = {"model": cmd_model, "gm": cmd_gm, "simulate": cmd_simulate, "dataset": cmd_dataset,
            "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "netinfo": cmd_netinfo}


def _threads(args):
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("PIRNN_THREADS"):
        try:
            n = int(os.environ["PIRNN_THREADS"])
        except ValueError:
            raise UsageError("PIRNN_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def main(argv=None) -> int:
    from .integrators import NonConvergence
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.threads = _threads(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out) if getattr(args, "out", None) else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            resolved, inputs, outputs = COMMANDS[args.cmd](args, out)
        if out is not None:
            write_run(out, args, argv, resolved, inputs, outputs)
        return EXIT_OK
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"pirnn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergence, FloatingPointError) as exc:
        print(f"pirnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaError, FileNotFoundError, ValueError, KeyError, OSError) as exc:
        print(f"pirnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
