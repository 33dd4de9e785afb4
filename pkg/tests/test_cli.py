import json

import numpy as np
import pytest

from pirnn.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, content_hash, main


def run(*argv):
    return main([str(a) for a in argv])


def test_help_and_version(capsys):
    assert run("--help") == EXIT_OK
    assert "usage" in capsys.readouterr().out
    assert run("--version") == EXIT_OK


def test_usage_errors(tmp_path, capsys):
    assert run("bogus") == EXIT_USAGE
    assert run("gm", "synth", "--out", tmp_path, "--no-such-flag") == EXIT_USAGE
    assert run("--threads", "0", "netinfo") == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_missing_files_are_data_errors(tmp_path, capsys):
    assert run("simulate", "--gm", tmp_path / "nope.csv", "--out", tmp_path / "o") == EXIT_DATA
    err = capsys.readouterr().err
    assert "not found" in err and "nope.csv" in err
    assert run("train", "--dataset", tmp_path / "none", "--out", tmp_path / "t") == EXIT_DATA


def test_bad_estimator_option(tmp_path, capsys, monkeypatch):
    gm, ds = tmp_path / "gm", tmp_path / "ds"
    assert run("gm", "synth", "--n", 3, "--duration", 1, "--out", gm) == EXIT_OK
    assert run("dataset", "--gm", gm, "--split", 2, 1, "--out", ds) == EXIT_OK
    code = run("train", "--dataset", ds, "--set", "hiden_size=4", "--out", tmp_path / "t")
    assert code == EXIT_USAGE
    assert "hiden_size" in capsys.readouterr().err


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("PIRNN_THREADS", "x")
    assert run("netinfo") == EXIT_USAGE
    monkeypatch.setenv("PIRNN_THREADS", "1")
    assert run("netinfo", "--out", tmp_path) == EXIT_OK
    rec = json.loads((tmp_path / "run.json").read_text())
    assert rec["subcommand"] == "netinfo" and rec["resolved"]["total_params"] > 0


def test_model_describe(tmp_path, capsys):
    assert run("model", "describe", "--type", "frame", "--out", tmp_path) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info == json.loads((tmp_path / "model.json").read_text())
    cfg = tmp_path / "m.json"
    cfg.write_text('{"type": "boucwen"}')
    assert run("model", "describe", "--model", cfg, "--set", "m=2.0") == EXIT_OK


def test_spectrum_and_scaling(tmp_path):
    gm = tmp_path / "gm"
    assert run("gm", "synth", "--n", 2, "--duration", 8, "--seed", 4, "--out", gm) == EXIT_OK
    assert run("gm", "spectrum", "--gm", gm, "--periods", 0.5, 1.0, "--out", tmp_path / "s") == EXIT_OK
    sp = np.loadtxt(tmp_path / "s" / "spectra.csv", delimiter=",", skiprows=1)
    assert sp.shape == (2, 3) and np.all(sp[:, 1:] > 0)
    assert run("gm", "scale", "--gm", gm, "--out", tmp_path / "sc") == EXIT_OK
    factors = json.loads((tmp_path / "sc" / "factors.json").read_text())
    assert len(factors) == 2 and all(f > 0 for f in factors.values())


def test_full_pipeline_and_rerun(tmp_path, capsys):
    gm, ds = tmp_path / "gm", tmp_path / "ds"
    assert run("gm", "synth", "--n", 6, "--duration", 2, "--seed", 1, "--out", gm) == EXIT_OK
    assert run("dataset", "--gm", gm, "--split", 4, 2, "--seed", 3, "--out", ds) == EXIT_OK
    assert run("simulate", "--gm", gm / "syn_000.csv", "--method", "kr", "--out", tmp_path / "sim") == EXIT_OK
    cfg = tmp_path / "est.json"
    cfg.write_text(json.dumps({"hidden_size": 4, "dense_sizes": [4, 3], "teacher_epochs": 1,
                               "scheduled_epochs": 1, "batch_size": 2}))
    for kind in ("pirnn", "baseline"):
        extra = ["--set", "epochs=2"] if kind == "baseline" else []
        c = ["--config", cfg] if kind == "pirnn" else ["--set", "hidden_size=4",
                                                        "--set", "dense_sizes=[4, 3]"]
        out = tmp_path / kind
        assert run("train", "--dataset", ds, "--model", kind, *c, *extra, "--seed", 5,
                   "--out", out / "train") == EXIT_OK
        ckpt = out / "train" / "model.ckpt"
        assert run("eval", "--ckpt", ckpt, "--dataset", ds, "--out", out / "eval") == EXIT_OK
        report = json.loads((out / "eval" / "report.json").read_text())
        assert report["n_examples"] == 2 and "displacement" in report["aggregate"]
        assert run("predict", "--ckpt", ckpt, "--gm", gm / "syn_001.csv", "--out", out / "pred") == EXIT_OK
        assert (out / "pred" / "prediction.csv").exists()
        assert run("netinfo", "--ckpt", ckpt) == EXIT_OK
    log = (tmp_path / "pirnn" / "train" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,L1,L2,L3,Ltotal,val_R2_disp" and len(log) == 3

    # the same seed reproduces the dataset and its recorded hashes
    assert run("dataset", "--gm", gm, "--split", 4, 2, "--seed", 3, "--out", tmp_path / "ds2") == EXIT_OK
    a = json.loads((ds / "run.json").read_text())
    b = json.loads((tmp_path / "ds2" / "run.json").read_text())
    assert a["outputs"] == b["outputs"] and a["inputs"] == b["inputs"]
    assert content_hash(ds) == content_hash(tmp_path / "ds2")
    assert a["resolved"]["split"] == [4, 2]


def test_eval_structure_mismatch(tmp_path):
    gm = tmp_path / "gm"
    assert run("gm", "synth", "--n", 3, "--duration", 1, "--out", gm) == EXIT_OK
    assert run("dataset", "--gm", gm, "--split", 2, 1, "--out", tmp_path / "a") == EXIT_OK
    assert run("dataset", "--gm", gm, "--split", 2, 1, "--type", "frame", "--out", tmp_path / "b") == EXIT_OK
    assert run("train", "--dataset", tmp_path / "a", "--model", "baseline", "--set", "epochs=0",
               "--out", tmp_path / "t") == EXIT_OK
    code = run("eval", "--ckpt", tmp_path / "t" / "model.ckpt", "--dataset", tmp_path / "b",
               "--out", tmp_path / "e")
    assert code == EXIT_DATA
