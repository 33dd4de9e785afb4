import json

import numpy as np
import pytest

from pirnn.core import (G, Dataset, GroundMotionRecord, ResponseHistory, SchemaError, StructuralModel,
                        load_checkpoint, load_dataset, load_record_csv, save_checkpoint, save_dataset,
                        save_record_csv, seed_rng, weight_to_mass)


def _record(n=3, dt=0.02, seed=0, id="r0"):
    return GroundMotionRecord(id, dt, seed_rng(seed).standard_normal(n), {"src": "test"})


def _response(n=3, n_dof=1, names=("restoring",), seed=0):
    rng = seed_rng(seed + 100)
    return ResponseHistory(0.02, rng.standard_normal((n, n_dof)), rng.standard_normal((n, n_dof)),
                           rng.standard_normal((n, n_dof)),
                           {k: rng.standard_normal(n) for k in names})


def test_record_rejects_bad_input():
    with pytest.raises(ValueError):
        GroundMotionRecord("a", 0.0, np.zeros(5))
    with pytest.raises(ValueError):
        GroundMotionRecord("a", 0.02, np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        GroundMotionRecord("a", 0.02, np.zeros(1))


def test_record_is_immutable_and_scales():
    r = _record(5)
    with pytest.raises(ValueError):
        r.samples[0] = 1.0
    s = r.scaled(2.0)
    assert np.array_equal(s.samples, 2 * r.samples)
    assert s.dt == r.dt and s.n == r.n
    assert np.allclose(r.time, np.arange(5) * 0.02)


def test_response_channels_roundtrip():
    resp = _response(7, n_dof=2, names=("brace", "damper"))
    arr = resp.channels()
    assert arr.shape == (7, 8)
    back = ResponseHistory.from_channels(0.02, arr, 2, ["brace", "damper"])
    assert np.array_equal(back.X, resp.X) and np.array_equal(back.elem_forces["damper"],
                                                             resp.elem_forces["damper"])


def test_response_rejects_mismatch():
    with pytest.raises(ValueError):
        ResponseHistory(0.02, np.zeros((4, 1)), np.zeros((3, 1)), np.zeros((4, 1)), {})
    with pytest.raises(ValueError):
        ResponseHistory(0.02, np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((4, 1)),
                        {"f": np.zeros(3)})


def test_structural_model_invariants():
    StructuralModel(M=[[1.0]], C=[[0.1]], K=[[1.0]], gamma=[1.0])
    with pytest.raises(ValueError):
        StructuralModel(M=[[1.0, 0.2], [0.0, 1.0]], C=np.zeros((2, 2)), K=np.eye(2), gamma=[1, 1])
    with pytest.raises(ValueError):
        StructuralModel(M=[[-1.0]], C=[[0.0]], K=[[1.0]], gamma=[1.0])
    with pytest.raises(ValueError):
        StructuralModel(M=[[1.0]], C=[[0.0]], K=[[-1.0]], gamma=[1.0])


def test_weight_to_mass():
    assert weight_to_mass(6720e3) == pytest.approx(685015.29, abs=0.01)
    assert weight_to_mass(G) == 1.0


def test_seed_rng_determinism():
    a = seed_rng(0).standard_normal(100)
    b = seed_rng(0).standard_normal(100)
    c = seed_rng(1).standard_normal(100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_empty_dataset_roundtrip(tmp_path):
    save_dataset(Dataset([]), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["records"] == []
    assert len(load_dataset(tmp_path)) == 0


def test_dataset_roundtrip_bit_exact(tmp_path):
    recs = [(_record(3, seed=i, id=f"r{i}"), _response(3, seed=i)) for i in range(3)]
    ds = Dataset(recs, train=[0, 2], val=[1])
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.train == [0, 2] and back.val == [1]
    for (g0, r0), (g1, r1) in zip(ds.records, back.records):
        assert g0.id == g1.id and g0.dt == g1.dt
        assert np.array_equal(g0.samples, g1.samples)
        assert np.array_equal(r0.channels(), r1.channels())
    header = (tmp_path / "rec_0000.csv").read_text().splitlines()[0]
    assert header == "t,ag,x1,v1,a1,f_restoring"


def test_dataset_1501_points(tmp_path):
    n = 1501
    ds = Dataset([(_record(n), _response(n))], train=[0])
    save_dataset(ds, tmp_path)
    assert load_dataset(tmp_path).records[0][0].n == 1501


def test_dataset_rejects_overlap_and_schema(tmp_path):
    recs = [(_record(3), _response(3))]
    with pytest.raises(ValueError):
        Dataset(recs, train=[0], val=[0])
    save_dataset(Dataset(recs, train=[0]), tmp_path)
    f = tmp_path / "rec_0000.csv"
    f.write_text(f.read_text().replace("f_restoring", "f_other"))
    with pytest.raises(SchemaError):
        load_dataset(tmp_path)
    with pytest.raises(SchemaError):
        load_dataset(tmp_path / "missing")


def test_dataset_arrays_layout():
    recs = [(_record(4, seed=i, id=f"r{i}"), _response(4, seed=i)) for i in range(3)]
    ds = Dataset(recs, train=[0, 1], val=[2])
    ag, Y = ds.arrays("train")
    assert ag.shape == (2, 4) and Y.shape == (2, 4, 4)
    assert np.array_equal(Y[1, :, 0], recs[1][1].X[:, 0])
    with pytest.raises(ValueError):
        Dataset(recs, train=[0]).arrays("val")


def test_record_csv_roundtrip(tmp_path):
    r = _record(11, dt=0.005)
    save_record_csv(r, tmp_path / "a.csv")
    back = load_record_csv(tmp_path / "a.csv")
    assert back.dt == 0.005 and np.array_equal(back.samples, r.samples)
    (tmp_path / "b.csv").write_text("time,acc\n0,1\n1,2\n")
    with pytest.raises(SchemaError):
        load_record_csv(tmp_path / "b.csv")


def test_checkpoint_roundtrip(tmp_path):
    rng = seed_rng(3)
    params = {"a.W": rng.standard_normal((4, 3)), "a.b": rng.standard_normal(4), "s": np.array(2.5)}
    save_checkpoint(tmp_path / "m.ckpt", params, {"kind": "x", "n": 1})
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"kind": "x", "n": 1}
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k]) and back[k].shape == np.shape(params[k])
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"PIRN"
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SchemaError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "trail.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(SchemaError):
        load_checkpoint(tmp_path / "trail.ckpt")
