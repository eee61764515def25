import json
import subprocess
import sys

import numpy as np
import pytest

from selfhomodyne import cli
from selfhomodyne.estimator import DensityMatrixEstimate
from selfhomodyne.sampler import meta_path_for


def run(*args):
    return cli.main([str(a) for a in args])


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# provenance: ")
    prov = json.loads(lines[0][len("# provenance: "):])
    header = lines[1].split(",")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    return prov, header, rows


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = d / "d.csv"
    assert run("simulate", "--nbar", 1, "--samples", 20000, "--seed", 5, "--out", data) == 0
    est = d / "e.json"
    assert run("reconstruct", "--data", data, "--nmax", 4, "--out", est) == 0
    return d, data, est


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run("simulate", "--nbar", 2, "--eta", 0.9, "--samples", 3000, "--seed", 1,
                   "--phase-model", "self", "--threads", 2, "--out", path) == 0
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads(meta_path_for(a).read_text())
    prov = meta["provenance"]
    assert prov["seed"] == 1 and prov["config"]["threads"] == 2 and prov["code_version"]


def test_reconstruct_records_provenance_and_repeats(small):
    d, data, est = small
    first = est.read_bytes()
    assert run("reconstruct", "--data", data, "--nmax", 4, "--out", est) == 0
    assert est.read_bytes() == first
    e = DensityMatrixEstimate.load(est)
    assert e.provenance["seed"] == 5
    assert list(e.provenance["inputs"].values())[0] == e.provenance["dataset"]["sha256"]


def test_analyze_outputs(small):
    d, data, est = small
    out = d / "s.csv"
    assert run("analyze", "--estimate", est, "--stat", "total", "--out", out) == 0
    prov, header, rows = read_csv(out)
    assert header == ["n", "value", "stderr"] and rows.shape == (5, 3)
    assert str(est) in prov["inputs"]
    out = d / "c.csv"
    assert run("analyze", "--estimate", est, "--stat", "correlation", "--N", 2, "--out", out) == 0
    assert read_csv(out)[2][:, 0].tolist() == [-2, -1, 0, 1, 2]
    assert run("analyze", "--estimate", est, "--stat", "correlation", "--out", d / "x.csv") == 2
    assert run("analyze", "--estimate", est, "--stat", "correlation", "--N", 3, "--out", d / "x.csv") == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dist": "total", "nbar": 1.0, "nmax": 5, "out": str(tmp_path / "a.csv")}))
    assert run("theory", "--config", cfg) == 0
    assert read_csv(tmp_path / "a.csv")[2].shape == (6, 2)
    assert run("theory", "--config", cfg, "--nmax", 3, "--out", tmp_path / "b.csv") == 0
    prov, _, rows = read_csv(tmp_path / "b.csv")
    assert rows.shape == (4, 2) and prov["config"]["nmax"] == 3 and prov["config"]["nbar"] == 1.0

    cfg.write_text(json.dumps({"dist": "total", "colour": "blue", "out": "x"}))
    assert run("theory", "--config", cfg) == 2
    cfg.write_text("[1, 2]")
    assert run("theory", "--config", cfg) == 2
    assert run("theory", "--config", tmp_path / "missing.json") == 2


def test_theory_distributions(tmp_path):
    out = tmp_path / "t.csv"
    assert run("theory", "--tau", 0, "--dist", "total", "--nmax", 3, "--out", out) == 0
    assert read_csv(out)[2][:, 1].tolist() == [1.0, 0.0, 0.0, 0.0]
    assert run("theory", "--nbar", 10, "--dist", "corr", "--N", 10, "--out", out) == 0
    rows = read_csv(out)[2]
    assert rows[10, 1] == pytest.approx(0.6495, abs=5e-5)
    assert run("theory", "--nbar", 10, "--dist", "joint", "--nmax", 4, "--out", out) == 0
    _, header, rows = read_csv(out)
    assert header == ["n", "m", "value"] and rows.shape == (25, 3)
    assert run("theory", "--nbar", 1, "--dist", "corr", "--out", out) == 2
    assert run("theory", "--nbar", 1, "--tau", 0.3, "--dist", "total", "--out", out) == 2
    first = out.read_bytes()
    assert run("theory", "--nbar", 1, "--dist", "diag45", "--out", out) == 0
    again = out.read_bytes()
    assert run("theory", "--nbar", 1, "--dist", "diag45", "--out", out) == 0
    assert out.read_bytes() == again != first


def test_vacuum_estimate_diag(tmp_path):
    data, est, out = tmp_path / "v.csv", tmp_path / "v.json", tmp_path / "p.csv"
    assert run("simulate", "--tau", 0, "--samples", 20000, "--seed", 3, "--out", data) == 0
    assert run("reconstruct", "--data", data, "--nmax", 3, "--out", est) == 0
    assert run("analyze", "--estimate", est, "--stat", "diag", "--out", out) == 0
    rows = read_csv(out)[2]
    assert rows[0, 1] == pytest.approx(1.0, abs=4 * rows[0, 2])


def test_bare_eta_mismatch_and_bound(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert run("simulate", "--nbar", 1, "--eta", 0.8, "--samples", 500, "--seed", 2, "--out", data) == 0
    assert run("reconstruct", "--data", data, "--eta", 0.9, "--nmax", 3, "--out", tmp_path / "e.json") == 2
    low = tmp_path / "low.csv"
    assert run("simulate", "--nbar", 1, "--eta", 0.4, "--samples", 500, "--seed", 2, "--out", low) == 0
    assert run("reconstruct", "--data", low, "--nmax", 3, "--out", tmp_path / "e.json") == 3
    assert "1/2" in capsys.readouterr().err
    # dressed analysis of the same data is allowed
    assert run("reconstruct", "--data", low, "--mode", "dressed-gaussian", "--nmax", 3,
               "--out", tmp_path / "e.json") == 0


def test_bad_inputs(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert run("reconstruct", "--data", empty, "--out", tmp_path / "o.json") == 2
    assert run("reconstruct", "--data", tmp_path / "nope.csv", "--out", tmp_path / "o.json") == 2
    assert run("simulate", "--nbar", 1, "--samples", 0, "--seed", 1, "--out", tmp_path / "z.csv") == 2
    assert run("simulate", "--nbar", 1, "--seed", 1, "--out", tmp_path / "z.csv") == 2
    assert run("simulate", "--nbar", 1, "--samples", 5, "--seed", 1, "--threads", 0, "--out", tmp_path / "z.csv") == 2


def test_tampered_dataset_rejected(tmp_path):
    data = tmp_path / "d.csv"
    assert run("simulate", "--nbar", 1, "--samples", 100, "--seed", 2, "--out", data) == 0
    text = data.read_text()
    data.write_text(text.replace("1", "2", 1))
    assert run("reconstruct", "--data", data, "--nmax", 2, "--out", tmp_path / "e.json") == 2


def test_validate_and_cache_regeneration(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SELFHOMODYNE_CACHE", str(tmp_path))
    assert run("validate") == 0
    for f in tmp_path.glob("kernel-*.npz"):
        f.write_bytes(b"garbage")
    assert list(tmp_path.glob("kernel-*.npz"))
    assert run("validate") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out
    assert run("validate", "--kernel-eta", 0.4) == 3


def test_module_entry_point(tmp_path):
    out = tmp_path / "t.csv"
    proc = subprocess.run([sys.executable, "-m", "selfhomodyne", "theory", "--nbar", "1", "--dist", "marginal",
                           "--nmax", "2", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert read_csv(out)[2].shape == (3, 2)
