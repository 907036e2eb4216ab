import json
import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from poissonlab import io
from poissonlab.assembly import LinearSystem
from poissonlab.cli import main


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def _pipeline(regime="dirichlet"):
    assert run("geometry", "--family", "CornerRemovedSquare", "--category", 3, "--seed", 4,
               "--resolution", 24, "--out", "g.json") == 0
    assert run("mesh", "build", "--geometry", "g.json", "--out", "m.json") == 0
    assert run("sample-forcing", "--mesh", "m.json", "--dist", "trig", "--seed", 2,
               "--out", "f.csv") == 0
    assert run("assemble", "--mesh", "m.json", "--regime", regime, "--forcing", "f.csv",
               "--out", "sys") == 0


def test_unknown_subcommand_is_usage_error(capsys):
    assert run("frobnicate") == 2
    assert "usage" in capsys.readouterr().err


def test_missing_flag_is_usage_error(workdir):
    assert run("solve") == 2


def test_entry_point_script(workdir):
    out = subprocess.run([sys.executable, "-m", "poissonlab.cli", "bogus"], capture_output=True)
    assert out.returncode == 2


def test_pipeline_and_manifests(workdir, capsys):
    _pipeline()
    assert run("solve", "--system", "sys", "--u0", "zeros", "--out", "u.csv",
               "--trace", "trace.csv") == 0
    u = io.read_vector("u.csv")
    system = LinearSystem.load("sys")
    assert np.linalg.norm(system.residual(u)) <= 1e-8
    with open("trace.csv") as fh:
        assert fh.readline().strip() == "iter,residual_norm"
    assert run("fk", "--system", "sys", "--u", "u.csv", "--k", 3, "--residual", "--out", "s.csv") == 0
    assert np.abs(io.read_vector("s.csv")).max() <= 1e-6
    for name in ("g.json", "m.json", "f.csv", "u.csv", "s.csv"):
        man = io.read_json(name + ".manifest.json")
        assert man["tool_version"] and man["command"] and "wall_clock_ms" in man
    assert os.path.exists("sys/run.manifest.json")
    assert "m.json" == io.read_json("sys/run.manifest.json")["config"]["mesh"]


def test_seventeen_digit_output(workdir):
    _pipeline()
    with open("f.csv") as fh:
        line = fh.readline().strip()
    v = float(line)
    assert float("%.17g" % v) == v and line == "%.17g" % v


def test_trace_with_energy_error(workdir):
    _pipeline()
    run("solve", "--system", "sys", "--tol", 1e-13, "--relative", "--out", "ref.csv")
    assert run("solve", "--system", "sys", "--out", "u.csv", "--trace", "t.csv",
               "--reference", "ref.csv") == 0
    with open("t.csv") as fh:
        header = fh.readline().strip().split(",")
        rows = [list(map(float, l.split(","))) for l in fh]
    assert header == ["iter", "residual_norm", "energy_error"]
    assert rows[-1][2] < rows[0][2]


def test_solve_non_spd_exits_one(workdir, capsys):
    bad = LinearSystem(sp.csr_matrix(np.array([[1.0, 3.0], [3.0, 1.0]])), np.array([1.0, -1.0]))
    bad.save("bad")
    assert run("solve", "--system", "bad", "--out", "u.csv") == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "NotSPDDetected"


def test_domain_error_exit_one(workdir, capsys):
    assert run("geometry", "--family", "PerforatedPlate", "--params",
               '{"width": 3.0, "height": 1.0, "center": [0.1, 3.0]}', "--out", "g.json") == 1
    assert "InvalidGeometry" in capsys.readouterr().err


def test_mesh_roundtrip_reproduces_assembly(workdir):
    _pipeline("random")
    first = LinearSystem.load("sys")
    assert run("assemble", "--mesh", "m.json", "--regime", "random", "--forcing", "f.csv",
               "--out", "sys2") == 0
    second = LinearSystem.load("sys2")
    assert np.array_equal(first.matrix.data, second.matrix.data)
    assert np.array_equal(first.matrix.indices, second.matrix.indices)


def test_rerun_byte_identical(workdir):
    _pipeline()
    run("solve", "--system", "sys", "--out", "a.csv")
    run("solve", "--system", "sys", "--out", "b.csv")
    with open("a.csv", "rb") as fa, open("b.csv", "rb") as fb:
        assert fa.read() == fb.read()
    run("sample-forcing", "--mesh", "m.json", "--dist", "hotspot", "--seed", 5, "--out", "h1.csv")
    run("sample-forcing", "--mesh", "m.json", "--dist", "hotspot", "--seed", 5, "--out", "h2.csv")
    with open("h1.csv", "rb") as fa, open("h2.csv", "rb") as fb:
        assert fa.read() == fb.read()


def test_verify_quick(workdir, capsys):
    assert run("verify", "--battery", "quick", "--threads", 2, "--out", "reports.json") == 0
    data = io.read_json("reports.json")
    assert data["summary"]["passed"]
    assert all(r["passed"] for r in data["reports"]) and len(data["reports"]) == 9


def test_train_and_report(workdir):
    _pipeline()
    os.makedirs("inst/a")
    for src, dst in (("m.json", "mesh.json"), ("f.csv", "forcing.csv")):
        os.replace(src, os.path.join("inst/a", dst))
    io.write_json("inst/a/bc.json", {"regime": "dirichlet"})
    assert run("train", "--instances", "inst", "--mode", "iter", "--k", 5, "--stop-grad", "true",
               "--steps", 5, "--out", "run_iter.json") == 0
    assert run("train", "--instances", "inst", "--mode", "residual", "--steps", 5,
               "--out", "run_res.json") == 0
    run_json = io.read_json("run_iter.json")
    assert len(run_json["loss"]) == 5 and run_json["cost_breakdown"]["loss_ratio"] > 0
    assert run("report", "run_iter.json", "run_res.json", "--out", "summary.json") == 0
    with open("summary.supervision.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "mode,K,stop_gradient,rel_l2_error" and len(lines) == 3
    assert os.path.exists("summary.cost.csv") and os.path.exists("summary.k_sweep.csv")
    assert run("train", "--instances", "inst", "--stop-grad", "maybe", "--out", "x.json") == 2


def test_control_single(workdir):
    assert run("geometry", "--family", "PerforatedPlate", "--seed", 3, "--resolution", 32,
               "--out", "plate.json") == 0
    assert run("control", "--geometry", "plate.json", "--forcing-seed", 7, "--um", 10,
               "--alpha", 0.01, "--iters", 20, "--out", "ctrl.json") == 0
    res = io.read_json("ctrl.json")
    assert len(res["c_opt"]) == 4 and res["final_peak"] <= res["initial_peak"]
    with open("ctrl.json.history.csv") as fh:
        assert len(fh.read().splitlines()) == 22
    assert run("control", "--out", "x.json") == 2
