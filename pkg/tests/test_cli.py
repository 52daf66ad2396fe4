import csv
import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from liouville_roa import cli
from liouville_roa.conic import LimitExceeded

GOLDEN = Path(__file__).parent / "golden"


def run(*args):
    return cli.main([str(a) for a in args])


def test_relax_cubic_matches_golden(tmp_path):
    assert run("relax", "--problem", "cubic", "--orders", "2", "--out", tmp_path) == 0
    files = list(tmp_path.glob("*.dat-s"))
    assert [f.name for f in files] == ["cubic_fixed_k2.dat-s"]
    assert files[0].read_text() == (GOLDEN / "cubic_fixed_k2.dat-s").read_text()


def test_relax_brockett_structure(tmp_path):
    assert run("relax", "--problem", "brockett", "--orders", "3", "--out", tmp_path) == 0
    lines = (tmp_path / "brockett_fixed_k3.dat-s").read_text().splitlines()
    body = [line.split() for line in lines[6:]]
    got = {
        "header": lines[:5],
        "objective_nonzeros": [i for i, v in enumerate(lines[5].split()) if float(v) != 0],
        "entries_per_block": {str(k): v for k, v in
                              sorted(Counter(int(t[1]) for t in body).items())},
        "constant_entries_per_block": {str(k): v for k, v in
                                       sorted(Counter(int(t[1]) for t in body
                                                      if t[0] == "0").items())},
        "entry_lines": len(body),
    }
    assert got == json.loads((GOLDEN / "brockett_k3_structure.json").read_text())


def test_invalid_problem_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 1, "T": 0, "dynamics": ["x1"], "X": ["1 - x1^2"],
                               "XT": ["0.01 - x1^2"]}))
    assert run("relax", "--problem", bad, "--orders", "2", "--out", tmp_path) == 4
    assert "horizon must be positive" in capsys.readouterr().err


def test_unknown_problem(tmp_path, capsys):
    assert run("solve", "--problem", "pendulum", "--orders", "2", "--out", tmp_path) == 4
    assert "built-in" in capsys.readouterr().err


def test_order_below_minimum(tmp_path, capsys):
    assert run("relax", "--problem", "van_der_pol", "--orders", "1:2", "--out", tmp_path) == 4
    assert "minimal admissible order is 2" in capsys.readouterr().err


def test_bad_flags():
    assert run("solve", "--problem", "cubic") == 4
    assert run("solve", "--problem", "cubic", "--orders", "2", "--mode", "sometimes") == 4


def test_parse_orders():
    assert cli.parse_orders("4,2") == [2, 4]
    assert cli.parse_orders("2:4,6") == [2, 3, 4, 6]


def solve_cubic(out, *extra):
    return run("solve", "--problem", "cubic", "--orders", "2,4", "--out", out, *extra)


def test_solve_cubic_bundle(tmp_path):
    assert solve_cubic(tmp_path, "--verify-sos", "--export-sdpa") == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["certificate_k2.json", "certificate_k4.json", "objectives.json",
                     "relaxation_k2.dat-s", "relaxation_k4.dat-s", "run.log",
                     "volume_k2.json", "volume_k4.json"]
    cert = json.loads((tmp_path / "certificate_k4.json").read_text())
    for key in ("problem_hash", "scaling", "order", "solver_options", "seed", "version"):
        assert key in cert
    assert cert["order"] == 4 and cert["seed"] == 0
    assert all(r["passed"] for r in cert["sos_verification"].values())
    vol = json.loads((tmp_path / "volume_k4.json").read_text())["report"]
    assert vol["estimator"] == "grid" and 0 <= vol["relative_error"] <= 0.08
    table = json.loads((tmp_path / "objectives.json").read_text())["orders"]
    assert [row["k"] for row in table] == [2, 4]
    for row in table:
        assert {"primal_objective", "dual_objective", "gap", "iterations"} <= set(row)
    assert "wall" in (tmp_path / "run.log").read_text()


def test_solve_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert solve_cubic(a) == 0 and solve_cubic(b) == 0
    for f in a.iterdir():
        if f.name != "run.log":
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_failed_order_does_not_abort_sweep(tmp_path, monkeypatch):
    real = cli.solve_relaxation

    def flaky(spec, k, *args, **kw):
        if k == 3:
            raise LimitExceeded("too large")
        return real(spec, k, *args, **kw)

    monkeypatch.setattr(cli, "solve_relaxation", flaky)
    assert run("solve", "--problem", "cubic", "--orders", "2:4", "--out", tmp_path) == 3
    assert (tmp_path / "certificate_k2.json").exists()
    assert (tmp_path / "certificate_k4.json").exists()
    assert not (tmp_path / "certificate_k3.json").exists()
    table = json.loads((tmp_path / "objectives.json").read_text())["orders"]
    assert table[1] == {"k": 3, "status": "LimitExceeded"}


def test_parallel_orders_match_serial(tmp_path):
    serial, par = tmp_path / "s", tmp_path / "p"
    assert solve_cubic(serial) == 0
    assert solve_cubic(par, "--jobs", "2") == 0
    for name in ("certificate_k2.json", "certificate_k4.json", "objectives.json"):
        assert (serial / name).read_bytes() == (par / name).read_bytes()


@pytest.fixture(scope="module")
def cubic_certificate(tmp_path_factory):
    out = tmp_path_factory.mktemp("cubic")
    assert run("solve", "--problem", "cubic", "--orders", "4", "--out", out) == 0
    return out / "certificate_k4.json"


def test_levelset_one_dimensional(tmp_path, cubic_certificate):
    path = tmp_path / "ls.csv"
    assert run("levelset", "--problem", "cubic", "--certificate", cubic_certificate,
               "--points", 1001, "--csv", path) == 0
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x1", "v0", "w"]
    assert len(rows) == 1002
    assert float(rows[1][0]) == -1.0 and float(rows[-1][0]) == 1.0


def test_levelset_two_dimensional_constant(tmp_path):
    cert = {"certificate": {"k": 1, "v": {"variables": ["t", "x1", "x2"], "terms": [[[0, 0, 0], 1.0]]},
                            "w": {"variables": ["x1", "x2"], "terms": [[[0, 0], 2.0]]}},
            "scaling": {"state_center": [0, 0], "state_radius": [0.7, 1.2], "T": 1.0}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cert))
    assert run("levelset", "--problem", "double_integrator", "--certificate", path,
               "--points", 201, "--out", tmp_path) == 0
    data = np.loadtxt(tmp_path / "levelset.csv", delimiter=",", skiprows=1)
    assert data.shape == (201 * 201, 4)
    assert np.all(data[:, 3] == 2.0)
    # row-major: the last coordinate varies fastest
    assert data[0, 0] == data[1, 0] and data[0, 1] < data[1, 1]


def test_validate_cubic(tmp_path, cubic_certificate):
    assert run("validate", "--problem", "cubic", "--certificate", cubic_certificate,
               "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "validation.json").read_text())["report"]
    assert rep["orders"][0]["points_outside"] == 0 and rep["samples"] == 1000


def test_validate_flags_flipped_certificate(tmp_path, cubic_certificate):
    data = json.loads(cubic_certificate.read_text())
    for term in data["certificate"]["v"]["terms"]:
        term[1] = -term[1]
    bad = tmp_path / "flipped.json"
    bad.write_text(json.dumps(data))
    assert run("validate", "--problem", "cubic", "--certificate", bad, "--out", tmp_path) == 2
    rep = json.loads((tmp_path / "validation.json").read_text())["report"]
    assert rep["orders"][0]["points_outside"] > 0


def test_validate_free_time(tmp_path):
    out = tmp_path / "free"
    assert run("solve", "--problem", "cubic", "--orders", "4", "--mode", "free",
               "--out", out) == 0
    assert run("validate", "--problem", "cubic", "--certificate", out / "certificate_k4.json",
               "--out", out) == 0
    rep = json.loads((out / "validation.json").read_text())["report"]
    assert rep["mode"] == "free" and rep["orders"][0]["passed"]


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "liouville_roa", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == cli.__version__
