import json
import math

import pytest

from daebasin import analysis, cli

FRAGILE = {"n": 1, "m": 1, "A": [1.0], "F": ["x1"], "G": ["u1 - x1 + 0.9*u1^3"],
           "rest_point": {"x0": [0.0], "u0": [0.0]}}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_example2(capsys):
    code, out, _ = run(capsys, "analyze", "--builtin", "example2", "--samples", "200", "--json")
    assert code == 0
    rep = json.loads(out)
    assert rep["spectral_abscissa"] == pytest.approx(-1.0, abs=1e-8)
    assert rep["delta_max"] > 0
    assert rep["status"] == "certified"


def test_analyze_text_report(capsys):
    code, out, _ = run(capsys, "analyze", "--builtin", "example2", "--samples", "100", "--radii", "8")
    assert code == 0
    assert "spectral abscissa: -1" in out and "delta_max" in out


def test_analyze_example1_reports_inverse_coefficient(capsys):
    code, out, _ = run(capsys, "analyze", "--builtin", "example1", "--N", "16",
                       "--samples", "20", "--radii", "4", "--json")
    rep = json.loads(out)
    assert code == 0
    assert rep["inverse_rank_one"]["c"] == pytest.approx(0.75, abs=1e-10)


def test_simulate_blowup(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--builtin", "example2", "--x0", "2", "--T", "10",
                       "--json", "--out", str(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["outcome"]["kind"] == "BlowUp"
    assert rep["outcome"]["t_star_low"] <= math.log(2.0) <= rep["outcome"]["t_star_high"]
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x1,u1,outcome"
    assert json.loads((tmp_path / "report.json").read_text()) == rep


def test_simulate_volterra(capsys):
    code, out, _ = run(capsys, "simulate", "--builtin", "example2", "--x0", "0.3", "--T", "5",
                       "--method", "volterra", "--grid", "500")
    assert code == 0 and out.startswith("outcome:")


def test_branches_example3(capsys):
    code, out, _ = run(capsys, "branches", "--builtin", "example3", "--alpha", "-1", "--beta", "1",
                       "--a", "3", "--b", "2", "--json")
    rep = json.loads(out)
    assert code == 0
    assert rep["stable_count"] == 2
    assert [b["verdict"] for b in rep["branches"]] == ["stable", "stable"]


def test_branches_with_simulation(capsys, tmp_path):
    code, out, _ = run(capsys, "branches", "--builtin", "example3", "--alpha", "2", "--beta", "1",
                       "--a", "3", "--b", "2", "--x0", "0.05", "--out", str(tmp_path))
    assert code == 0
    assert "branch 0: Stabilized" in out
    assert (tmp_path / "branch1.csv").exists()


def test_simulate_degenerate_needs_branch(capsys):
    args = ["simulate", "--builtin", "example3", "--alpha", "-1", "--beta", "1", "--a", "3",
            "--b", "2", "--x0", "0.05"]
    code, _, err = run(capsys, *args)
    assert code == 2 and "--branch" in err
    code, out, _ = run(capsys, *args, "--branch", "0")
    assert code == 0 and "Stabilized" in out


def test_sweep_csv_is_reproducible(capsys, tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        code, _, _ = run(capsys, "sweep", "--builtin", "example2", "--deltas=-1;0;0.5;1;2",
                         "--workers", "2", "--out", str(d))
        assert code == 0
        outs.append((d / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    kinds = [line.split(",")[1] for line in outs[0].decode().splitlines()[1:]]
    assert kinds == ["Stabilized", "Stabilized", "Stabilized", "MaxTimeReached", "BlowUp"]


def test_iterate_table(capsys, tmp_path):
    code, out, _ = run(capsys, "iterate", "--builtin", "example2", "--x0", "0.3", "--T", "5",
                       "--iterations", "4", "--grid", "256", "--out", str(tmp_path))
    assert code == 0
    assert len(out.strip().splitlines()) == 5
    assert sorted(p.name for p in tmp_path.glob("iterate*.csv")) == [
        f"iterate{k:03d}.csv" for k in range(1, 5)]


def test_file_problem(capsys, tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(dict(FRAGILE, F=["-x1 - u1"])))
    code, out, _ = run(capsys, "simulate", "--file", str(path), "--x0", "0.1", "--T", "12")
    assert code == 0 and "Stabilized" in out


def test_usage_errors(capsys, tmp_path):
    assert run(capsys, "simulate", "--builtin", "nope", "--x0", "1")[0] == 2
    assert run(capsys, "simulate", "--builtin", "example2", "--x0", "1,2")[0] == 2
    assert run(capsys, "simulate", "--builtin", "example2", "--x0", "abc")[0] == 2
    assert run(capsys, "simulate", "--file", str(tmp_path / "none.json"), "--x0", "1")[0] == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate", "--builtin", "example2", "--file", "x.json", "--x0", "1"])
    assert info.value.code == 2


def test_numeric_failure_json(capsys, tmp_path):
    path = tmp_path / "fragile.json"
    path.write_text(json.dumps(FRAGILE))
    code, out, _ = run(capsys, "simulate", "--file", str(path), "--x0", "0.1", "--json",
                       "--out", str(tmp_path / "o"))
    assert code == 3
    assert json.loads(out)["error"]["code"] == "constraint_loss"
    assert not (tmp_path / "o" / "trajectory.csv").exists()


def test_verify_failure_exit_code(capsys, monkeypatch):
    monkeypatch.setattr(analysis, "verify", lambda seed=0: {
        "seed": seed, "passed": False, "checks": [{"name": "x", "passed": False}]})
    code, out, _ = run(capsys, "verify")
    assert code == 4 and "FAIL  x" in out
