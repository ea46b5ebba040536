import json
import subprocess
import sys

import pytest

from osgood.cli import main
from conftest import CONFIGS


def run(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


def write_config(path, data):
    path.write_text(json.dumps(data))
    return path


SCALAR = {
    "problem": {"graph": {"generator": "empty", "n": 1}},
    "source": {"kind": "power", "alpha": 1.0},
    "initial": {"kind": "constant", "c": 2.0},
    "analysis": {"t_min": 0.01, "t_max": 10.0, "t_grid": 400, "horizon": 1.0},
}


# -- certify ----------------------------------------------------------------

def test_certify_scalar(tmp_path):
    assert run("certify", CONFIGS / "scalar.json", tmp_path) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert 0.5 < cert["T"] < 0.51
    assert cert["G"] == [0]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["command"] == "certify"
    assert report["config"]["source"]["kind"] == "power"


def test_certify_two_vertex_and_verify(tmp_path):
    assert run("certify", CONFIGS / "two_vertex.json", tmp_path) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["margin"] > 1
    assert cert["mean"] == pytest.approx(2.2706705664732, rel=1e-10)
    assert run("certify", CONFIGS / "two_vertex.json", tmp_path, "--verify-only", str(tmp_path / "certificate.json")) == 0
    ver = json.loads((tmp_path / "verification.json").read_text())
    assert ver["verified"] is True


def test_verify_only_rejects_forged_certificate(tmp_path):
    forged = {"T": 0.4, "G": [0], "mean": 2.0, "threshold": 2.5, "margin": 0.1, "form": "mean"}
    (tmp_path / "forged.json").write_text(json.dumps(forged))
    code = run("certify", CONFIGS / "scalar.json", tmp_path, "--verify-only", str(tmp_path / "forged.json"))
    assert code == 3
    assert json.loads((tmp_path / "verification.json").read_text())["verified"] is False


def test_verify_only_margin_mismatch(tmp_path):
    claimed = {"T": 1.0, "G": [0], "mean": 2.0, "threshold": 1.0, "margin": 5.0, "form": "pointwise"}
    (tmp_path / "c.json").write_text(json.dumps(claimed))
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--verify-only", str(tmp_path / "c.json")) == 3


def test_verify_only_unreadable(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--verify-only", str(tmp_path / "c.json")) == 1


def test_certify_no_certificate(tmp_path):
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--t-max", "0.4") == 3
    assert json.loads((tmp_path / "certificate.json").read_text()) == {"certificate": None}


def test_certify_zero_initial(tmp_path):
    cfg = write_config(tmp_path / "zero.json", {**SCALAR, "initial": {"kind": "constant", "c": 0.0}})
    assert run("certify", cfg, tmp_path / "out") == 3


def test_certify_random_graph(tmp_path):
    assert run("certify", CONFIGS / "random_graph.json", tmp_path) == 0


def test_sweep(tmp_path):
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--sweep", "alpha=0.5,1,2") == 0
    runs = json.loads((tmp_path / "sweep.json").read_text())["runs"]
    assert runs == {"alpha=0.5": 0, "alpha=1": 0, "alpha=2": 0}
    T = {a: json.loads((tmp_path / f"alpha={a}" / "certificate.json").read_text())["T"] for a in ("0.5", "1", "2")}
    # blow-up time 1 / (alpha 2^alpha) for the constant value 2
    assert T["0.5"] == pytest.approx(2 ** -0.5 * 2, rel=0.02)
    assert T["2"] == pytest.approx(1 / 8, rel=0.02)


def test_sweep_bad_spec(tmp_path):
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--sweep", "alpha") == 1
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--sweep", "alpha=x") == 1


def test_sweep_thread_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("OSGOOD_THREADS", "1")
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--sweep", "alpha=1,2") == 0
    monkeypatch.setenv("OSGOOD_THREADS", "many")
    assert run("certify", CONFIGS / "scalar.json", tmp_path, "--sweep", "alpha=1,2") == 1


# -- simulate ---------------------------------------------------------------

def test_simulate_scalar(tmp_path):
    assert run("simulate", CONFIGS / "scalar.json", tmp_path) == 4
    status = json.loads((tmp_path / "status.json").read_text())
    assert status["status"] == "blow-up-detected"
    assert status["T_emp"] == pytest.approx(0.5, abs=5e-3)
    assert (tmp_path / "trace.csv").read_text().startswith("t,sup_norm,p_norm")


def test_simulate_two_vertex(tmp_path):
    assert run("simulate", CONFIGS / "two_vertex.json", tmp_path / "sim") == 4
    assert run("certify", CONFIGS / "two_vertex.json", tmp_path / "cert") == 0
    T_emp = json.loads((tmp_path / "sim" / "status.json").read_text())["T_emp"]
    T_cert = json.loads((tmp_path / "cert" / "certificate.json").read_text())["T"]
    assert T_emp <= T_cert


def test_reports_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("validate", CONFIGS / "random_graph.json", tmp_path / name) == 0
    assert (tmp_path / "a" / "validation.json").read_text() == (tmp_path / "b" / "validation.json").read_text()


def test_simulate_zero_initial(tmp_path):
    cfg = write_config(tmp_path / "zero.json", {**SCALAR, "initial": {"kind": "constant", "c": 0.0}})
    assert run("simulate", cfg, tmp_path / "out") == 0
    status = json.loads((tmp_path / "out" / "status.json").read_text())
    assert status["status"] == "reached-horizon"
    assert status["T_emp"] is None


def test_simulate_step_failure(tmp_path):
    cfg = write_config(tmp_path / "c.json", {**SCALAR, "analysis": {**SCALAR["analysis"], "rtol": 1e-300}})
    assert run("simulate", cfg, tmp_path / "out") == 5


def test_simulate_needs_horizon(tmp_path):
    cfg = write_config(tmp_path / "c.json", {**SCALAR, "analysis": {}})
    assert run("simulate", cfg, tmp_path / "out") == 1
    assert run("simulate", cfg, tmp_path / "out", "--horizon", "1") == 4


def test_simulate_dump_states(tmp_path):
    cfg = write_config(tmp_path / "c.json", {**SCALAR, "analysis": {"horizon": 0.2, "dump_states": True}})
    assert run("simulate", cfg, tmp_path / "out") == 0
    assert (tmp_path / "out" / "states.npz").is_file()


def test_initial_file(tmp_path):
    (tmp_path / "a.csv").write_text("vertex,value\n0,4.0\n")
    data = {**SCALAR, "problem": {"graph": {"generator": "path", "n": 2}},
            "initial": {"kind": "file", "path": "a.csv"}, "analysis": {"t_min": 1.0, "t_max": 100.0}}
    assert run("certify", write_config(tmp_path / "c.json", data), tmp_path / "out") == 0
    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    assert cert["mean"] == pytest.approx(2.2706705664732, rel=1e-10)


# -- criteria ---------------------------------------------------------------

@pytest.mark.parametrize("name, verdict", [("path_line.json", "blow-up-predicted"),
                                           ("torus_3d.json", "theorem-silent"),
                                           ("gaussian_torus.json", "blow-up-predicted")])
def test_criteria(tmp_path, name, verdict):
    assert run("criteria", CONFIGS / name, tmp_path) == 0
    data = json.loads((tmp_path / "criteria.json").read_text())
    assert data["criterion"]["verdict"] == verdict


def test_criteria_path_theta(tmp_path):
    run("criteria", CONFIGS / "path_line.json", tmp_path)
    data = json.loads((tmp_path / "criteria.json").read_text())
    assert data["volume_growth"]["theta"] == pytest.approx(1.0, abs=0.05)
    assert data["criterion"]["product"] == pytest.approx(1.0, abs=0.05)


def test_criteria_failing_asymptotics_is_silent(tmp_path):
    data = {**SCALAR, "problem": {"graph": {"generator": "path", "n": 101, "centered": True}},
            "analysis": {"r_max": 40, "kappa": 1e-6, "gamma": 1.0}}
    assert run("criteria", write_config(tmp_path / "c.json", data), tmp_path / "out") == 0
    crit = json.loads((tmp_path / "out" / "criteria.json").read_text())["criterion"]
    assert crit["verdict"] == "theorem-silent"
    assert "note" in crit


def test_criteria_needs_r_max(tmp_path):
    data = {**SCALAR, "problem": {"graph": {"generator": "path", "n": 11}}, "analysis": {}}
    assert run("criteria", write_config(tmp_path / "c.json", data), tmp_path / "out") == 1


# -- validate ---------------------------------------------------------------

def test_validate_gaussian(tmp_path):
    assert run("validate", CONFIGS / "gaussian_torus.json", tmp_path) == 0
    data = json.loads((tmp_path / "validation.json").read_text())
    assert data["passed"] is True
    assert data["checks"]["axioms"]["axioms"]["p2"]["residual"] == 0.0


def test_validate_inflated_kernel(tmp_path):
    assert run("validate", CONFIGS / "inflated_kernel.json", tmp_path) == 6
    data = json.loads((tmp_path / "validation.json").read_text())
    assert data["checks"]["axioms"]["axioms"]["p1"]["passed"] is False


def test_validate_random_graph(tmp_path):
    assert run("validate", CONFIGS / "random_graph.json", tmp_path) == 0
    data = json.loads((tmp_path / "validation.json").read_text())
    assert data["seed"] == 7
    assert data["checks"]["jensen"]["failures"] == 0


def test_validate_seed_override(tmp_path):
    assert run("validate", CONFIGS / "random_graph.json", tmp_path, "--seed", "11") == 0
    assert json.loads((tmp_path / "validation.json").read_text())["seed"] == 11


# -- input errors -----------------------------------------------------------

@pytest.mark.parametrize("mutate", [
    lambda d: {**d, "colour": "blue"},
    lambda d: {**d, "analysis": {"t_mni": 1.0}},
    lambda d: {**d, "initial": {"kind": "constant", "c": 1.0, "extra": 2}},
    lambda d: {**d, "initial": {"kind": "constant", "c": -1.0}},
    lambda d: {**d, "initial": {"kind": "values", "values": [1.0, 2.0]}},
    lambda d: {**d, "initial": {"kind": "file", "path": "missing.csv"}},
    lambda d: {**d, "source": {"kind": "power", "alpha": -1.0}},
    lambda d: {**d, "problem": {"graph": {"generator": "path", "n": 2, "edges": "missing.csv"}}},
    lambda d: {**d, "problem": {"lattice": {}}},
    lambda d: {**d, "analysis": {"t_min": 10.0, "t_max": 1.0}},
    lambda d: {**d, "seed": -3},
    lambda d: {k: v for k, v in d.items() if k != "source"},
])
def test_bad_config_exit_1(tmp_path, mutate):
    cfg = write_config(tmp_path / "c.json", mutate(SCALAR))
    assert run("certify", cfg, tmp_path / "out") == 1


def test_missing_config_file(tmp_path, capsys):
    assert run("certify", tmp_path / "nope.json", tmp_path) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{\n  "problem": ,\n}')
    assert run("certify", tmp_path / "c.json", tmp_path) == 1
    assert ":2:" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "osgood", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip() == "0.1.0"
