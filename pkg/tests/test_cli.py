import json
import subprocess
import sys

import numpy as np
import pytest

from csdwave import cli

from conftest import REFERENCE_EQUILIBRIA


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "runs"))
    return tmp_path / "runs"


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_manifold_dissect(root, capsys):
    assert cli.main(["manifold-dissect"]) == 0
    out = root / "manifold-dissect"
    m = manifest(out)
    assert m["subcommand"] == "manifold-dissect"
    assert len(m["parameter_hash"]) == 64
    for label, ref in REFERENCE_EQUILIBRIA.items():
        np.testing.assert_allclose(m["results"]["equilibria"][label], ref, rtol=1e-9)
    for name in ("equilibria", "folds", "branch_l", "branch_m", "branch_r", "H_curves",
                 "slow_eigenvalues", "fast_eigenvalues"):
        assert (out / f"{name}.csv").exists()
    assert "p_l1" in capsys.readouterr().out


def test_config_file_and_override(root, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# reduced network\ncells = 20\nsample-dt = 50\nspeed_cells = 5,15\n")
    assert cli.main(["simulate-reduced", "--config", str(cfg), "--cells", "16"]) == 0
    m = manifest(root / "simulate-reduced")
    assert m["config"]["cells"] == 16
    assert m["config"]["sample_dt"] == 50.0
    assert list(m["config"]["speed_cells"]) == [5, 15]
    assert m["results"]["depolarized_fraction"] == 1.0
    V = np.loadtxt(root / "simulate-reduced" / "V_N.csv", delimiter=",", skiprows=1)
    assert V.shape[1] == 17


def test_missing_config_is_usage_error(root, tmp_path):
    assert cli.main(["manifold-dissect", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_bad_config_key(root, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert cli.main(["manifold-dissect", "--config", str(cfg)]) == 2


def test_stage_error(root, capsys):
    assert cli.main(["singular-speed", "--c-bracket", "0.2,0.3"]) == 1
    err = capsys.readouterr().err
    assert "failed: BracketError" in err


def test_params_file_changes_hash(root, tmp_path, p):
    pf = tmp_path / "p.txt"
    pf.write_text(f"K_e0 = {p.K_e0}\n")
    assert cli.main(["manifold-dissect", "--quick", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["manifold-dissect", "--quick", "--params", str(pf), "--out", str(tmp_path / "b")]) == 0
    a, b = manifest(tmp_path / "a"), manifest(tmp_path / "b")
    assert a["parameter_hash"] == b["parameter_hash"]
    assert b["parameter_file"] == str(pf)


def test_param_speed_wide_bracket(root):
    assert cli.main(["param-speed", "--order", "55", "--c-bracket", "0.06,0.1"]) == 0
    out = root / "param-speed"
    res = manifest(out)["results"]
    assert abs(res["c_hat"] - 0.073135) < 5e-4
    assert abs(res["velocity_mm_min"] - 6.1433) < 0.05
    coef = np.loadtxt(out / "coefficients.csv", delimiter=",", skiprows=1)
    assert coef.shape == (56, 5)


def test_singular_speed_deterministic(root, tmp_path):
    for d in ("a", "b"):
        assert cli.main(["singular-speed", "--c-bracket", "0.073,0.076", "--out", str(tmp_path / d)]) == 0
    a, b = manifest(tmp_path / "a"), manifest(tmp_path / "b")
    assert a["results"] == b["results"]
    assert abs(a["results"]["c0"] - 0.07426) < 5e-4


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "csdwave.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for name in ("simulate-full", "simulate-reduced", "simulate-instant", "manifold-dissect",
                 "singular-speed", "param-speed", "fenichel-speed", "speed-table"):
        assert name in r.stdout
