import json
import subprocess
import sys

import pytest

from clearkit.cli import main
from clearkit.core import reference_params
from clearkit.ramsey import default_ramsey_config, synthesize_trace


def test_design_prints_json(capsys):
    assert main(["design", "--set", "p_norm=2", "--set", "t_dn1=0.12", "--set", "t_dn2=0.12"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["t_dn1"] == 0.12 and out["p_norm"] == pytest.approx(2.0)
    assert max(out["residual_linear"].values()) < 1e-9
    assert out["amp_dn1"] == pytest.approx(-0.4273, abs=1e-3)


def test_unknown_keys_exit_2(caplog):
    assert main(["design", "--set", "bogus=1"]) == 2
    assert main(["power_sweep", "--set", "bogus=1"]) == 2
    assert "bogus" in caplog.text


def test_bad_device_file_exit_2(tmp_path):
    f = tmp_path / "dev.json"
    f.write_text(json.dumps({"kappa_mhz": 1.1, "wat": 2}))
    assert main(["design", "--params", str(f)]) == 2


def test_singular_design_exit_3():
    assert main(["design", "--set", "chi_mhz=-1e-9", "--set", "kappa_mhz=1e-9"]) == 3


def test_ramsey_fit_round_trip(tmp_path, capsys):
    p = reference_params()
    trace = synthesize_trace(1.7, -0.4, p, default_ramsey_config(p))
    f = tmp_path / "trace.csv"
    f.write_text(trace.to_csv())
    assert main(["ramsey-fit", str(f)]) == 0
    fit = json.loads(capsys.readouterr().out)
    assert fit["n0"] == pytest.approx(1.7, rel=1e-6) and fit["converged"]


def test_ramsey_fit_bad_header(tmp_path):
    f = tmp_path / "trace.csv"
    f.write_text("a,b\n0,1\n")
    assert main(["ramsey-fit", str(f)]) == 2


def test_simulate_csv(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "--pulse", "square", "--p-norm", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t_us,re_g,im_g,re_e,im_e,n_g,n_e"
    assert float(lines[-1].split(",")[0]) == pytest.approx(2.3)


def test_scenario_writes_manifest(tmp_path, capsys):
    assert main(["ramsey_single", "--out", str(tmp_path), "--seed", "4"]) == 0
    printed = capsys.readouterr().out.split()
    assert str(tmp_path / "manifest.json") in printed
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 4


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CLEARKIT_OUT", str(tmp_path))
    assert main(["ramsey_single"]) == 0
    assert (tmp_path / "ramsey_single" / "manifest.json").exists()


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "clearkit.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "decay_sweep" in r.stdout
