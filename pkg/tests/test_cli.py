import json
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from qleak.cli import main
from qleak.numkernel import load_matrix

DATA = resources.files("qleak") / "data"


def test_entropy_epr(tmp_path, capsys):
    assert main(["entropy", str(DATA / "epr.state"), "--a", "A", "--b", "B", "--witness-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    h = float(out.split()[0].split("=")[1])
    assert h == pytest.approx(-1.0, abs=1e-6)
    sigma = load_matrix(tmp_path / "sigma.mat")
    assert np.trace(sigma).real == pytest.approx(2.0, abs=1e-6)
    assert (tmp_path / "X.mat").exists()


def test_entropy_default_b(capsys):
    assert main(["entropy", str(DATA / "epr.state"), "--a", "A"]) == 0
    assert "hmin=-1.0" in capsys.readouterr().out


def test_run_json(capsys):
    assert main(["run", str(DATA / "superdense.proto"), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["m_a"] == 1 and data["m_b"] == 0 and data["rounds"] == 1
    assert "OUT" in data["bob_final"]


def test_run_trace_dir(tmp_path, capsys):
    assert main(["run", str(DATA / "bitsend.proto"), "--trace-dir", str(tmp_path)]) == 0
    assert (tmp_path / "final.state").exists()
    assert len(list(tmp_path.glob("step*.state"))) >= 2
    assert "m_a=1" in capsys.readouterr().out


def test_audit_reproducible(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p, w in zip(paths, (1, 2)):
        assert main(["audit", "--rule", "GEN_LCR", "--trials", "8", "--seed", "5", "--json", str(p),
                     "--workers", str(w)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert json.loads(paths[0].read_text())["failures"] == 0


@pytest.mark.parametrize("name,needle", [("superdense", "m_a = 1"), ("bitsend", "tight")])
def test_demo(name, needle, capsys):
    assert main(["demo", name]) == 0
    out = capsys.readouterr().out
    assert needle in out and "verdict: tight" in out


def test_demo_lo(capsys):
    assert main(["demo", "lo-attack", "--trials", "20"]) == 0


@pytest.mark.parametrize("argv", [
    ["audit", "--rule", "NOPE"],
    ["entropy", "/nonexistent.state", "--a", "A"],
    ["frobnicate"],
    ["audit", "--rule", "SEP_LCR", "--workers", "0"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2


def test_bad_protocol_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.proto"
    p.write_text("protocol p\nsystem A dim=2 owner=carol\n")
    assert main(["run", str(p)]) == 2
    assert "2:" in capsys.readouterr().err


def test_module_entry():
    proc = subprocess.run([sys.executable, "-m", "qleak", "demo", "bitsend"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tight" in proc.stdout
