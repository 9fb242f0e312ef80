import json
import subprocess
import sys

import pytest

from conftest import DATA
from ltgc.cli import EXIT_OK, EXIT_USAGE, main

NOM = str(DATA / "nominal.json")


def run(*argv):
    return main(["--workers", "1", *argv])


def pipeline(root):
    """Small generate -> train -> evaluate -> fly run; returns written files."""
    db, model = root / "db", root / "model.json"
    assert run("generate", "--nominal", NOM, "--out", str(db), "--trajectories", "12",
               "--samples", "5", "--binary") == EXIT_OK
    assert run("train", "--db", str(db), "--out", str(model), "--loss", "n1", "--arch", "2x8",
               "--epochs", "2", "--batch", "8", "--lr", "1e-3", "--verify") == EXIT_OK
    assert run("evaluate", "--nominal", NOM, "--model", str(model), "--db", str(db),
               "--regions", "4", "--n", "1", "--out", str(root / "eval.json")) == EXIT_OK
    assert run("fly", "--nominal", NOM, "--model", str(model), "--duration-years", "0.2",
               "--zoh-days", "5", "--out", str(root / "traj.csv")) == EXIT_OK
    return sorted(p for p in root.rglob("*") if p.is_file())


def test_stages_are_byte_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    fa, fb = pipeline(a), pipeline(b)
    assert [p.relative_to(a) for p in fa] == [p.relative_to(b) for p in fb]
    assert len(fa) >= 7
    for x, y in zip(fa, fb):
        assert x.read_bytes() == y.read_bytes(), x.name
    rep = json.loads((a / "eval.json").read_text())
    assert rep["controller"] == "NetController"
    assert {"nominal_flight", "control_errors", "regions"} <= set(rep)


def test_replay_oracle_evaluation(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run("evaluate", "--nominal", NOM, "--oracle", "replay", "--regions", "",
               "--discrepancy", "--out", str(out)) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["nominal_flight"]["red_at"] < 1e-6
    assert -1e-3 <= rep["propellant_discrepancy"]["kg"] < 0.1


def test_usage_errors_exit_with_code_two(tmp_path, capsys):
    assert run("fly", "--nominal", str(tmp_path / "missing.json")) == EXIT_USAGE
    assert run("fly", "--nominal", NOM) == EXIT_USAGE  # neither model nor oracle
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("fly", "--nominal", str(bad), "--oracle", "zero") == EXIT_USAGE
    cfg = tmp_path / "c.toml"
    cfg.write_text("nonsense = 1\n")
    assert main(["--config", str(cfg), "fly", "--nominal", NOM, "--oracle", "zero"]) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ltgc", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("ltgc ")
