"""Command-line pipeline: exit codes, artifacts, reproducibility."""

import json
import shutil
from pathlib import Path

import pytest

from loopflow.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _circle_config(tmp_path, **edits):
    """Copy the circle gallery config with line-level overrides."""
    text = (CONFIGS / "circle_pendulum.toml").read_text()
    for old, new in edits.items():
        assert old in text, old
        text = text.replace(old, new)
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def test_missing_config_exits_2(tmp_path):
    # [TRIVIAL] pointing at a nonexistent file is a usage error
    assert main(["crit", "--config", str(tmp_path / "nope.toml")]) == 2


def test_malformed_config_exits_2(tmp_path):
    # [TRIVIAL] invalid TOML is a usage error
    bad = tmp_path / "bad.toml"
    bad.write_text("[manifold\nfamily = circle")
    assert main(["crit", "--config", str(bad)]) == 2


def test_bad_schema_and_grid_exit_2(tmp_path):
    # [TRIVIAL] unknown schema version and non-power-of-two grids are
    # configuration errors
    p1 = _circle_config(tmp_path, **{"schema = 1": "schema = 99"})
    assert main(["crit", "--config", str(p1)]) == 2
    p2 = _circle_config(tmp_path, **{"n = 64": "n = 60"})
    assert main(["crit", "--config", str(p2)]) == 2


def test_unknown_command_exits_2(tmp_path):
    cfgp = _circle_config(tmp_path)
    assert main(["frobnicate", "--config", str(cfgp)]) == 2


def test_crit_artifact_and_reproducibility(tmp_path, capsys):
    # [PAPER] the critical-point artifact embeds the config digest and two
    # runs from the same configuration are bit-identical
    cfgp = _circle_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["crit", "--config", str(cfgp), "--out", str(out1)]) == 0
    assert main(["crit", "--config", str(cfgp), "--out", str(out2)]) == 0
    capsys.readouterr()
    b1 = (out1 / "critical_points.json").read_bytes()
    b2 = (out2 / "critical_points.json").read_bytes()
    assert b1 == b2
    rec = json.loads(b1)
    assert len(rec["config_sha256"]) == 64
    assert rec["schema"] == 1
    acts = sorted(c["action"] for c in rec["critical_points"])
    assert acts == pytest.approx([-0.1, 0.1])
    assert sorted(c["morse_index"] for c in rec["critical_points"]) == [0, 1]


def test_homology_matches_reference_exit_0(tmp_path, capsys):
    # [PAPER] the full circle pipeline reproduces betti (1, 1) and exits 0
    cfgp = _circle_config(tmp_path)
    out = tmp_path / "hom"
    assert main(["homology", "--config", str(cfgp),
                 "--out", str(out)]) == 0
    capsys.readouterr()
    rec = json.loads((out / "complex.json").read_text())
    assert rec["betti"] == [1, 1]
    assert rec["torsion"] == {}
    assert rec["reference"]["match"] is True


def test_homology_wrong_reference_exit_1(tmp_path, capsys):
    # [TRIVIAL] a reference mismatch is an invariant failure, exit 1
    cfgp = _circle_config(tmp_path,
                          **{"betti = [1, 1]": "betti = [2, 0]"})
    out = tmp_path / "hom"
    assert main(["homology", "--config", str(cfgp),
                 "--out", str(out)]) == 1
    capsys.readouterr()
    rec = json.loads((out / "complex.json").read_text())
    assert rec["reference"]["match"] is False


def test_check_suite_passes(tmp_path, capsys):
    # [PAPER] the invariant suite runs all checks on the circle gallery
    cfgp = _circle_config(tmp_path)
    out = tmp_path / "check"
    assert main(["check", "--config", str(cfgp), "--out", str(out)]) == 0
    capsys.readouterr()
    rec = json.loads((out / "check_report.json").read_text())
    assert rec["ok"] is True
    names = {c["name"] for c in rec["checks"]}
    assert {"critical-residual", "boundary-squared-zero",
            "reference-homology"} <= names
    assert all(c["ok"] for c in rec["checks"])
