from __future__ import annotations

import json
from pathlib import Path
from unittest.mock import patch

import pytest

from qmath.workbench.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_INVARIANT, EXIT_OK, EXIT_OUT_OF_REGIME, main
from qmath.workbench.exceptions import GenerationFailure, InvariantViolation, OutOfRegimeError
from qmath.workbench.experiments import REGISTRY


def run(tmp_path: Path, *argv: str) -> int:
    return main(["run", *argv, "--output", str(tmp_path)])


def test_list(capsys: pytest.CaptureFixture) -> None:
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in REGISTRY:
        assert f"{name}: " in out


def test_unknown_experiment(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    assert run(tmp_path, "no-such-experiment") == EXIT_CONFIG
    assert "Unknown experiment" in capsys.readouterr().err


def test_unknown_parameter(tmp_path: Path) -> None:
    assert run(tmp_path, "voiculescu", "--set", "colour=3") == EXIT_CONFIG
    assert run(tmp_path, "voiculescu", "--N", "three") == EXIT_CONFIG


def test_run_voiculescu(tmp_path: Path) -> None:
    assert run(tmp_path, "voiculescu", "--N", "[3, 4]") == EXIT_OK

    summary = json.loads((tmp_path / "voiculescu.json").read_text())
    assert summary["violations"] == []
    assert summary["rows"] == 2
    assert summary["commutator"]["3"] == pytest.approx(0.684040, abs=1e-6)
    assert summary["commutator"]["4"] == pytest.approx(0.390181, abs=1e-6)

    lines = (tmp_path / "voiculescu.csv").read_text().splitlines()
    assert lines[0] == ",".join(REGISTRY["voiculescu"].columns)
    assert [line.split(",")[0] for line in lines[1:]] == ["3", "4"]

    manifest = json.loads((tmp_path / "voiculescu.manifest.json").read_text())
    assert manifest["digest"] == summary["digest"]
    assert manifest["config"]["params"] == {"N": [3, 4]}


def test_run_is_reproducible(tmp_path: Path) -> None:
    assert run(tmp_path / "a", "voiculescu", "--N", "[2, 3]") == EXIT_OK
    assert run(tmp_path / "b", "voiculescu", "--N", "[2, 3]", "--workers", "2") == EXIT_OK

    a = (tmp_path / "a" / "voiculescu.csv").read_bytes()
    b = (tmp_path / "b" / "voiculescu.csv").read_bytes()
    assert a == b


def test_checkpoint_resume(tmp_path: Path) -> None:
    assert run(tmp_path, "voiculescu", "--N", "[2, 3]") == EXIT_OK
    first = (tmp_path / "voiculescu.csv").read_bytes()
    checkpoint = tmp_path / "voiculescu.checkpoint.jsonl"
    assert len(checkpoint.read_text().splitlines()) == 2

    (tmp_path / "voiculescu.csv").unlink()
    assert run(tmp_path, "voiculescu", "--N", "[2, 3]") == EXIT_OK
    assert (tmp_path / "voiculescu.csv").read_bytes() == first
    assert len(checkpoint.read_text().splitlines()) == 2

    # a different configuration does not reuse the finished points
    assert run(tmp_path, "voiculescu", "--N", "[2, 3]", "--seed", "1") == EXIT_OK
    assert len(checkpoint.read_text().splitlines()) == 4


def test_checkpoint_truncated_line(tmp_path: Path) -> None:
    assert run(tmp_path, "voiculescu", "--N", "[2]") == EXIT_OK
    checkpoint = tmp_path / "voiculescu.checkpoint.jsonl"
    with checkpoint.open("a") as fh:
        fh.write('{"digest": "')

    assert run(tmp_path, "voiculescu", "--N", "[2]") == EXIT_OK


def test_run_matthew(tmp_path: Path) -> None:
    assert run(tmp_path, "matthew", "--n", "4") == EXIT_OK

    summary = json.loads((tmp_path / "matthew.json").read_text())
    assert summary["monotone"] == 168
    assert summary["pass"] == 166
    assert summary["fail"] == 0
    assert summary["skipped-constant"] == 2


def test_run_config_file(tmp_path: Path) -> None:
    config = tmp_path / "run.toml"
    config.write_text(f'experiment = "voiculescu"\noutput = "{tmp_path.as_posix()}"\n\n[params]\nN = [5]\n')

    assert main(["run", "voiculescu", "--config", str(config)]) == EXIT_OK
    summary = json.loads((tmp_path / "voiculescu.json").read_text())
    assert list(summary["commutator"]) == ["5"]

    assert main(["run", "matthew", "--config", str(config)]) == EXIT_CONFIG


def test_validate(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    config = tmp_path / "run.toml"
    config.write_text('experiment = "matthew"\nseed = 4\n\n[params]\nn = 3\n')

    assert main(["validate", str(config)]) == EXIT_OK
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["experiment"] == "matthew"
    assert resolved["seed"] == 4
    assert resolved["params"] == {"n": 3, "grid_step": 0.02}

    config.write_text("seed = 4\n")
    assert main(["validate", str(config)]) == EXIT_CONFIG


def test_out_of_regime(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    assert run(tmp_path, "gf-roundtrip", "--N", "[3]", "--delta-override", "2.0") == EXIT_OUT_OF_REGIME
    assert "out of regime" in capsys.readouterr().err


@pytest.mark.parametrize(
    ("error", "code", "message"),
    [
        (InvariantViolation("walk-decay: 1 invariant violations"), EXIT_INVARIANT, "invariant violated"),
        (OutOfRegimeError("gap closed", theta=(0.5, 1.0)), EXIT_OUT_OF_REGIME, "theta=[0.5, 1.0]"),
        (GenerationFailure("no simple graph"), EXIT_ERROR, "error: no simple graph"),
    ],
)
def test_exit_codes(tmp_path: Path, capsys: pytest.CaptureFixture, error: Exception, code: int, message: str) -> None:
    with patch("qmath.workbench.cli.run_experiment", side_effect=error):
        assert run(tmp_path, "walk-decay") == code
    assert message in capsys.readouterr().err
