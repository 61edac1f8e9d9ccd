from __future__ import annotations

from pathlib import Path

import pytest

from qmath.workbench.config import (
    OUTPUT_ENV,
    ExperimentConfig,
    build_config,
    default_output,
    load_toml,
    merge_params,
    parse_assignment,
    parse_value,
)
from qmath.workbench.exceptions import ConfigError

DEFAULTS = {"N": [2, 3], "delta": 0.0, "window": "bump", "validate": False, "k": 4}


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("3", 3),
        ("[3, 4]", [3, 4]),
        ("0.5", 0.5),
        ("true", True),
        ('"hann"', "hann"),
        ("hann", "hann"),
        ("test:1", "test:1"),
    ],
)
def test_parse_value(text: str, expected: object) -> None:
    assert parse_value(text) == expected


def test_parse_assignment() -> None:
    assert parse_assignment("k = 6") == ("k", 6)
    with pytest.raises(ConfigError):
        parse_assignment("k")
    with pytest.raises(ConfigError):
        parse_assignment("=6")


def test_merge_params() -> None:
    params = merge_params("demo", DEFAULTS, {"N": 5, "delta": 1}, {"N": [6, 7], "validate": True})
    assert params == {"N": [6, 7], "delta": 1.0, "window": "bump", "validate": True, "k": 4}
    assert isinstance(params["delta"], float)

    # defaults are not modified
    assert DEFAULTS["N"] == [2, 3]


@pytest.mark.parametrize(
    "source",
    [
        {"unknown": 1},
        {"k": 1.5},
        {"k": True},
        {"validate": 1},
        {"window": 3},
        {"delta": "wide"},
        {"N": ["three"]},
    ],
)
def test_merge_params_invalid(source: dict) -> None:
    with pytest.raises(ConfigError):
        merge_params("demo", DEFAULTS, source)


def test_load_toml(tmp_path: Path) -> None:
    path = tmp_path / "run.toml"
    path.write_text('experiment = "demo"\nseed = 3\n\n[params]\nN = [4]\n')
    data = load_toml(path)
    assert data == {"experiment": "demo", "seed": 3, "params": {"N": [4]}}


@pytest.mark.parametrize(
    "content",
    [
        "experiment = ",
        'experiment = "demo"\ncolour = "red"\n',
        'experiment = "demo"\nparams = 3\n',
    ],
)
def test_load_toml_invalid(tmp_path: Path, content: str) -> None:
    path = tmp_path / "run.toml"
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_toml(path)


def test_load_toml_missing(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="does not exist"):
        load_toml(tmp_path / "missing.toml")


def test_build_config(tmp_path: Path) -> None:
    file = {"experiment": "demo", "seed": 3, "workers": 2, "output": str(tmp_path), "params": {"k": 5}}
    cfg = build_config("demo", DEFAULTS, file=file, flags={"k": 6})
    assert cfg.params["k"] == 6
    assert cfg.seed == 3
    assert cfg.workers == 2
    assert cfg.output == tmp_path

    cfg = build_config("demo", DEFAULTS, file=file, seed=9, workers=1)
    assert cfg.params["k"] == 5
    assert cfg.seed == 9
    assert cfg.workers == 1


@pytest.mark.parametrize(
    "kwargs",
    [
        {"file": {"experiment": "other"}},
        {"seed": -1},
        {"workers": 0},
        {"file": {"seed": "zero"}},
    ],
)
def test_build_config_invalid(kwargs: dict) -> None:
    with pytest.raises(ConfigError):
        build_config("demo", DEFAULTS, **kwargs)


def test_digest(tmp_path: Path) -> None:
    a = build_config("demo", DEFAULTS, output=tmp_path / "a", workers=1)
    b = build_config("demo", DEFAULTS, output=tmp_path / "b", workers=4)
    c = build_config("demo", DEFAULTS, flags={"k": 5})
    d = build_config("demo", DEFAULTS, seed=1)

    assert a.digest == b.digest
    assert a.digest != c.digest
    assert a.digest != d.digest
    assert len(a.digest) == 16


def test_default_output(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert default_output() == Path("results")

    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert default_output() == tmp_path
    assert ExperimentConfig("demo").output == tmp_path
