from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from qmath.workbench.exceptions import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTPUT_ENV = "QMATH_WORKBENCH_OUTPUT"
DEFAULT_OUTPUT = "results"
COMMON_KEYS = ("experiment", "seed", "output", "workers")


def default_output() -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment run.

    ``params`` always holds every parameter of the experiment, with defaults filled in.
    """

    experiment: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    output: Path = field(default_factory=default_output)
    workers: int = 1

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": self.params,
            "seed": self.seed,
            "output": str(self.output),
            "workers": self.workers,
        }

    @property
    def digest(self) -> str:
        """Hash of everything that determines the results; output directory and pool width are left out."""
        payload = canonical_json({"experiment": self.experiment, "params": self.params, "seed": self.seed})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_toml(path: Path) -> dict[str, Any]:
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"Config file {path} does not exist")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid TOML: {e}")

    unknown = sorted(set(data) - set(COMMON_KEYS) - {"params"})
    if unknown:
        raise ConfigError(f"Unknown top-level keys in {path}: {', '.join(unknown)}")
    if not isinstance(data.get("params", {}), dict):
        raise ConfigError(f"[params] in {path} must be a table")
    return data


def parse_value(text: str) -> Any:
    """Read a flag value as a TOML value, falling back to the bare string (``--window hann``)."""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def parse_assignment(text: str) -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Expected KEY=VALUE, got {text!r}")
    return key.strip(), parse_value(value.strip())


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, list):
        items = value if isinstance(value, list) else [value]
        if default:
            return [_coerce(key, item, default[0]) for item in items]
        return items

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"Parameter {key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"Parameter {key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not _is_number(value):
            raise ConfigError(f"Parameter {key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"Parameter {key} must be a string, got {value!r}")
        return value
    return value


def merge_params(name: str, defaults: dict[str, Any], *sources: dict[str, Any]) -> dict[str, Any]:
    """Apply parameter sources over the defaults, later sources winning."""
    params = dict(defaults)
    for source in sources:
        for key, value in source.items():
            if key not in defaults:
                known = ", ".join(sorted(defaults)) or "none"
                raise ConfigError(f"Unknown parameter {key!r} for experiment {name} (known: {known})")
            params[key] = _coerce(key, value, defaults[key])
    return params


def _check_int(key: str, value: Any, minimum: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}")
    return value


def build_config(
    name: str,
    defaults: dict[str, Any],
    *,
    file: dict[str, Any] | None = None,
    flags: dict[str, Any] | None = None,
    seed: int | None = None,
    output: Path | None = None,
    workers: int | None = None,
) -> ExperimentConfig:
    """Resolve an experiment configuration from defaults, a loaded TOML file and command-line values."""
    file = file or {}
    if file.get("experiment", name) != name:
        raise ConfigError(f"Config file is for experiment {file['experiment']!r}, not {name!r}")

    params = merge_params(name, defaults, file.get("params", {}), flags or {})

    cfg = ExperimentConfig(
        experiment=name,
        params=params,
        seed=_check_int("seed", seed if seed is not None else file.get("seed", 0), 0),
        output=Path(output if output is not None else file.get("output", default_output())),
        workers=_check_int("workers", workers if workers is not None else file.get("workers", 1), 1),
    )
    log.debug("Resolved config for %s: %s", name, canonical_json(cfg.to_json()))
    return cfg
