"""Run configuration: INI files, flag overrides and validation."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .preference import PreferenceSpec
from .scenarios import SCENARIO_IDS, ScenarioConfig, preset

OUTPUT_ENV = "CPTMP_OUTPUT_DIR"
MIN_PATHS = 100
MIN_STEPS = 10
FORMATS = ("json", "csv")

DEFAULT_TOLERANCES = {
    "mp_rms": 1e-2,          # residual RMS floor; the checker widens it to 5 pooled std errors
    "se_multiple": 3.0,      # k in "within k standard errors"
    "gateaux_rel": 5e-3,     # relative slack of the finite-difference check
    "drift_identity": 1e-12,
    "budget": 1e-3,
    "lsmc_zero": 1e-10,
    "ks_jz": 1e-2,
}


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation after merging the config file and flags."""

    command: str
    scenario: str | None = None
    n_paths: int | None = None
    steps: int | None = None
    seed: int = 42
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output: Path = Path("cptmp-out")
    emit_paths: bool = False
    format: str = "json"
    workers: int = 1
    control_scale: float = 1.0
    scenario_overrides: dict = field(default_factory=dict)
    preference: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_paths is not None and self.n_paths < MIN_PATHS:
            raise ConfigError(f"n_paths must be at least {MIN_PATHS} (got {self.n_paths})")
        if self.steps is not None and self.steps < MIN_STEPS:
            raise ConfigError(f"steps must be at least {MIN_STEPS} (got {self.steps})")
        if not -(2**63) <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")
        if self.scenario is not None and self.scenario not in SCENARIO_IDS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIO_IDS}")

    def scenario_config(self, scenario_id: str | None = None) -> ScenarioConfig:
        """Preset for the scenario with file and flag overrides applied."""
        sid = scenario_id or self.scenario
        if sid is None:
            raise ConfigError("no scenario given")
        base = preset(sid)
        changes = dict(self.scenario_overrides)
        changes["seed"] = self.seed
        if self.n_paths is not None:
            changes["n_paths"] = self.n_paths
        if self.steps is not None:
            changes["steps"] = self.steps
        if self.control_scale != 1.0:
            changes["control_scale"] = self.control_scale
        try:
            cfg = base.replace(**changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if self.preference:
            cfg = cfg.replace(pref=PreferenceSpec.from_config(self.preference, cfg.preference()))
        return cfg


_SCENARIO_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
_RUN_KEYS = {"scenario", "n_paths", "steps", "seed", "output", "emit_paths", "format", "workers", "control_scale"}


def _convert_scenario_value(key: str, raw: str):
    if key not in _SCENARIO_TYPES or key in ("id", "pref", "seed", "n_paths", "steps", "control_scale"):
        raise ConfigError(f"unknown scenario key {key!r}")
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"scenario key {key!r} needs a number, got {raw!r}") from exc


def read_config_file(path: str | os.PathLike) -> dict:
    """Parse an INI config into keyword arguments for :class:`RunConfig`.

    Sections: ``[run]`` (scenario, n_paths, steps, seed, output, emit_paths,
    format, workers, control_scale), ``[tolerance]``, ``[scenario]`` (market
    and preference-free scenario fields) and ``[preference.<component>]``
    with ``kind`` plus its parameters.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "run":
            unknown = set(items) - _RUN_KEYS
            if unknown:
                raise ConfigError(f"unknown [run] keys: {sorted(unknown)}")
            try:
                for key, raw in items.items():
                    if key in ("n_paths", "steps", "seed", "workers"):
                        out[key] = int(raw)
                    elif key == "control_scale":
                        out[key] = float(raw)
                    elif key == "emit_paths":
                        out[key] = parser.getboolean(section, key)
                    elif key == "output":
                        out[key] = Path(raw)
                    else:
                        out[key] = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"bad value in [run]: {exc}") from exc
        elif section == "tolerance":
            try:
                out["tolerances"] = {k: float(v) for k, v in items.items()}
            except ValueError as exc:
                raise ConfigError(f"bad tolerance value: {exc}") from exc
        elif section == "scenario":
            out["scenario_overrides"] = {k: _convert_scenario_value(k, v) for k, v in items.items()}
        elif section.startswith("preference."):
            out.setdefault("preference", {})[section.split(".", 1)[1]] = items
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return out


def parse_tolerance_flags(flags: list[str] | None) -> dict:
    out = {}
    for item in flags or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"tolerance override must look like key=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError as exc:
            raise ConfigError(f"tolerance {key!r} needs a number") from exc
    return out


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "cptmp-out"))


def build_run_config(command: str, file_values: dict, flag_values: dict) -> RunConfig:
    """Merge config-file values with flags (flags win) and validate."""
    merged = dict(file_values)
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(merged.pop("tolerances", {}))
    tolerances.update(flag_values.pop("tolerances", {}))
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    merged.setdefault("output", default_output_dir())
    merged["output"] = Path(merged["output"])
    return RunConfig(command=command, tolerances=tolerances, **merged)
