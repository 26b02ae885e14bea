"""Run configuration: defaults, INI files, and command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .clustering import DEFAULT_CONCENTRATION
from .data import HOLDOUT_MODES
from .errors import ConfigError
from .gp import DEFAULT_NOISE_VAR
from .inference import ScheduleConfig
from .prior import PriorConfig

TASKS = ("fit", "predict", "cluster", "compare-inference", "synth-data")

# Tasks that read real-world files standardize by default; synthetic
# inputs already live on [0, 10].
_STANDARDIZE_DEFAULT = {
    "fit": True,
    "predict": True,
    "cluster": True,
    "compare-inference": False,
    "synth-data": False,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one invocation needs beyond its file paths."""

    task: str = "fit"
    prior: PriorConfig = field(default_factory=PriorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    noise_var: float = DEFAULT_NOISE_VAR
    standardize: bool | None = None
    holdout_fraction: float = 0.2
    holdout_mode: str = "extrapolate-tail"
    probe_count: int = 200
    emit_sample_curves: int = 0
    concentration: float = DEFAULT_CONCENTRATION
    compare_structure: str = '["PER", 1.0, 1.0]'

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task {self.task!r} not one of {TASKS}")
        if self.noise_var <= 0.0:
            raise ConfigError(f"noise_var {self.noise_var} must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(
                f"holdout_fraction {self.holdout_fraction} outside [0, 1)"
            )
        if self.holdout_mode not in HOLDOUT_MODES:
            raise ConfigError(
                f"holdout_mode {self.holdout_mode!r} not one of {HOLDOUT_MODES}"
            )
        if self.probe_count < 2:
            raise ConfigError(f"probe_count {self.probe_count} must be at least 2")
        if self.emit_sample_curves < 0:
            raise ConfigError("emit_sample_curves must be non-negative")
        if self.concentration <= 0.0:
            raise ConfigError(
                f"concentration {self.concentration} must be positive"
            )

    def resolved_standardize(self) -> bool:
        if self.standardize is not None:
            return self.standardize
        return _STANDARDIZE_DEFAULT[self.task]


_BOOL_STRINGS = {
    "true": True,
    "yes": True,
    "on": True,
    "1": True,
    "false": False,
    "no": False,
    "off": False,
    "0": False,
}


def _parse_bool(raw: str) -> bool:
    try:
        return _BOOL_STRINGS[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"cannot read {raw!r} as a boolean") from None


def _parse_weights(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError as err:
        raise ConfigError(f"cannot read {raw!r} as weights: {err}") from None


_SECTION_FIELDS = {
    "run": {
        "task": str,
        "noise_var": float,
        "standardize": _parse_bool,
        "holdout_fraction": float,
        "holdout_mode": str,
        "probe_count": int,
        "emit_sample_curves": int,
        "compare_structure": str,
    },
    "prior": {
        "p_branch": float,
        "kernel_weights": _parse_weights,
        "operator_weights": _parse_weights,
        "max_depth": int,
    },
    "schedule": {
        "sweeps": int,
        "hyper_steps": int,
        "structure_steps": int,
        "step_size": float,
        "chains": int,
        "seed": int,
        "burn_in": float,
        "hyper_mode": str,
        "size_correction": _parse_bool,
    },
    "cluster": {
        "concentration": float,
    },
}


def _convert(section: str, key: str, raw: str):
    fields = _SECTION_FIELDS.get(section)
    if fields is None:
        raise ConfigError(f"unknown config section [{section}]")
    parser = fields.get(key)
    if parser is None:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    try:
        return parser(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{section}] {key}: {err}") from None


def _assemble(values: dict[str, dict]) -> RunConfig:
    try:
        prior = PriorConfig(**values["prior"])
        schedule = ScheduleConfig(**values["schedule"])
    except ValueError as err:
        raise ConfigError(str(err)) from None
    run = dict(values["run"])
    run["concentration"] = values["cluster"].get(
        "concentration", DEFAULT_CONCENTRATION
    )
    return RunConfig(prior=prior, schedule=schedule, **run)


def load_config(path=None, overrides: tuple[str, ...] = ()) -> RunConfig:
    """Build a RunConfig from an optional INI file plus overrides.

    Overrides use the form `section.key=value` and pass through the
    same parsing and validation paths as the file. Unknown sections or
    keys are errors rather than silently ignored.
    """
    values: dict[str, dict] = {name: {} for name in _SECTION_FIELDS}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        try:
            with open(path) as handle:
                parser.read_file(handle)
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                values.setdefault(section, {})
                if section not in _SECTION_FIELDS:
                    raise ConfigError(f"unknown config section [{section}]")
                values[section][key] = _convert(section, key, raw)
    for override in overrides:
        if "=" not in override or "." not in override.split("=", 1)[0]:
            raise ConfigError(
                f"override {override!r} must look like section.key=value"
            )
        address, raw = override.split("=", 1)
        section, key = address.split(".", 1)
        section = section.strip()
        key = key.strip()
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        values[section][key] = _convert(section, key, raw)
    return _assemble(values)


def with_task(cfg: RunConfig, task: str) -> RunConfig:
    return replace(cfg, task=task)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, schedule=replace(cfg.schedule, seed=seed))


def with_chains(cfg: RunConfig, chains: int) -> RunConfig:
    try:
        schedule = replace(cfg.schedule, chains=chains)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return replace(cfg, schedule=schedule)
