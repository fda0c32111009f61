"""
sim_config.py - Run configuration for gridshift

Configuration hierarchy: defaults → key=value file → GRIDSHIFT_* environment → CLI flags

The file is a flat `KEY=value` list (same keys as the environment, without
the prefix), located by `--config` or GRIDSHIFT_CONFIG. See
data/gridshift.env.example for every key.
"""

from __future__ import annotations

import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from grid_errors import ConfigError
from grid_model import HourWindow

DATA_DIR = Path(__file__).resolve().parent / "data"

ENV_PREFIX = "GRIDSHIFT_"
CONFIG_ENV = "GRIDSHIFT_CONFIG"

SCENARIO_CHOICES = ("day", "night")
SCHEME_CHOICES = ("direct", "emission")
BACKEND_CHOICES = ("dp", "exact")

# file/env key -> RunConfig field
KEYS = {
    "FLEET_PATH": "fleet_path",
    "LOAD_PATH": "load_path",
    "CATALOG_PATH": "catalog_path",
    "N_VEHICLES": "n_vehicles",
    "SEED": "seed",
    "SCENARIOS": "scenarios",
    "SCHEMES": "schemes",
    "DELTA_MWH": "delta_mwh",
    "BACKEND": "backend",
    "DAY_WINDOW": "day_window",
    "THRESHOLD_MW": "threshold_mw",
    "OUTPUT_DIR": "output_dir",
    "WEEKDAYS_ONLY": "weekdays_only",
    "START_DATE": "start_date",
    "END_DATE": "end_date",
    "HISTOGRAM_BIN_PCT": "histogram_bin_pct",
    "EMISSIONS_BIN_TON": "emissions_bin_ton",
    "SIGNIFICANCE_TON": "significance_ton",
    "WORKERS": "workers",
}


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip().lower() for part in value.split(",") if part.strip()]
    return value


class RunConfig(BaseModel):
    """Everything one simulation run needs; immutable once validated."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    fleet_path: Path = DATA_DIR / "synthetic_fleet.csv"
    load_path: Path = DATA_DIR / "synthetic_net_load.csv"
    catalog_path: Path = DATA_DIR / "ev_catalog.csv"
    n_vehicles: int = 25000
    seed: int = 2013
    scenarios: Tuple[str, ...] = SCENARIO_CHOICES
    schemes: Tuple[str, ...] = SCHEME_CHOICES
    delta_mwh: float = 1.0
    backend: str = "dp"
    day_window: HourWindow = HourWindow(7, 19)
    threshold_mw: float = 20000.0
    output_dir: Path = Path("output")
    weekdays_only: bool = True
    start_date: Optional[date] = None
    end_date: Optional[date] = None
    histogram_bin_pct: float = 1.0
    emissions_bin_ton: float = 10.0
    significance_ton: float = 0.01
    workers: int = 1

    @field_validator("scenarios", "schemes", mode="before")
    @classmethod
    def _parse_lists(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("backend", mode="before")
    @classmethod
    def _lower_backend(cls, value: Any) -> Any:
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("day_window", mode="before")
    @classmethod
    def _parse_window(cls, value: Any) -> Any:
        if isinstance(value, str):
            return HourWindow.parse(value)
        return value

    @field_validator("scenarios")
    @classmethod
    def _check_scenarios(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return _check_choices("scenarios", value, SCENARIO_CHOICES)

    @field_validator("schemes")
    @classmethod
    def _check_schemes(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return _check_choices("schemes", value, SCHEME_CHOICES)

    @field_validator("backend")
    @classmethod
    def _check_backend(cls, value: str) -> str:
        if value not in BACKEND_CHOICES:
            raise ValueError(f"backend must be one of {', '.join(BACKEND_CHOICES)}, got '{value}'")
        return value

    @field_validator("fleet_path", "load_path", "catalog_path")
    @classmethod
    def _path_exists(cls, value: Path) -> Path:
        if not value.exists():
            raise ValueError(f"file not found: {value}")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "RunConfig":
        self.day_window.validate()
        if self.n_vehicles < 0:
            raise ValueError(f"n_vehicles must be >= 0, got {self.n_vehicles}")
        for name in ("delta_mwh", "threshold_mw", "histogram_bin_pct", "emissions_bin_ton"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.significance_ton < 0:
            raise ValueError(f"significance_ton must be >= 0, got {self.significance_ton}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.start_date and self.end_date and self.start_date > self.end_date:
            raise ValueError(f"start_date {self.start_date} is after end_date {self.end_date}")
        return self

    def to_dict(self) -> dict:
        """JSON-friendly snapshot for logging and run records."""
        data = self.model_dump(mode="json")
        data["day_window"] = str(self.day_window)
        return data

    def __str__(self) -> str:
        return (
            f"RunConfig(n_vehicles={self.n_vehicles}, seed={self.seed}, "
            f"scenarios={','.join(self.scenarios)}, schemes={','.join(self.schemes)}, "
            f"backend={self.backend}, delta={self.delta_mwh} MWh, out={self.output_dir})"
        )


def _check_choices(name: str, value: Tuple[str, ...], choices: Tuple[str, ...]) -> Tuple[str, ...]:
    if not value:
        raise ValueError(f"{name} must not be empty")
    unknown = [v for v in value if v not in choices]
    if unknown:
        raise ValueError(f"{name} must be a subset of {', '.join(choices)}, got {', '.join(unknown)}")
    # keep canonical order so output files do not depend on how the list was typed
    return tuple(c for c in choices if c in value)


def _read_config_file(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = dotenv_values(path)
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        name = key.upper()
        if name.startswith(ENV_PREFIX):
            name = name[len(ENV_PREFIX):]
        if name not in KEYS:
            raise ConfigError(f"{path}: unknown key '{key}'")
        if value is not None and value.strip() != "":
            values[KEYS[name]] = value.strip()
    return values


def _read_environment(environ: Mapping[str, str]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key, name in KEYS.items():
        value = environ.get(ENV_PREFIX + key)
        if value is not None and value.strip() != "":
            values[name] = value.strip()
    return values


def _describe(error: ValidationError) -> str:
    parts: List[str] = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def load_config(
    config_path: Optional[Path | str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Build a RunConfig from the four layers.

    `overrides` uses RunConfig field names; None values mean "flag not given".
    """
    environ = os.environ if environ is None else environ
    values: Dict[str, Any] = {}

    path = config_path or environ.get(CONFIG_ENV)
    if path:
        values.update(_read_config_file(Path(path)))
        logger.debug(f"[CONFIG] read {len(values)} key(s) from {path}")

    values.update(_read_environment(environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_describe(e)}")
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}")
    logger.info(f"[CONFIG] {config}")
    return config
