"""
ev_sessions.py - Charging sessions and the day/night session sampler

A charging session is the task [arrival, departure, energy, max_rate] of one
vehicle, expressed in hour indices of a 24-hour simulation horizon:

- day scenario:   horizon starts 00:00, arrive 07-10, leave 16-20
- night scenario: horizon starts 12:00, arrive 16-20, leave 07-10 next day

Shifting the night horizon to noon keeps every window contiguous, so no index
ever wraps around midnight. Catalog values are kWh/kW; sessions store MWh/MW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from atomic_io import write_frame_atomic
from grid_errors import ContractViolation, DataValidationError, DomainError, ParseError
from grid_model import parse_float, read_checked_csv

HORIZON_HOURS = 24
MAX_RESAMPLE_ATTEMPTS = 100
SHARE_TOLERANCE = 1e-9
ENERGY_TOLERANCE = 1e-9  # MWh, absorbs window x rate rounding

SESSION_COLUMNS = ["vehicle_id", "arrival_hour", "departure_hour", "energy_mwh", "max_rate_mw"]
CATALOG_COLUMNS = ["name", "battery_kwh", "max_rate_kw", "market_share"]


@dataclass(frozen=True)
class ChargingSession:
    """One vehicle's charging task; hours are indices into the simulation horizon."""
    vehicle_id: str
    arrival: int
    departure: int
    energy_request: float
    max_rate: float

    def __post_init__(self):
        if not self.arrival < self.departure:
            raise DataValidationError(
                f"{self.vehicle_id}: arrival {self.arrival} must be before departure {self.departure}"
            )
        if not self.max_rate > 0:
            raise DataValidationError(f"{self.vehicle_id}: max_rate must be > 0, got {self.max_rate}")
        if not 0 < self.energy_request <= self.window_capacity + ENERGY_TOLERANCE:
            raise DataValidationError(
                f"{self.vehicle_id}: energy_request {self.energy_request} must be in "
                f"(0, {self.window_capacity}] (window x max_rate)"
            )

    @property
    def window_hours(self) -> int:
        return self.departure - self.arrival

    @property
    def window_capacity(self) -> float:
        return self.window_hours * self.max_rate


@dataclass(frozen=True)
class VehicleModel:
    name: str
    battery_capacity_kwh: float
    max_rate_kw: float
    market_share: float

    def __post_init__(self):
        if not self.battery_capacity_kwh > 0:
            raise DataValidationError(f"{self.name}: battery capacity must be > 0")
        if not self.max_rate_kw > 0:
            raise DataValidationError(f"{self.name}: max rate must be > 0")
        if not 0 <= self.market_share <= 1:
            raise DataValidationError(f"{self.name}: market share must be in [0, 1]")


class ScenarioKind(str, Enum):
    DAY = "day"
    NIGHT = "night"


# (arrival window, departure window) in hour of day; night departures are next day
DEFAULT_WINDOWS = {
    ScenarioKind.DAY: ((7.0, 10.0), (16.0, 20.0)),
    ScenarioKind.NIGHT: ((16.0, 20.0), (7.0, 10.0)),
}
HORIZON_START_HOUR = {ScenarioKind.DAY: 0, ScenarioKind.NIGHT: 12}


@dataclass(frozen=True)
class ScenarioSpec:
    """Sampling parameters for one scenario; windows are hour-of-day ranges."""
    kind: ScenarioKind
    n_vehicles: int
    arrival_window: Tuple[float, float]
    departure_window: Tuple[float, float]
    seed: int

    def __post_init__(self):
        if self.n_vehicles < 0:
            raise DomainError(f"n_vehicles must be >= 0, got {self.n_vehicles}")
        for name, (low, high) in (("arrival", self.arrival_window), ("departure", self.departure_window)):
            if not 0 <= low < high <= 24:
                raise DomainError(f"{name} window must satisfy 0 <= start < end <= 24, got {low}-{high}")

    @classmethod
    def for_kind(cls, kind: ScenarioKind | str, n_vehicles: int, seed: int) -> "ScenarioSpec":
        kind = ScenarioKind(kind)
        arrival, departure = DEFAULT_WINDOWS[kind]
        return cls(kind=kind, n_vehicles=n_vehicles, arrival_window=arrival, departure_window=departure, seed=seed)

    @property
    def horizon_start_hour(self) -> int:
        return HORIZON_START_HOUR[self.kind]

    def to_horizon_hour(self, hour_of_day: np.ndarray) -> np.ndarray:
        """Map hour-of-day draws onto horizon positions (night horizon wraps at noon)."""
        position = hour_of_day - self.horizon_start_hour
        return np.where(position < 0, position + 24, position)


def validate_catalog(catalog: Sequence[VehicleModel]) -> None:
    if not catalog:
        raise DataValidationError("vehicle catalog is empty")
    total = math.fsum(model.market_share for model in catalog)
    if abs(total - 1.0) > SHARE_TOLERANCE:
        raise DataValidationError(f"catalog market shares sum to {total!r}, expected 1")


def load_catalog(path: Path | str) -> List[VehicleModel]:
    """Read `name,battery_kwh,max_rate_kw,market_share` rows."""
    frame = read_checked_csv(Path(path), CATALOG_COLUMNS)
    catalog = []
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 1
        try:
            catalog.append(VehicleModel(
                name=record["name"].strip(),
                battery_capacity_kwh=parse_float(record["battery_kwh"], "battery_kwh", row),
                max_rate_kw=parse_float(record["max_rate_kw"], "max_rate_kw", row),
                market_share=parse_float(record["market_share"], "market_share", row),
            ))
        except ParseError:
            raise
        except DataValidationError as e:
            raise DataValidationError(str(e), row=row)
    validate_catalog(catalog)
    logger.info(f"[EV-SESSIONS] Loaded catalog from {path}: {len(catalog)} models")
    return catalog


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5).astype(int)


def draw_model_indices(catalog: Sequence[VehicleModel], n: int, seed: int) -> np.ndarray:
    """Catalog index of each of `n` vehicles, drawn from the share-weighted multinomial."""
    model_seq = np.random.SeedSequence(seed).spawn(3)[0]
    shares = np.array([m.market_share for m in catalog], dtype=float)
    return np.random.default_rng(model_seq).choice(len(catalog), size=n, p=shares / shares.sum())


def sample_sessions(catalog: Sequence[VehicleModel], spec: ScenarioSpec) -> List[ChargingSession]:
    """
    Draw `spec.n_vehicles` sessions.

    Models come from the share-weighted multinomial; arrival and departure are
    uniform over their windows and rounded to the nearest hour. Model draws use
    their own RNG stream, so a day and a night spec with the same seed get the
    same vehicles. Energy request is min(battery, window x rate).
    """
    validate_catalog(catalog)
    n = spec.n_vehicles
    if n == 0:
        return []

    _, arrival_seq, departure_seq = np.random.SeedSequence(spec.seed).spawn(3)
    arrival_rng = np.random.default_rng(arrival_seq)
    departure_rng = np.random.default_rng(departure_seq)

    model_index = draw_model_indices(catalog, n, spec.seed)

    def draw_times(size: int) -> Tuple[np.ndarray, np.ndarray]:
        arrival = spec.to_horizon_hour(arrival_rng.uniform(*spec.arrival_window, size=size))
        departure = spec.to_horizon_hour(departure_rng.uniform(*spec.departure_window, size=size))
        return _round_half_up(arrival), _round_half_up(departure)

    arrivals, departures = draw_times(n)
    attempts = 0
    collapsed = np.flatnonzero(departures <= arrivals)
    while collapsed.size:
        attempts += 1
        if attempts > MAX_RESAMPLE_ATTEMPTS:
            raise DomainError(
                f"{collapsed.size} vehicle(s) still have departure <= arrival after "
                f"{MAX_RESAMPLE_ATTEMPTS} resamples; widen the windows"
            )
        arrivals[collapsed], departures[collapsed] = draw_times(collapsed.size)
        collapsed = collapsed[departures[collapsed] <= arrivals[collapsed]]
    if attempts:
        logger.debug(f"[EV-SESSIONS] resampled collapsed windows in {attempts} round(s)")

    width = max(5, len(str(n - 1)))
    sessions = []
    for i in range(n):
        model = catalog[model_index[i]]
        battery = model.battery_capacity_kwh / 1000.0
        rate = model.max_rate_kw / 1000.0
        arrival, departure = int(arrivals[i]), int(departures[i])
        energy = min(battery, (departure - arrival) * rate)
        session = ChargingSession(
            vehicle_id=f"ev{i:0{width}d}",
            arrival=arrival,
            departure=departure,
            energy_request=energy,
            max_rate=rate,
        )
        if session.energy_request > battery or session.energy_request > session.window_capacity:
            raise ContractViolation(f"{session.vehicle_id}: sampled energy exceeds battery or window")
        sessions.append(session)

    logger.debug(
        f"[EV-SESSIONS] sampled {n} {spec.kind.value} sessions (seed={spec.seed}), "
        f"total energy {sum(s.energy_request for s in sessions):.3f} MWh"
    )
    return sessions


def align_energy(
    first: Sequence[ChargingSession],
    second: Sequence[ChargingSession],
) -> Tuple[List[ChargingSession], List[ChargingSession]]:
    """
    Give the same vehicles the same energy request in two scenarios.

    Both lists must describe the same vehicles (same ids, same order); each
    vehicle gets the smaller of its two requests, which is deliverable in both
    windows. Used to compare day and night on equal total demand.
    """
    if [s.vehicle_id for s in first] != [s.vehicle_id for s in second]:
        raise DomainError("session lists describe different vehicles")
    aligned_first, aligned_second = [], []
    for a, b in zip(first, second):
        if a.max_rate != b.max_rate:
            raise DomainError(f"{a.vehicle_id}: max rate differs between scenarios")
        energy = min(a.energy_request, b.energy_request)
        aligned_first.append(replace(a, energy_request=energy))
        aligned_second.append(replace(b, energy_request=energy))
    return aligned_first, aligned_second


def sessions_to_frame(sessions: Sequence[ChargingSession]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "vehicle_id": [s.vehicle_id for s in sessions],
            "arrival_hour": [s.arrival for s in sessions],
            "departure_hour": [s.departure for s in sessions],
            "energy_mwh": [float(s.energy_request) for s in sessions],
            "max_rate_mw": [float(s.max_rate) for s in sessions],
        },
        columns=SESSION_COLUMNS,
    )


def write_sessions(sessions: Sequence[ChargingSession], path: Path | str) -> Path:
    path = Path(path)
    write_frame_atomic(path, sessions_to_frame(sessions))
    logger.info(f"[EV-SESSIONS] Wrote {len(sessions)} sessions to {path}")
    return path


def _parse_int(text: str, column: str, row: int) -> int:
    try:
        return int(text.strip())
    except (ValueError, AttributeError):
        raise ParseError(f"column '{column}' is not an integer: '{text}'", row=row)


def read_sessions(path: Path | str) -> List[ChargingSession]:
    frame = read_checked_csv(Path(path), SESSION_COLUMNS)
    sessions = []
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 1
        try:
            sessions.append(ChargingSession(
                vehicle_id=record["vehicle_id"].strip(),
                arrival=_parse_int(record["arrival_hour"], "arrival_hour", row),
                departure=_parse_int(record["departure_hour"], "departure_hour", row),
                energy_request=parse_float(record["energy_mwh"], "energy_mwh", row),
                max_rate=parse_float(record["max_rate_mw"], "max_rate_mw", row),
            ))
        except ParseError:
            raise
        except DataValidationError as e:
            raise DataValidationError(str(e), row=row)
    return sessions


def total_energy(sessions: Sequence[ChargingSession]) -> float:
    return math.fsum(s.energy_request for s in sessions)


def check_horizon(sessions: Sequence[ChargingSession], horizon: int, context: Optional[str] = None) -> None:
    """Raise DomainError naming the first session that does not fit in [0, horizon)."""
    for s in sessions:
        if s.arrival < 0 or s.departure > horizon:
            where = f" ({context})" if context else ""
            raise DomainError(
                f"{s.vehicle_id}: window [{s.arrival}, {s.departure}) outside horizon [0, {horizon}){where}"
            )
