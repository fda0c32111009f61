"""
grid_model.py - Generator fleet, net-load series and merit-order analytics

Holds the immutable grid inputs of the simulator:
- Generator / Fleet: dispatchable plants sorted into merit order
- LoadSeries: hourly net load (renewables already subtracted upstream)
- marginal emission curve and the "which plant is marginal at D" query
- low-generation-hour statistics and the hourly load histogram

All arithmetic is per 1-hour step, so MW and MWh are used interchangeably.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from grid_errors import (
    ContinuityError,
    DataValidationError,
    DomainError,
    ParseError,
    ReportIOError,
)

COAL_RAMP_FRACTION = 0.6

GENERATOR_COLUMNS = [
    "id",
    "fuel",
    "capacity_mw",
    "marginal_cost_usd_per_mwh",
    "emission_ton_per_mwh",
    "ramp_mw_per_h",
]
LOAD_COLUMNS = ["timestamp", "net_load_mw"]


class Fuel(str, Enum):
    """Fuel type of a dispatchable plant."""
    COAL = "coal"
    GAS = "gas"
    NUCLEAR = "nuclear"
    HYDRO = "hydro"
    OTHER = "other"


def default_ramp_limit(fuel: Fuel, capacity_mw: float) -> float:
    """Coal ramps 60% of capacity per hour; every other fuel ramps freely."""
    if fuel is Fuel.COAL:
        return COAL_RAMP_FRACTION * capacity_mw
    return capacity_mw


@dataclass(frozen=True)
class Generator:
    """One dispatchable plant with constant marginal cost and emission rate."""
    id: str
    fuel: Fuel
    capacity_mw: float
    marginal_cost: float
    emission_rate: float
    ramp_limit_mw: float

    def __post_init__(self):
        if not self.id:
            raise DataValidationError("generator id must not be empty")
        if not self.capacity_mw > 0:
            raise DataValidationError(f"{self.id}: capacity_mw must be > 0, got {self.capacity_mw}")
        if not self.marginal_cost >= 0:
            raise DataValidationError(f"{self.id}: marginal_cost must be >= 0, got {self.marginal_cost}")
        if not self.emission_rate >= 0:
            raise DataValidationError(f"{self.id}: emission_rate must be >= 0, got {self.emission_rate}")
        if not 0 < self.ramp_limit_mw <= self.capacity_mw:
            raise DataValidationError(
                f"{self.id}: ramp_limit_mw must be in (0, capacity_mw], got {self.ramp_limit_mw}"
            )

    @classmethod
    def create(
        cls,
        id: str,
        fuel: Fuel | str,
        capacity_mw: float,
        marginal_cost: float,
        emission_rate: float,
        ramp_limit_mw: Optional[float] = None,
    ) -> "Generator":
        """Build a generator, applying the fuel-specific ramp default when no ramp is given."""
        try:
            fuel = Fuel(fuel)
        except ValueError:
            raise DataValidationError(f"{id}: unknown fuel '{fuel}'")
        if ramp_limit_mw is None:
            ramp_limit_mw = default_ramp_limit(fuel, capacity_mw)
        return cls(
            id=id,
            fuel=fuel,
            capacity_mw=float(capacity_mw),
            marginal_cost=float(marginal_cost),
            emission_rate=float(emission_rate),
            ramp_limit_mw=float(ramp_limit_mw),
        )


def merit_order_key(gen: Generator) -> Tuple[float, float, str]:
    # equal cost: cleaner plant first, then id
    return (gen.marginal_cost, gen.emission_rate, gen.id)


@dataclass(frozen=True)
class Fleet:
    """
    Generators in merit order (ascending marginal cost).

    Use Fleet.from_generators() to build one; it sorts and checks id uniqueness.
    The numpy views below are read-only and indexed like `generators`.
    """
    generators: Tuple[Generator, ...] = ()

    def __post_init__(self):
        seen = set()
        for gen in self.generators:
            if gen.id in seen:
                raise DataValidationError(f"duplicate generator id '{gen.id}'")
            seen.add(gen.id)
        for left, right in zip(self.generators, self.generators[1:]):
            if merit_order_key(left) > merit_order_key(right):
                raise DataValidationError(
                    f"fleet not in merit order: '{left.id}' precedes '{right.id}'"
                )

    @classmethod
    def from_generators(cls, generators: Iterable[Generator]) -> "Fleet":
        return cls(generators=tuple(sorted(generators, key=merit_order_key)))

    def __len__(self) -> int:
        return len(self.generators)

    @property
    def ids(self) -> List[str]:
        return [g.id for g in self.generators]

    def _frozen_array(self, values: Sequence[float]) -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def capacities(self) -> np.ndarray:
        return self._frozen_array([g.capacity_mw for g in self.generators])

    @cached_property
    def ramp_limits(self) -> np.ndarray:
        return self._frozen_array([g.ramp_limit_mw for g in self.generators])

    @cached_property
    def marginal_costs(self) -> np.ndarray:
        return self._frozen_array([g.marginal_cost for g in self.generators])

    @cached_property
    def emission_rates(self) -> np.ndarray:
        return self._frozen_array([g.emission_rate for g in self.generators])

    @cached_property
    def cumulative_capacity(self) -> np.ndarray:
        return self._frozen_array(np.cumsum(self.capacities))

    @property
    def total_capacity_mw(self) -> float:
        if not self.generators:
            return 0.0
        return float(self.cumulative_capacity[-1])


class HourWindow(NamedTuple):
    """Half-open hour-of-day interval [start, end)."""
    start: int
    end: int

    def contains(self, hour_of_day: int) -> bool:
        return self.start <= hour_of_day < self.end

    @classmethod
    def parse(cls, text: str) -> "HourWindow":
        """Parse '7-19' into HourWindow(7, 19)."""
        try:
            start_text, end_text = text.split("-")
            window = cls(int(start_text), int(end_text))
        except ValueError:
            raise DomainError(f"hour window must look like '7-19', got '{text}'")
        window.validate()
        return window

    def validate(self) -> None:
        if not 0 <= self.start < self.end <= 24:
            raise DomainError(f"hour window must satisfy 0 <= start < end <= 24, got {self.start}-{self.end}")

    def __str__(self) -> str:
        return f"{self.start}-{self.end}"


DEFAULT_DAY_WINDOW = HourWindow(7, 19)


@dataclass(frozen=True)
class LoadSeries:
    """Contiguous hourly net load starting at `start` (MW per hour step)."""
    start: datetime
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise DataValidationError("load series must contain at least one hour")
        for index, value in enumerate(self.values):
            if not value >= 0:
                raise DataValidationError(f"net load must be >= 0, got {value}", row=index + 1)

    def __len__(self) -> int:
        return len(self.values)

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.asarray(self.values, dtype=float)
        arr.setflags(write=False)
        return arr

    @property
    def end(self) -> datetime:
        """Exclusive end timestamp."""
        return self.start + timedelta(hours=len(self.values))

    def timestamp_at(self, index: int) -> datetime:
        return self.start + timedelta(hours=index)

    def hours_of_day(self) -> np.ndarray:
        return (self.start.hour + np.arange(len(self.values))) % 24

    def covers(self, start: datetime, hours: int) -> bool:
        return start >= self.start and start + timedelta(hours=hours) <= self.end

    def window(self, start: datetime, hours: int) -> "LoadSeries":
        """Slice `hours` contiguous steps beginning at `start`."""
        if not self.covers(start, hours):
            raise DomainError(
                f"series {self.start.isoformat()}..{self.end.isoformat()} does not cover "
                f"{hours}h from {start.isoformat()}"
            )
        offset = int((start - self.start) / timedelta(hours=1))
        return LoadSeries(start=start, values=self.values[offset:offset + hours])

    @classmethod
    def from_values(cls, values: Iterable[float], start: Optional[datetime] = None) -> "LoadSeries":
        return cls(start=start or datetime(2013, 1, 1), values=tuple(float(v) for v in values))


@dataclass(frozen=True)
class EmissionCurvePoint:
    cumulative_capacity_mw: float
    marginal_emission_rate: float


@dataclass(frozen=True)
class ThresholdReport:
    """Low-generation statistics of a load series against a threshold."""
    threshold_mw: float
    day_window: HourWindow
    n_hours: int
    below_hours: int
    below_fraction: float
    below_in_window: int
    below_outside_window: int
    hours_in_window: int
    hours_outside_window: int
    mean_in_window_mw: Optional[float]
    mean_outside_window_mw: Optional[float]

    def to_dict(self) -> dict:
        return {
            "threshold_mw": self.threshold_mw,
            "day_window": str(self.day_window),
            "n_hours": self.n_hours,
            "below_hours": self.below_hours,
            "below_fraction": self.below_fraction,
            "below_in_window": self.below_in_window,
            "below_outside_window": self.below_outside_window,
            "hours_in_window": self.hours_in_window,
            "hours_outside_window": self.hours_outside_window,
            "mean_in_window_mw": self.mean_in_window_mw,
            "mean_outside_window_mw": self.mean_outside_window_mw,
        }


# ============================================================================
# CSV INGESTION
# ============================================================================

def read_checked_csv(path: Path, expected_columns: List[str]) -> pd.DataFrame:
    """Read a CSV as strings and check the header exactly."""
    path = Path(path)
    if not path.exists():
        raise ReportIOError("input file not found", path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: file is empty, expected header {','.join(expected_columns)}")
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}")
    except OSError as e:
        raise ReportIOError(f"cannot read input ({e})", path)
    columns = [c.strip() for c in frame.columns]
    if columns != expected_columns:
        raise ParseError(
            f"{path}: header must be {','.join(expected_columns)}, got {','.join(columns)}"
        )
    frame.columns = columns
    return frame


def parse_float(text: str, column: str, row: int) -> float:
    """Float cell of a string-typed CSV frame; ParseError names the row."""
    try:
        return float(text.strip())
    except (ValueError, AttributeError):
        raise ParseError(f"column '{column}' is not a number: '{text}'", row=row)


def load_fleet(path: Path | str) -> Fleet:
    """
    Read a generators CSV into a merit-ordered Fleet.

    An empty ramp field falls back to the fuel default (0.6 x capacity for coal).
    Rows are numbered from 1 (the first line after the header).
    """
    frame = read_checked_csv(Path(path), GENERATOR_COLUMNS)
    generators: List[Generator] = []
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 1
        ramp_text = record["ramp_mw_per_h"].strip()
        ramp = parse_float(ramp_text, "ramp_mw_per_h", row) if ramp_text else None
        try:
            generators.append(Generator.create(
                id=record["id"].strip(),
                fuel=record["fuel"].strip().lower(),
                capacity_mw=parse_float(record["capacity_mw"], "capacity_mw", row),
                marginal_cost=parse_float(record["marginal_cost_usd_per_mwh"], "marginal_cost_usd_per_mwh", row),
                emission_rate=parse_float(record["emission_ton_per_mwh"], "emission_ton_per_mwh", row),
                ramp_limit_mw=ramp,
            ))
        except ParseError:
            raise
        except DataValidationError as e:
            raise DataValidationError(str(e), row=row)
    fleet = Fleet.from_generators(generators)
    logger.info(
        f"[GRID-MODEL] Loaded fleet from {path}: J={len(fleet)}, "
        f"capacity={fleet.total_capacity_mw:.1f} MW"
    )
    return fleet


def load_series(path: Path | str) -> LoadSeries:
    """Read a `timestamp,net_load_mw` CSV; timestamps must step by exactly one hour."""
    frame = read_checked_csv(Path(path), LOAD_COLUMNS)
    if frame.empty:
        raise DataValidationError(f"{path}: load series has no rows")

    values: List[float] = []
    stamps: List[pd.Timestamp] = []
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 1
        try:
            stamp = pd.Timestamp(record["timestamp"].strip())
        except (ValueError, TypeError):
            raise ParseError(f"bad timestamp '{record['timestamp']}'", row=row)
        if stamp is pd.NaT:
            raise ParseError(f"bad timestamp '{record['timestamp']}'", row=row)
        value = parse_float(record["net_load_mw"], "net_load_mw", row)
        if not value >= 0:
            raise DataValidationError(f"net load must be >= 0, got {value}", row=row)
        stamps.append(stamp)
        values.append(value)

    one_hour = pd.Timedelta(hours=1)
    for index in range(1, len(stamps)):
        step = stamps[index] - stamps[index - 1]
        if step != one_hour:
            kind = "duplicate timestamp" if step == pd.Timedelta(0) else f"step of {step}"
            raise ContinuityError(f"{kind} at {stamps[index].isoformat()}", index=index)

    series = LoadSeries(start=stamps[0].to_pydatetime(), values=tuple(values))
    logger.info(
        f"[GRID-MODEL] Loaded net load from {path}: {len(series)} hours "
        f"starting {series.start.isoformat()}"
    )
    return series


# ============================================================================
# MERIT-ORDER ANALYTICS
# ============================================================================

def marginal_emission_curve(fleet: Fleet) -> List[EmissionCurvePoint]:
    """Step curve: k-th point is (capacity of plants 1..k, emission rate of plant k)."""
    if len(fleet) == 0:
        raise DomainError("marginal emission curve needs a non-empty fleet")
    return [
        EmissionCurvePoint(float(cumulative), gen.emission_rate)
        for cumulative, gen in zip(fleet.cumulative_capacity, fleet.generators)
    ]


def marginal_rate_at(curve: Sequence[EmissionCurvePoint], demand_mw: float) -> float:
    """Emission rate of the plant that is marginal when demand is `demand_mw`."""
    if not curve:
        raise DomainError("empty emission curve")
    total = curve[-1].cumulative_capacity_mw
    if not 0 < demand_mw <= total:
        raise DomainError(f"demand {demand_mw} outside (0, {total}]")
    index = bisect_left([p.cumulative_capacity_mw for p in curve], demand_mw)
    return curve[index].marginal_emission_rate


def low_generation_stats(
    series: LoadSeries,
    threshold_mw: float,
    day_window: HourWindow = DEFAULT_DAY_WINDOW,
) -> ThresholdReport:
    """Share of hours below `threshold_mw`, split by whether they fall in `day_window`."""
    if len(series) == 0:
        raise DomainError("low-generation statistics need a non-empty series")
    if not threshold_mw > 0:
        raise DomainError(f"threshold_mw must be > 0, got {threshold_mw}")
    day_window = HourWindow(*day_window)
    day_window.validate()

    values = series.array
    hours = series.hours_of_day()
    in_window = (hours >= day_window.start) & (hours < day_window.end)
    below = values < threshold_mw

    n_hours = len(values)
    below_hours = int(below.sum())
    inside = values[in_window]
    outside = values[~in_window]
    report = ThresholdReport(
        threshold_mw=float(threshold_mw),
        day_window=day_window,
        n_hours=n_hours,
        below_hours=below_hours,
        below_fraction=below_hours / n_hours,
        below_in_window=int((below & in_window).sum()),
        below_outside_window=int((below & ~in_window).sum()),
        hours_in_window=int(in_window.sum()),
        hours_outside_window=int((~in_window).sum()),
        mean_in_window_mw=float(inside.mean()) if inside.size else None,
        mean_outside_window_mw=float(outside.mean()) if outside.size else None,
    )
    logger.debug(
        f"[GRID-MODEL] threshold={threshold_mw} below={below_hours}/{n_hours} "
        f"in_window={report.below_in_window} outside={report.below_outside_window}"
    )
    return report


def load_histogram(series: LoadSeries, bin_mw: float = 1000.0) -> List[Tuple[float, float, int]]:
    """Histogram of hourly load with bins aligned to multiples of `bin_mw`."""
    if not bin_mw > 0:
        raise DomainError(f"bin width must be > 0, got {bin_mw}")
    values = series.array
    first = np.floor(values.min() / bin_mw) * bin_mw
    last = (np.floor(values.max() / bin_mw) + 1) * bin_mw
    edges = np.arange(first, last + bin_mw / 2, bin_mw)
    counts, edges = np.histogram(values, bins=edges)
    return [
        (float(left), float(right), int(count))
        for left, right, count in zip(edges[:-1], edges[1:], counts)
    ]
