"""
simulator.py - Year sweep over weekdays x scenarios x schemes

For every candidate date:
- slice the scenario horizon from the net-load series (day: 00:00-24:00,
  night: 12:00 to 12:00 next day)
- sample the day's vehicles once from a seed derived from (config.seed, date);
  day and night share the vehicles and carry the same energy requests
- run every requested scheme on identical sessions and emit DailyResult rows

A failing (date, scenario) is logged, recorded as a DayFailure and dropped
as a whole, so results always hold complete scheme sets. Days are independent
and may run in a process pool; results come back in date order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from direct_scheduler import ChargingProfile, direct_run
from dispatch_engine import DispatchSchedule, dispatch
from ev_sessions import (
    HORIZON_HOURS,
    HORIZON_START_HOUR,
    ChargingSession,
    ScenarioKind,
    ScenarioSpec,
    VehicleModel,
    align_energy,
    load_catalog,
    sample_sessions,
)
from green_scheduler import GreenSolution, green_run
from grid_errors import DomainError, GridShiftError, RunError
from grid_model import Fleet, LoadSeries, load_fleet, load_series
from sim_config import RunConfig


@dataclass(frozen=True)
class DailyResult:
    """One (date, scenario, scheme) outcome."""
    date: date
    scenario: str
    scheme: str
    emissions_ton: float
    cost: float
    residual_mwh: float
    aggregate_profile: Tuple[float, ...]
    base_emissions_ton: float = 0.0
    used_direct_incumbent: bool = False

    @property
    def ev_emissions_ton(self) -> float:
        """Emissions attributable to charging: total minus dispatching the net load alone."""
        return self.emissions_ton - self.base_emissions_ton

    def to_row(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "scenario": self.scenario,
            "scheme": self.scheme,
            "emissions_ton": self.emissions_ton,
            "cost": self.cost,
            "residual_mwh": self.residual_mwh,
            "base_emissions_ton": self.base_emissions_ton,
        }

    def to_record(self) -> dict:
        record = self.to_row()
        record["aggregate_profile"] = list(self.aggregate_profile)
        record["used_direct_incumbent"] = self.used_direct_incumbent
        return record

    @classmethod
    def from_record(cls, record: dict) -> "DailyResult":
        return cls(
            date=date.fromisoformat(str(record["date"])),
            scenario=str(record["scenario"]),
            scheme=str(record["scheme"]),
            emissions_ton=float(record["emissions_ton"]),
            cost=float(record["cost"]),
            residual_mwh=float(record["residual_mwh"]),
            aggregate_profile=tuple(float(v) for v in record.get("aggregate_profile", ())),
            base_emissions_ton=float(record.get("base_emissions_ton", 0.0)),
            used_direct_incumbent=bool(record.get("used_direct_incumbent", False)),
        )


@dataclass(frozen=True)
class DayFailure:
    date: date
    scenario: str
    reason: str


@dataclass(frozen=True)
class SimulationInputs:
    """Everything read from disk, shared read-only by all days."""
    fleet: Fleet
    load: LoadSeries
    catalog: Tuple[VehicleModel, ...]


@dataclass(frozen=True, eq=False)
class DayRun:
    """Full artifacts of one scheme on one (date, scenario)."""
    date: date
    scenario: str
    scheme: str
    load: LoadSeries
    sessions: Tuple[ChargingSession, ...]
    schedule: DispatchSchedule
    profile: ChargingProfile
    base_emissions_ton: float
    green: Optional[GreenSolution] = None

    @property
    def aggregate(self) -> np.ndarray:
        return self.green.aggregate if self.green is not None else self.profile.aggregate

    def to_result(self) -> DailyResult:
        return DailyResult(
            date=self.date,
            scenario=self.scenario,
            scheme=self.scheme,
            emissions_ton=self.schedule.total_emissions,
            cost=self.schedule.total_cost,
            residual_mwh=self.green.dispersal_residual if self.green is not None else 0.0,
            aggregate_profile=tuple(float(v) for v in self.aggregate),
            base_emissions_ton=self.base_emissions_ton,
            used_direct_incumbent=self.green is not None and self.green.used_direct_incumbent,
        )


def load_inputs(config: RunConfig) -> SimulationInputs:
    return SimulationInputs(
        fleet=load_fleet(config.fleet_path),
        load=load_series(config.load_path),
        catalog=tuple(load_catalog(config.catalog_path)),
    )


# ============================================================================
# ONE DATE
# ============================================================================

def horizon_start(day: date, scenario: str) -> datetime:
    return datetime(day.year, day.month, day.day) + timedelta(hours=HORIZON_START_HOUR[ScenarioKind(scenario)])


def date_seed(seed: int, day: date) -> int:
    """Per-date sampling seed, independent of which other dates are run."""
    return int(np.random.SeedSequence([seed, day.toordinal()]).generate_state(1)[0])


def sample_day(config: RunConfig, catalog: Sequence[VehicleModel], day: date) -> Dict[str, List[ChargingSession]]:
    """Sessions of both scenarios for `day`, aligned to equal energy requests."""
    seed = date_seed(config.seed, day)
    day_sessions = sample_sessions(catalog, ScenarioSpec.for_kind(ScenarioKind.DAY, config.n_vehicles, seed))
    night_sessions = sample_sessions(catalog, ScenarioSpec.for_kind(ScenarioKind.NIGHT, config.n_vehicles, seed))
    day_sessions, night_sessions = align_energy(day_sessions, night_sessions)
    return {ScenarioKind.DAY.value: day_sessions, ScenarioKind.NIGHT.value: night_sessions}


def run_scheme(
    config: RunConfig,
    fleet: Fleet,
    load: LoadSeries,
    sessions: Sequence[ChargingSession],
    scheme: str,
    day: date,
    scenario: str,
    base_emissions: Optional[float] = None,
) -> DayRun:
    if base_emissions is None:
        base_emissions = dispatch(fleet, load.array).total_emissions
    green = None
    if scheme == "direct":
        schedule, profile = direct_run(fleet, load, sessions)
    elif scheme == "emission":
        green = green_run(fleet, load, sessions, backend=config.backend, delta=config.delta_mwh)
        schedule, profile = green.schedule, green.profile
    else:
        raise DomainError(f"unknown scheme '{scheme}'")
    return DayRun(
        date=day,
        scenario=scenario,
        scheme=scheme,
        load=load,
        sessions=tuple(sessions),
        schedule=schedule,
        profile=profile,
        base_emissions_ton=base_emissions,
        green=green,
    )


def simulate_date(
    config: RunConfig,
    inputs: SimulationInputs,
    day: date,
    scenarios: Sequence[str],
) -> Tuple[List[DailyResult], List[DayFailure]]:
    results: List[DailyResult] = []
    failures: List[DayFailure] = []
    sessions_by_scenario = sample_day(config, inputs.catalog, day)
    for scenario in scenarios:
        load = None
        try:
            load = inputs.load.window(horizon_start(day, scenario), HORIZON_HOURS)
            base = dispatch(inputs.fleet, load.array).total_emissions
            runs = [
                run_scheme(config, inputs.fleet, load, sessions_by_scenario[scenario], scheme, day, scenario, base)
                for scheme in config.schemes
            ]
        except GridShiftError as e:
            reason = str(e)
            hour = getattr(e, "hour", None)
            if load is not None and hour is not None:
                reason = f"{reason} (at {load.timestamp_at(hour):%Y-%m-%d %H:%M})"
            logger.warning(f"[SIMULATOR] {day.isoformat()} {scenario} skipped: {reason}")
            failures.append(DayFailure(date=day, scenario=scenario, reason=reason))
            continue
        results.extend(run.to_result() for run in runs)
    return results, failures


def _simulate_date_task(args: Tuple[RunConfig, SimulationInputs, date, Tuple[str, ...]]):
    return simulate_date(*args)


# ============================================================================
# YEAR SWEEP
# ============================================================================

@dataclass
class YearRunner:
    """Runs every candidate date of a config and keeps the failures it saw."""
    config: RunConfig
    inputs: SimulationInputs
    failures: List[DayFailure] = field(default_factory=list)

    def candidate_days(self) -> List[Tuple[date, Tuple[str, ...]]]:
        """(date, scenarios whose horizon the load series covers), in date order."""
        series = self.inputs.load
        first = self.config.start_date or series.start.date()
        last = self.config.end_date or (series.end - timedelta(hours=1)).date()
        for bound in (first, last):
            if not series.covers(horizon_start(bound, "day"), HORIZON_HOURS):
                raise DomainError(
                    f"load series {series.start.isoformat()}..{series.end.isoformat()} "
                    f"does not cover {bound.isoformat()}"
                )

        days = []
        current = first
        while current <= last:
            if not (self.config.weekdays_only and current.weekday() >= 5):
                covered = tuple(
                    s for s in self.config.scenarios
                    if series.covers(horizon_start(current, s), HORIZON_HOURS)
                )
                if len(covered) < len(self.config.scenarios):
                    logger.info(f"[SIMULATOR] {current.isoformat()}: night horizon runs past the series, day only")
                if covered:
                    days.append((current, covered))
            current += timedelta(days=1)
        return days

    def run(self) -> List[DailyResult]:
        days = self.candidate_days()
        logger.info(
            f"[SIMULATOR] {len(days)} candidate date(s), scenarios={','.join(self.config.scenarios)}, "
            f"schemes={','.join(self.config.schemes)}, workers={self.config.workers}"
        )
        tasks = [(self.config, self.inputs, day, scenarios) for day, scenarios in days]
        if self.config.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                outcomes = list(pool.map(_simulate_date_task, tasks))
        else:
            outcomes = [_simulate_date_task(task) for task in tasks]

        results: List[DailyResult] = []
        self.failures = []
        for (day, _), (day_results, day_failures) in zip(days, outcomes):
            results.extend(day_results)
            self.failures.extend(day_failures)
            if day_results:
                logger.debug(f"[SIMULATOR] {day.isoformat()} done ({len(day_results)} rows)")

        attempted = sum(len(scenarios) for _, scenarios in days)
        if attempted and len(self.failures) == attempted:
            raise RunError(f"all {attempted} (date, scenario) runs failed; first: {self.failures[0].reason}")
        fallbacks = sum(r.used_direct_incumbent for r in results)
        if fallbacks:
            logger.warning(f"[SIMULATOR] {fallbacks} emission-scheme run(s) kept the direct profile")
        logger.info(f"[SIMULATOR] finished: {len(results)} result rows, {len(self.failures)} skipped")
        return results


def run_year(config: RunConfig, inputs: Optional[SimulationInputs] = None) -> List[DailyResult]:
    runner = YearRunner(config=config, inputs=inputs or load_inputs(config))
    return runner.run()
