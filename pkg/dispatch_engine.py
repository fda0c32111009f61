"""
dispatch_engine.py - Merit-order dispatch with ramp limits

Clears hourly demand D(t) = L(t) + G(t) against the fleet stack:
- each generator's effective cap is min(P_j, q_j(t-1) + r_j); the first
  hour of a horizon is unconstrained by ramping (cap = P_j)
- cheaper generators fill to their effective cap before the next one starts
- a generator may not drop faster than r_j (floor max(q_j(t-1) - r_j, 0))

The one-hour kernel `fill_stack` is shared by dispatch() and the green
scheduler's optimizers, so every scheme is accounted with the same discipline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from atomic_io import write_frame_atomic
from grid_errors import DomainError, InfeasibleError
from grid_model import Fleet

TOL = 1e-6


@dataclass(frozen=True)
class DemandSeries:
    """Total hourly demand L(t) + G(t) in MWh."""
    values: Tuple[float, ...]

    def __post_init__(self):
        for hour, value in enumerate(self.values):
            if not value >= 0:
                raise DomainError(f"hour {hour}: demand must be >= 0, got {value}")

    @classmethod
    def of(cls, values: Iterable[float]) -> "DemandSeries":
        return cls(values=tuple(float(v) for v in values))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True, eq=False)
class DispatchSchedule:
    """
    Output matrix q (J x T, generators in merit order) with its totals.

    on_flags is canonicalized to q > TOL.
    """
    generator_ids: Tuple[str, ...]
    output: np.ndarray
    on_flags: np.ndarray
    total_cost: float
    total_emissions: float

    @property
    def horizon(self) -> int:
        return int(self.output.shape[1])

    def hourly_supply(self) -> np.ndarray:
        return self.output.sum(axis=0)

    def hourly_emissions(self, fleet: Fleet) -> np.ndarray:
        return fleet.emission_rates @ self.output

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "total_cost": self.total_cost,
            "total_emissions": self.total_emissions,
        }

    def __str__(self) -> str:
        return f"Schedule(T={self.horizon}, emissions={self.total_emissions:.3f} t, cost={self.total_cost:.2f})"


# ============================================================================
# ONE-HOUR KERNEL
# ============================================================================

def effective_bounds(fleet: Fleet, previous_output: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """(caps, floors) for the next hour given last hour's output (None = first hour)."""
    capacities = fleet.capacities
    if previous_output is None:
        return capacities.copy(), np.zeros_like(capacities)
    prev = np.asarray(previous_output, dtype=float)
    caps = np.minimum(capacities, prev + fleet.ramp_limits)
    floors = np.maximum(prev - fleet.ramp_limits, 0.0)
    return caps, floors


def fill_stack(
    fleet: Fleet,
    previous_output: Optional[np.ndarray],
    demands: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Greedy merit-order fill for a batch of candidate demands in one hour.

    Returns (outputs K x J, feasible K). A demand is infeasible when it exceeds
    the reachable capacity or when the fill leaves a unit below its ramp floor.
    """
    demands = np.atleast_1d(np.asarray(demands, dtype=float))
    caps, floors = effective_bounds(fleet, previous_output)
    cumulative = np.cumsum(caps)
    prior = cumulative - caps
    outputs = np.clip(demands[:, None] - prior[None, :], 0.0, caps[None, :])
    feasible = demands <= cumulative[-1] + TOL
    feasible &= np.all(outputs >= floors[None, :] - TOL, axis=1)
    return outputs, feasible


def _explain_infeasible(
    fleet: Fleet,
    previous_output: Optional[np.ndarray],
    demand: float,
    outputs: np.ndarray,
    hour: Optional[int],
) -> InfeasibleError:
    caps, floors = effective_bounds(fleet, previous_output)
    reachable = float(caps.sum())
    if demand > reachable + TOL:
        return InfeasibleError(
            f"demand {demand:.6f} MWh exceeds reachable capacity {reachable:.6f} MWh",
            hour=hour,
        )
    short = np.flatnonzero(outputs < floors - TOL)
    j = int(short[0])
    return InfeasibleError(
        f"generator '{fleet.generators[j].id}' would drop to {outputs[j]:.6f} MWh, "
        f"below its ramp-down floor {floors[j]:.6f} MWh (demand {demand:.6f} MWh)",
        hour=hour,
    )


def emissions_of_demand(
    fleet: Fleet,
    previous_output: Optional[Sequence[float]],
    d: float,
    hour: Optional[int] = None,
) -> Tuple[float, np.ndarray]:
    """
    Emission (ton) of serving `d` MWh this hour, and the resulting output vector.

    `previous_output` None means first hour of the horizon.
    """
    if len(fleet) == 0:
        raise DomainError("fleet is empty")
    if not d >= 0:
        raise DomainError(f"demand must be >= 0, got {d}")
    prev = None
    if previous_output is not None:
        prev = np.asarray(previous_output, dtype=float)
        if prev.shape != fleet.capacities.shape:
            raise DomainError(f"previous output has {prev.size} entries, fleet has {len(fleet)}")
        if np.any(prev < -TOL) or np.any(prev > fleet.capacities + TOL):
            raise DomainError("previous output outside [0, capacity]")
    outputs, feasible = fill_stack(fleet, prev, np.array([d]))
    if not feasible[0]:
        raise _explain_infeasible(fleet, prev, float(d), outputs[0], hour)
    next_output = outputs[0]
    return float(next_output @ fleet.emission_rates), next_output


# ============================================================================
# FULL-HORIZON DISPATCH
# ============================================================================

def schedule_from_output(fleet: Fleet, output: np.ndarray) -> DispatchSchedule:
    output = np.array(output, dtype=float)
    output.setflags(write=False)
    on_flags = output > TOL
    on_flags.setflags(write=False)
    return DispatchSchedule(
        generator_ids=tuple(fleet.ids),
        output=output,
        on_flags=on_flags,
        total_cost=float((fleet.marginal_costs @ output).sum()),
        total_emissions=float((fleet.emission_rates @ output).sum()),
    )


def dispatch(fleet: Fleet, demand: DemandSeries | Sequence[float]) -> DispatchSchedule:
    """Dispatch every hour in order, threading each hour's output into the next."""
    if len(fleet) == 0:
        raise DomainError("fleet is empty")
    if not isinstance(demand, DemandSeries):
        demand = DemandSeries.of(demand)
    if len(demand) == 0:
        raise DomainError("demand series is empty")

    output = np.zeros((len(fleet), len(demand)))
    prev: Optional[np.ndarray] = None
    for hour, d in enumerate(demand.values):
        _, prev = emissions_of_demand(fleet, prev, d, hour=hour)
        output[:, hour] = prev

    schedule = schedule_from_output(fleet, output)
    logger.debug(f"[DISPATCH] T={schedule.horizon} emissions={schedule.total_emissions:.6f} cost={schedule.total_cost:.2f}")
    return schedule


def validate_schedule(
    fleet: Fleet,
    demand: DemandSeries | Sequence[float],
    schedule: DispatchSchedule,
) -> List[str]:
    """Every broken dispatch invariant as a readable line; empty list means valid."""
    values = demand.array if isinstance(demand, DemandSeries) else np.asarray(demand, dtype=float)
    q = schedule.output
    problems: List[str] = []
    if q.shape != (len(fleet), len(values)):
        return [f"output shape {q.shape} does not match fleet x horizon {(len(fleet), len(values))}"]

    ids = fleet.ids
    capacities = fleet.capacities
    ramps = fleet.ramp_limits
    for t in range(q.shape[1]):
        column = q[:, t]
        supplied = column.sum()
        if abs(supplied - values[t]) > TOL:
            problems.append(f"hour {t}: supply {supplied!r} != demand {values[t]!r}")
        prev = q[:, t - 1] if t > 0 else None
        caps = capacities if prev is None else np.minimum(capacities, prev + ramps)
        for j in range(len(fleet)):
            if column[j] < -TOL:
                problems.append(f"hour {t}: {ids[j]} negative output {column[j]!r}")
            if column[j] > capacities[j] + TOL:
                problems.append(f"hour {t}: {ids[j]} above capacity")
            if prev is not None and abs(column[j] - prev[j]) > ramps[j] + TOL:
                problems.append(f"hour {t}: {ids[j]} ramps {column[j] - prev[j]!r} beyond {ramps[j]!r}")
            if j + 1 < len(fleet) and column[j + 1] > TOL and column[j] < caps[j] - TOL:
                problems.append(f"hour {t}: {ids[j + 1]} runs while {ids[j]} is below its effective cap")
            if bool(schedule.on_flags[j, t]) != bool(column[j] > TOL):
                problems.append(f"hour {t}: {ids[j]} on-flag does not match output")
            if j + 1 < len(fleet) and schedule.on_flags[j + 1, t] and not schedule.on_flags[j, t]:
                problems.append(f"hour {t}: {ids[j + 1]} on while {ids[j]} is off")

    cost = float((fleet.marginal_costs @ q).sum())
    emissions = float(schedule.hourly_emissions(fleet).sum())
    if abs(cost - schedule.total_cost) > TOL * max(1.0, abs(cost)):
        problems.append(f"total_cost {schedule.total_cost!r} != recomputed {cost!r}")
    if abs(emissions - schedule.total_emissions) > TOL * max(1.0, abs(emissions)):
        problems.append(f"total_emissions {schedule.total_emissions!r} != recomputed {emissions!r}")
    return problems


# ============================================================================
# EXPORT
# ============================================================================

SCHEDULE_COLUMNS = ["hour", "generator_id", "output_mwh", "emission_ton", "cost"]


def schedule_to_frame(fleet: Fleet, schedule: DispatchSchedule) -> pd.DataFrame:
    """Long-format schedule, hour-major, with a final `total` row."""
    rows = []
    for t in range(schedule.horizon):
        for j, gen in enumerate(fleet.generators):
            q = float(schedule.output[j, t])
            rows.append({
                "hour": str(t),
                "generator_id": gen.id,
                "output_mwh": q,
                "emission_ton": q * gen.emission_rate,
                "cost": q * gen.marginal_cost,
            })
    rows.append({
        "hour": "total",
        "generator_id": "",
        "output_mwh": float(schedule.output.sum()),
        "emission_ton": schedule.total_emissions,
        "cost": schedule.total_cost,
    })
    return pd.DataFrame(rows, columns=SCHEDULE_COLUMNS)


def write_schedule(fleet: Fleet, schedule: DispatchSchedule, path: Path | str) -> Path:
    path = Path(path)
    write_frame_atomic(path, schedule_to_frame(fleet, schedule))
    logger.info(f"[DISPATCH] Wrote schedule ({schedule.horizon}h x {len(fleet)} generators) to {path}")
    return path
