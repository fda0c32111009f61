"""
direct_scheduler.py - Uncontrolled (direct) charging

Every vehicle charges at full rate from arrival until its request is met:

    g_i(t) = min([E_i - (t - a_i) m_i]_+, m_i)   for a_i <= t < d_i, else 0

The last charging hour carries the fractional residue. The resulting
aggregate is dispatched on top of the net load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from dispatch_engine import DemandSeries, DispatchSchedule, dispatch
from ev_sessions import ChargingSession, check_horizon
from grid_errors import DomainError
from grid_model import Fleet, LoadSeries


@dataclass(frozen=True, eq=False)
class ChargingProfile:
    """
    Per-vehicle hourly charge g_i(t) (rows follow sorted vehicle ids).

    `aggregate` is the column sum in that canonical row order, so it does not
    depend on the order sessions were passed in.
    """
    vehicle_ids: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vehicle_ids):
            raise DomainError(f"profile matrix shape {self.matrix.shape} does not match {len(self.vehicle_ids)} vehicles")

    @classmethod
    def from_rows(cls, rows: Dict[str, np.ndarray], horizon: int) -> "ChargingProfile":
        ids = tuple(sorted(rows))
        matrix = np.zeros((len(ids), horizon))
        for k, vehicle_id in enumerate(ids):
            matrix[k] = rows[vehicle_id]
        matrix.setflags(write=False)
        return cls(vehicle_ids=ids, matrix=matrix)

    @classmethod
    def empty(cls, horizon: int) -> "ChargingProfile":
        return cls.from_rows({}, horizon)

    @property
    def horizon(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def per_vehicle(self) -> Dict[str, np.ndarray]:
        return {vehicle_id: self.matrix[k] for k, vehicle_id in enumerate(self.vehicle_ids)}

    @property
    def aggregate(self) -> np.ndarray:
        if not self.vehicle_ids:
            return np.zeros(self.horizon)
        return self.matrix.sum(axis=0)

    def delivered(self) -> Dict[str, float]:
        return {vehicle_id: math.fsum(self.matrix[k]) for k, vehicle_id in enumerate(self.vehicle_ids)}


def direct_charge(session: ChargingSession, horizon: int) -> np.ndarray:
    """Hourly charge of one session under direct charging."""
    g = np.zeros(horizon)
    elapsed = np.arange(session.window_hours, dtype=float)
    residue = session.energy_request - elapsed * session.max_rate
    g[session.arrival:session.departure] = np.minimum(np.maximum(residue, 0.0), session.max_rate)
    return g


def direct_profile(sessions: Sequence[ChargingSession], horizon: int) -> ChargingProfile:
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    check_horizon(sessions, horizon)
    rows = {}
    for session in sessions:
        if session.vehicle_id in rows:
            raise DomainError(f"duplicate vehicle id '{session.vehicle_id}'")
        rows[session.vehicle_id] = direct_charge(session, horizon)
    return ChargingProfile.from_rows(rows, horizon)


def direct_run(
    fleet: Fleet,
    load: LoadSeries,
    sessions: Sequence[ChargingSession],
) -> Tuple[DispatchSchedule, ChargingProfile]:
    """Dispatch L(t) + G(t) with G from direct charging."""
    profile = direct_profile(sessions, len(load))
    demand = DemandSeries.of(load.array + profile.aggregate)
    schedule = dispatch(fleet, demand)
    logger.debug(
        f"[DIRECT] vehicles={len(sessions)} ev_energy={profile.aggregate.sum():.3f} MWh "
        f"emissions={schedule.total_emissions:.3f} t"
    )
    return schedule, profile


# ============================================================================
# EXPORT
# ============================================================================

def profile_to_frames(profile: ChargingProfile) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """(per-vehicle `hour,vehicle_id,charge_mwh`, aggregate `hour,aggregate_mwh`)."""
    hours = np.arange(profile.horizon)
    vehicles = pd.DataFrame({
        "hour": np.repeat(hours, len(profile.vehicle_ids)),
        "vehicle_id": list(profile.vehicle_ids) * profile.horizon,
        "charge_mwh": profile.matrix.T.reshape(-1),
    })
    aggregate = pd.DataFrame({"hour": hours, "aggregate_mwh": profile.aggregate})
    return vehicles, aggregate

