"""
conftest.py - Shared builders for the gridshift tests

Small hand-made fleets and sessions used across test files, plus the path to
the shipped data directory.
"""

from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pytest

from ev_sessions import ChargingSession
from grid_model import Fleet, Generator, LoadSeries

DATA_DIR = Path(__file__).resolve().parent / "data"


def make_fleet(specs: Sequence[tuple]) -> Fleet:
    """specs: (capacity, cost, emission_rate, ramp) tuples; ids gen0, gen1, ..."""
    generators = [
        Generator.create(f"gen{j}", "gas", capacity, cost, rate, ramp)
        for j, (capacity, cost, rate, ramp) in enumerate(specs)
    ]
    return Fleet.from_generators(generators)


def make_session(vehicle_id: str, arrival: int, departure: int, energy: float, rate: float) -> ChargingSession:
    return ChargingSession(vehicle_id=vehicle_id, arrival=arrival, departure=departure,
                           energy_request=energy, max_rate=rate)


def make_load(values: Sequence[float]) -> LoadSeries:
    return LoadSeries.from_values(values)


def random_fleet(rng: np.random.Generator, n_generators: int, free_ramps: bool = False) -> Fleet:
    """Distinct increasing costs; ramps are either free or 30-100% of capacity."""
    costs = np.sort(rng.choice(np.arange(1, 100), size=n_generators, replace=False))
    specs = []
    for cost in costs:
        capacity = float(rng.integers(2, 11))
        rate = float(np.round(rng.uniform(0.0, 1.2), 2))
        ramp = capacity if free_ramps else float(np.round(capacity * rng.uniform(0.3, 1.0), 1))
        specs.append((capacity, float(cost), rate, ramp))
    return make_fleet(specs)


def random_sessions(
    rng: np.random.Generator,
    horizon: int,
    n_vehicles: int,
    max_energy: float = 2.0,
    step: Optional[float] = None,
) -> List[ChargingSession]:
    """Random sessions inside [0, horizon); energies on the `step` grid when given."""
    sessions = []
    for i in range(n_vehicles):
        arrival = int(rng.integers(0, horizon))
        departure = int(rng.integers(arrival + 1, horizon + 1))
        rate = float(rng.choice([0.5, 1.0, 2.0]))
        cap = min(max_energy, (departure - arrival) * rate)
        if step is None:
            energy = float(rng.uniform(0.1, 1.0)) * cap
        else:
            energy = float(step * rng.integers(1, max(1, int(round(cap / step))) + 1))
            energy = min(energy, cap)
        sessions.append(make_session(f"v{i}", arrival, departure, energy, rate))
    return sessions


@pytest.fixture
def two_gen_fleet() -> Fleet:
    """Coal-like then gas-like plant, both with free ramps."""
    return make_fleet([(10, 10, 1.0, 10), (10, 20, 0.4, 10)])


@pytest.fixture
def worked_fleet() -> Fleet:
    return make_fleet([(10, 5, 1.0, 10), (10, 30, 0.4, 10)])


@pytest.fixture
def worked_sessions() -> List[ChargingSession]:
    return [make_session("ev0", 0, 2, 4.0, 4.0)]


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR
