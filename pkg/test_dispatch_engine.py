"""
test_dispatch_engine.py - Merit-order dispatch under ramp limits

Covers:
1. Hand-solved stacks (two generators, coal ramp cap)
2. The one-hour kernel: zero demand, monotonicity, consistency with dispatch()
3. Random instances checked by validate_schedule()
4. No-ramp fleets against a brute-force cheapest split
5. Schedule CSV export
"""

import itertools

import numpy as np
import pandas as pd
import pytest

from conftest import make_fleet, random_fleet
from dispatch_engine import (
    TOL,
    DemandSeries,
    dispatch,
    emissions_of_demand,
    fill_stack,
    validate_schedule,
    write_schedule,
)
from grid_errors import DomainError, InfeasibleError


@pytest.fixture
def ramp_fleet():
    """Coal-like plant with a 6 MWh/h ramp, then a free-ramping gas plant."""
    return make_fleet([(10, 5, 1.0, 6), (20, 30, 0.4, 20)])


# ============================================================================
# HAND-SOLVED STACKS
# ============================================================================

def test_dispatch_fills_cheapest_first(two_gen_fleet):
    schedule = dispatch(two_gen_fleet, [15])
    assert schedule.output[:, 0].tolist() == [10.0, 5.0]
    assert schedule.total_cost == pytest.approx(200.0)
    assert schedule.total_emissions == pytest.approx(12.0)
    assert schedule.on_flags[:, 0].tolist() == [True, True]
    assert validate_schedule(two_gen_fleet, [15], schedule) == []


def test_dispatch_over_capacity_names_hour(two_gen_fleet):
    with pytest.raises(InfeasibleError) as info:
        dispatch(two_gen_fleet, [15, 25])
    assert info.value.hour == 1
    assert "hour 1" in str(info.value)


def test_dispatch_respects_ramp_up_cap(ramp_fleet):
    schedule = dispatch(ramp_fleet, [4, 12])
    assert schedule.output[:, 0].tolist() == [4.0, 0.0]
    assert schedule.output[:, 1] == pytest.approx([10.0, 2.0])
    assert schedule.total_emissions == pytest.approx(14.8)
    assert schedule.hourly_emissions(ramp_fleet) == pytest.approx([4.0, 10.8])
    assert validate_schedule(ramp_fleet, [4, 12], schedule) == []


def test_ramp_cap_pushes_load_onto_next_unit():
    fleet = make_fleet([(10, 5, 1.0, 3), (20, 30, 0.4, 20)])
    schedule = dispatch(fleet, [2, 9])
    # coal may only climb from 2 to 5; gas covers the rest
    assert schedule.output[:, 1] == pytest.approx([5.0, 4.0])


def test_ramp_down_floor_is_infeasible():
    fleet = make_fleet([(10, 5, 1.0, 2), (10, 30, 0.4, 10)])
    with pytest.raises(InfeasibleError, match="gen0") as info:
        dispatch(fleet, [10, 2])
    assert info.value.hour == 1


def test_first_hour_ignores_ramping():
    fleet = make_fleet([(10, 5, 1.0, 1), (10, 30, 0.4, 10)])
    schedule = dispatch(fleet, [10])
    assert schedule.output[:, 0].tolist() == [10.0, 0.0]


def test_negative_demand_is_domain_error(two_gen_fleet):
    with pytest.raises(DomainError):
        DemandSeries.of([1.0, -0.5])
    with pytest.raises(DomainError):
        dispatch(two_gen_fleet, [-1.0])


def test_empty_inputs(two_gen_fleet):
    with pytest.raises(DomainError):
        dispatch(two_gen_fleet, [])
    with pytest.raises(DomainError):
        dispatch(make_fleet([]), [1.0])


# ============================================================================
# ONE-HOUR KERNEL
# ============================================================================

def test_kernel_first_hour(two_gen_fleet):
    emission, nxt = emissions_of_demand(two_gen_fleet, None, 15)
    assert emission == pytest.approx(12.0)
    emission, nxt = emissions_of_demand(two_gen_fleet, [0.0, 0.0], 15)
    assert emission == pytest.approx(12.0)
    assert nxt.tolist() == [10.0, 5.0]


def test_kernel_with_previous_output(ramp_fleet):
    emission, nxt = emissions_of_demand(ramp_fleet, [4.0, 0.0], 12)
    assert emission == pytest.approx(10.8)
    assert nxt == pytest.approx([10.0, 2.0])


def test_kernel_zero_demand(two_gen_fleet):
    emission, nxt = emissions_of_demand(two_gen_fleet, None, 0.0)
    assert emission == 0.0
    assert nxt.tolist() == [0.0, 0.0]


def test_kernel_rejects_bad_previous_output(two_gen_fleet):
    with pytest.raises(DomainError):
        emissions_of_demand(two_gen_fleet, [1.0], 5)
    with pytest.raises(DomainError):
        emissions_of_demand(two_gen_fleet, [11.0, 0.0], 5)


def test_kernel_is_monotone_in_demand():
    rng = np.random.default_rng(4)
    for _ in range(50):
        fleet = random_fleet(rng, int(rng.integers(1, 5)))
        prev = fleet.capacities * rng.uniform(0, 1, size=len(fleet))
        demands = np.linspace(0, fleet.total_capacity_mw, 101)
        outputs, feasible = fill_stack(fleet, prev, demands)
        emissions = outputs @ fleet.emission_rates
        ok = emissions[feasible]
        assert np.all(np.diff(ok) >= -1e-9)


def test_dispatch_equals_kernel_fold():
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(100):
        fleet = random_fleet(rng, int(rng.integers(1, 5)))
        demand = rng.uniform(0, fleet.total_capacity_mw, size=int(rng.integers(1, 8)))
        try:
            schedule = dispatch(fleet, demand)
        except InfeasibleError:
            continue
        prev = None
        for t, d in enumerate(demand):
            _, prev = emissions_of_demand(fleet, prev, d)
            np.testing.assert_allclose(schedule.output[:, t], prev, atol=1e-9)
        checked += 1
    assert checked > 0


# ============================================================================
# RANDOM INSTANCES
# ============================================================================

def test_random_instances_pass_validator():
    rng = np.random.default_rng(2013)
    feasible = 0
    for i in range(1000):
        fleet = random_fleet(rng, int(rng.integers(1, 6)), free_ramps=(i % 2 == 0))
        horizon = int(rng.integers(1, 25))
        demand = rng.uniform(0, fleet.total_capacity_mw, size=horizon)
        try:
            schedule = dispatch(fleet, demand)
        except InfeasibleError as e:
            assert e.hour is not None and 0 < e.hour < horizon
            continue
        feasible += 1
        assert validate_schedule(fleet, demand, schedule) == []
        assert np.all(np.abs(schedule.hourly_supply() - demand) <= TOL)
    assert feasible >= 500


def test_validator_flags_broken_schedule(two_gen_fleet):
    schedule = dispatch(two_gen_fleet, [15])
    tampered = type(schedule)(
        generator_ids=schedule.generator_ids,
        output=np.array([[5.0], [10.0]]),
        on_flags=schedule.on_flags,
        total_cost=schedule.total_cost,
        total_emissions=schedule.total_emissions,
    )
    problems = validate_schedule(two_gen_fleet, [15], tampered)
    assert any("below its effective cap" in p for p in problems)
    assert any("total_cost" in p for p in problems)


def test_free_ramps_match_brute_force_cost():
    rng = np.random.default_rng(17)
    grid = 0.5
    for _ in range(40):
        fleet = random_fleet(rng, 2, free_ramps=True)
        p1, p2 = fleet.capacities
        c1, c2 = fleet.marginal_costs
        horizon = int(rng.integers(1, 4))
        demand = grid * rng.integers(0, int((p1 + p2) / grid) + 1, size=horizon)
        schedule = dispatch(fleet, demand)
        best = 0.0
        for d in demand:
            splits = [
                c1 * q1 + c2 * (d - q1)
                for q1 in itertools.takewhile(lambda q: q <= p1 + 1e-9, np.arange(0, d + grid / 2, grid))
                if d - q1 <= p2 + 1e-9
            ]
            best += min(splits)
        assert schedule.total_cost == pytest.approx(best, abs=1e-6)


# ============================================================================
# EXPORT
# ============================================================================

def test_schedule_csv_has_totals_row(tmp_path, ramp_fleet):
    schedule = dispatch(ramp_fleet, [4, 12])
    path = write_schedule(ramp_fleet, schedule, tmp_path / "schedule.csv")
    frame = pd.read_csv(path, dtype={"hour": str}, keep_default_na=False)
    assert list(frame.columns) == ["hour", "generator_id", "output_mwh", "emission_ton", "cost"]
    assert len(frame) == 2 * 2 + 1
    total = frame.iloc[-1]
    assert total["hour"] == "total"
    assert float(total["emission_ton"]) == pytest.approx(14.8)
    body = frame.iloc[:-1]
    assert body["emission_ton"].astype(float).sum() == pytest.approx(14.8)
