"""
test_green_scheduler.py - Emission-oriented charging (phase 1 + dispersal)

Covers:
1. The two-hour coal/gas instance: G* = [0, 4], 17.4 t vs 19.8 t direct
2. DP against the exact search on small free-ramp instances
3. Phase-1 dominance over direct charging up to grid rounding, and when the
   direct incumbent is kept
4. Min-cost-flow dispersal against a brute-force enumeration
5. Guards, ties and degenerate inputs
"""

import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_fleet, make_load, make_session, random_fleet, random_sessions
from direct_scheduler import direct_profile, direct_run
from dispatch_engine import dispatch
from grid_errors import ContractViolation, InfeasibleError, InstanceTooLarge
from green_scheduler import (
    AvailabilityMask,
    SolverBackend,
    count_allocations,
    disperse,
    green_run,
    optimize_aggregate_dp,
    optimize_aggregate_exact,
    write_g_star,
)

WORKED_LOAD = [5.0, 12.0]


def emissions_for(fleet, load, aggregate):
    return dispatch(fleet, np.asarray(load, dtype=float) + aggregate).total_emissions


def roomy_free_fleet(rng, n_generators):
    """Free-ramping fleet with at least 8 MWh per plant."""
    costs = np.sort(rng.choice(np.arange(1, 100), size=n_generators, replace=False))
    specs = []
    for cost in costs:
        capacity = float(rng.integers(8, 16))
        specs.append((capacity, float(cost), float(np.round(rng.uniform(0, 1.2), 2)), capacity))
    return make_fleet(specs)


# ============================================================================
# WORKED INSTANCE
# ============================================================================

@pytest.mark.parametrize("optimizer", [optimize_aggregate_dp, optimize_aggregate_exact])
def test_worked_instance_charges_on_gas_margin(optimizer, worked_fleet, worked_sessions):
    g_star = optimizer(worked_fleet, make_load(WORKED_LOAD), worked_sessions, 0.5)
    assert g_star == pytest.approx([0.0, 4.0])
    assert emissions_for(worked_fleet, WORKED_LOAD, g_star) == pytest.approx(17.4)


def test_worked_instance_direct_vs_green(worked_fleet, worked_sessions):
    load = make_load(WORKED_LOAD)
    direct_schedule, direct = direct_run(worked_fleet, load, worked_sessions)
    assert direct.aggregate.tolist() == [4.0, 0.0]
    assert direct_schedule.total_emissions == pytest.approx(19.8)

    solution = green_run(worked_fleet, load, worked_sessions, backend="dp", delta=0.5)
    assert solution.schedule.total_emissions == pytest.approx(17.4)
    assert solution.dispersal_residual == pytest.approx(0.0, abs=1e-9)
    assert solution.profile.per_vehicle["ev0"] == pytest.approx([0.0, 4.0])
    assert not solution.used_direct_incumbent
    assert solution.to_dict()["backend"] == "dp"

    savings = (solution.schedule.total_emissions - direct_schedule.total_emissions) / direct_schedule.total_emissions
    assert savings * 100 == pytest.approx(-12.1212, abs=1e-3)


def test_all_allocations_of_worked_instance(worked_fleet):
    # 9 ways to split 4 MWh over two hours at 0.5 MWh; [0, 4] is the cheapest
    values = {
        x: emissions_for(worked_fleet, WORKED_LOAD, np.array([x, 4.0 - x]))
        for x in np.arange(0.0, 4.01, 0.5)
    }
    assert len(values) == 9
    assert min(values, key=values.get) == 0.0
    assert values[4.0] == pytest.approx(19.8)


# ============================================================================
# DEGENERATE INPUTS
# ============================================================================

def test_zero_sessions_is_base_dispatch(worked_fleet):
    load = make_load(WORKED_LOAD)
    for backend in SolverBackend:
        solution = green_run(worked_fleet, load, [], backend=backend, delta=0.5)
        assert solution.aggregate.tolist() == [0.0, 0.0]
        assert solution.dispersal_residual == 0.0
        assert solution.schedule.total_emissions == pytest.approx(dispatch(worked_fleet, WORKED_LOAD).total_emissions)


def test_single_hour_forces_total(worked_fleet):
    sessions = [make_session("a", 0, 1, 1.5, 2.0), make_session("b", 0, 1, 0.5, 1.0)]
    g_star = optimize_aggregate_exact(worked_fleet, make_load([3.0]), sessions, 0.5)
    assert g_star.tolist() == [2.0]


def test_equal_rates_pick_lexicographically_first():
    fleet = make_fleet([(10, 5, 0.5, 10), (10, 30, 0.5, 10)])
    load = make_load([4.0, 6.0, 8.0, 5.0])
    sessions = [make_session("ev0", 0, 4, 2.0, 1.0)]
    for optimizer in (optimize_aggregate_exact, optimize_aggregate_dp):
        g_star = optimizer(fleet, load, sessions, 1.0)
        assert g_star.tolist() == [0.0, 0.0, 1.0, 1.0]
    _, direct = direct_run(fleet, load, sessions)
    assert emissions_for(fleet, load.values, direct.aggregate) == pytest.approx(emissions_for(fleet, load.values, g_star))


def test_flat_marginal_rate_equals_direct():
    fleet = make_fleet([(100, 5, 0.7, 100), (100, 30, 0.3, 100)])
    load = make_load([20.0, 30.0, 25.0, 22.0])
    sessions = [make_session("a", 0, 3, 2.0, 1.0), make_session("b", 1, 4, 1.5, 1.0)]
    solution = green_run(fleet, load, sessions, delta=0.5)
    direct_schedule, _ = direct_run(fleet, load, sessions)
    assert solution.schedule.total_emissions == pytest.approx(direct_schedule.total_emissions)


def test_one_hour_saturated_windows_follow_direct(two_gen_fleet):
    load = make_load([6.0, 8.0, 7.0])
    sessions = [make_session("a", 0, 1, 1.0, 1.0), make_session("b", 2, 3, 2.0, 2.0)]
    solution = green_run(two_gen_fleet, load, sessions, delta=0.5)
    assert solution.aggregate.tolist() == [1.0, 0.0, 2.0]
    direct_schedule, _ = direct_run(two_gen_fleet, load, sessions)
    assert solution.schedule.total_emissions == pytest.approx(direct_schedule.total_emissions)


def test_rounding_residue_lands_on_largest_hour(worked_fleet):
    sessions = [make_session("ev0", 0, 2, 4.3, 4.0)]
    g_star = optimize_aggregate_dp(worked_fleet, make_load(WORKED_LOAD), sessions, 1.0)
    assert g_star.sum() == pytest.approx(4.3)
    assert g_star == pytest.approx([0.3, 4.0])


def test_exact_guard():
    sessions = [make_session("a", 0, 2, 1.0, 1.0)]
    big_fleet = make_fleet([(10, c, 0.5, 10) for c in range(1, 6)])
    with pytest.raises(InstanceTooLarge, match="dp backend"):
        optimize_aggregate_exact(big_fleet, make_load([1.0, 1.0]), sessions, 1.0)
    small_fleet = make_fleet([(10, 5, 0.5, 10)])
    with pytest.raises(InstanceTooLarge):
        optimize_aggregate_exact(small_fleet, make_load([1.0] * 9), sessions, 1.0)
    wide = [make_session(f"v{i}", 0, 8, 8.0, 10.0) for i in range(3)]
    with pytest.raises(InstanceTooLarge, match="allocations"):
        optimize_aggregate_exact(make_fleet([(1000, 5, 0.5, 1000)]), make_load([1.0] * 8), wide, 0.1)


def test_count_allocations():
    assert count_allocations([2, 2], 2) == 3
    assert count_allocations([1, 1, 1], 2) == 3
    assert count_allocations([8, 8], 8) == 9
    assert count_allocations([0, 0], 1) == 0


def test_no_dispatchable_allocation_is_infeasible(two_gen_fleet):
    with pytest.raises(InfeasibleError):
        optimize_aggregate_dp(two_gen_fleet, make_load([19.0, 19.0]), [make_session("a", 0, 2, 4.0, 2.0)], 0.5)


def test_availability_mask():
    sessions = [make_session("a", 0, 2, 1.0, 1.0), make_session("b", 1, 3, 1.0, 0.5)]
    mask = AvailabilityMask.from_sessions(sessions, 4)
    assert mask.mask.astype(int).tolist() == [[1, 1, 0, 0], [0, 1, 1, 0]]
    assert mask.hourly_capacity(sessions).tolist() == [1.0, 1.5, 0.5, 0.0]


# ============================================================================
# DP AGAINST EXACT SEARCH
# ============================================================================

def test_dp_matches_exact_on_free_ramp_instances():
    rng = np.random.default_rng(101)
    delta = 0.1
    for _ in range(100):
        fleet = roomy_free_fleet(rng, int(rng.integers(1, 4)))
        horizon = int(rng.integers(1, 6))
        sessions = random_sessions(rng, horizon, int(rng.integers(1, 4)), max_energy=0.6, step=delta)
        load = make_load(rng.uniform(0, fleet.total_capacity_mw - 8, size=horizon))
        dp_value = emissions_for(fleet, load.values, optimize_aggregate_dp(fleet, load, sessions, delta))
        exact_value = emissions_for(fleet, load.values, optimize_aggregate_exact(fleet, load, sessions, delta))
        slack = delta * float(fleet.emission_rates.max()) * horizon
        assert exact_value <= dp_value + 1e-9
        assert dp_value - exact_value <= slack + 1e-9


def test_exact_is_a_lower_bound_with_ramps():
    rng = np.random.default_rng(5)
    compared = 0
    for _ in range(30):
        fleet = random_fleet(rng, int(rng.integers(1, 4)))
        horizon = int(rng.integers(2, 5))
        sessions = random_sessions(rng, horizon, 2, max_energy=0.5, step=0.1)
        load = make_load(rng.uniform(0, 0.5 * fleet.total_capacity_mw, size=horizon))
        try:
            exact = optimize_aggregate_exact(fleet, load, sessions, 0.1)
            dp = optimize_aggregate_dp(fleet, load, sessions, 0.1)
        except InfeasibleError:
            continue
        try:
            dp_value = emissions_for(fleet, load.values, dp)
        except InfeasibleError:
            continue
        assert emissions_for(fleet, load.values, exact) <= dp_value + 1e-9
        compared += 1
    assert compared > 0


# ============================================================================
# DOMINANCE
# ============================================================================

def test_dp_never_worse_than_direct_beyond_grid_rounding():
    rng = np.random.default_rng(2019)
    delta = 0.1
    compared = dp_failed = fallbacks = 0
    for i in range(1000):
        fleet = random_fleet(rng, int(rng.integers(1, 5)), free_ramps=(i % 3 == 0))
        horizon = int(rng.integers(1, 13))
        sessions = random_sessions(rng, horizon, int(rng.integers(0, 5)), max_energy=1.0)
        load = make_load(rng.uniform(0, 0.7 * fleet.total_capacity_mw, size=horizon))
        try:
            direct_schedule, _ = direct_run(fleet, load, sessions)
        except InfeasibleError:
            continue
        direct_value = direct_schedule.total_emissions
        try:
            dp = optimize_aggregate_dp(fleet, load, sessions, delta)
            dp_value = dispatch(fleet, load.array + dp).total_emissions
        except InfeasibleError:
            dp_failed += 1
            dp_value = None
        else:
            slack = delta * float(fleet.emission_rates.max()) * horizon
            assert dp_value <= direct_value + slack + 1e-9
            compared += 1

        solution = green_run(fleet, load, sessions, backend="dp", delta=delta)
        assert solution.used_direct_incumbent == (dp_value is None or direct_value < dp_value)
        assert solution.schedule.total_emissions <= direct_value + 1e-9
        assert solution.aggregate.sum() == pytest.approx(sum(s.energy_request for s in sessions), abs=1e-6)
        fallbacks += solution.used_direct_incumbent
    assert compared >= 100
    assert fallbacks >= dp_failed


def test_dp_threshold_raises_no_runtime_warnings(worked_fleet, worked_sessions):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        g_star = optimize_aggregate_dp(worked_fleet, make_load(WORKED_LOAD), worked_sessions, 0.5)
    assert g_star == pytest.approx([0.0, 4.0])


# ============================================================================
# DISPERSAL
# ============================================================================

def test_disperse_unique_zero_residual():
    sessions = [make_session("v1", 0, 1, 5.0, 5.0), make_session("v2", 0, 2, 5.0, 5.0)]
    profile, residual = disperse([5.0, 5.0], sessions)
    assert residual == pytest.approx(0.0)
    assert profile.per_vehicle["v1"].tolist() == [5.0, 0.0]
    assert profile.per_vehicle["v2"].tolist() == [0.0, 5.0]


def test_disperse_forced_mismatch():
    profile, residual = disperse([0.0, 5.0], [make_session("v1", 0, 1, 5.0, 5.0)])
    assert residual == pytest.approx(10.0)
    assert profile.per_vehicle["v1"].tolist() == [5.0, 0.0]


def test_disperse_direct_aggregate_has_no_residual():
    rng = np.random.default_rng(33)
    for _ in range(20):
        sessions = random_sessions(rng, 24, 30, max_energy=0.08)
        target = direct_profile(sessions, 24).aggregate
        profile, residual = disperse(target, sessions)
        assert residual < 1e-4
        delivered = profile.delivered()
        for s in sessions:
            assert delivered[s.vehicle_id] == pytest.approx(s.energy_request, abs=1e-9)


def test_disperse_rejects_energy_mismatch():
    with pytest.raises(ContractViolation):
        disperse([1.0, 1.0], [make_session("v1", 0, 2, 1.5, 1.0)])


def _vehicle_options(session, horizon):
    width = session.window_hours
    rate = int(session.max_rate)
    for split in itertools.product(range(rate + 1), repeat=width):
        if sum(split) == int(session.energy_request):
            g = [0] * horizon
            g[session.arrival:session.departure] = split
            yield g


def brute_force_residual(g_star, sessions):
    horizon = len(g_star)
    best = float("inf")
    for choice in itertools.product(*[list(_vehicle_options(s, horizon)) for s in sessions]):
        total = np.sum(choice, axis=0) if choice else np.zeros(horizon)
        best = min(best, float(np.abs(total - np.asarray(g_star)).sum()))
    return best


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_disperse_matches_enumeration(data):
    horizon = data.draw(st.integers(1, 4))
    sessions = []
    for i in range(data.draw(st.integers(1, 3))):
        arrival = data.draw(st.integers(0, horizon - 1))
        departure = data.draw(st.integers(arrival + 1, horizon))
        rate = data.draw(st.integers(1, 2))
        energy = data.draw(st.integers(1, (departure - arrival) * rate))
        sessions.append(make_session(f"v{i}", arrival, departure, float(energy), float(rate)))
    total = int(sum(s.energy_request for s in sessions))
    cuts = sorted(data.draw(st.lists(st.integers(0, total), min_size=horizon - 1, max_size=horizon - 1)))
    g_star = np.diff([0] + cuts + [total]).astype(float)

    profile, residual = disperse(g_star, sessions)
    assert residual == pytest.approx(brute_force_residual(g_star, sessions), abs=1e-6)
    for s in sessions:
        row = profile.per_vehicle[s.vehicle_id]
        assert row.sum() == pytest.approx(s.energy_request, abs=1e-9)
        assert np.all(row >= 0) and np.all(row <= s.max_rate + 1e-12)
        assert np.all(row[:s.arrival] == 0) and np.all(row[s.departure:] == 0)


def test_write_g_star(tmp_path):
    path = write_g_star([0.0, 4.0], tmp_path / "g_star.csv")
    assert path.read_text() == "hour,g_star_mwh\n0,0.0\n1,4.0\n"
