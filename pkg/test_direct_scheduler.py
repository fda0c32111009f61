"""
test_direct_scheduler.py - Direct (uncontrolled) charging

Covers:
1. Closed-form charge against a literal per-hour evaluation (10,000 sessions)
2. Saturated windows, linearity of the aggregate, order independence
3. direct_run: empty fleet load, worked instance, infeasible charging
4. Profile export frames
"""

import math

import numpy as np
import pytest

from conftest import make_load, make_session, random_sessions
from direct_scheduler import ChargingProfile, direct_charge, direct_profile, direct_run, profile_to_frames
from dispatch_engine import dispatch
from grid_errors import DomainError, InfeasibleError

HORIZON = 24


def literal_charge(session, t):
    if not session.arrival <= t < session.departure:
        return 0.0
    remaining = session.energy_request - (t - session.arrival) * session.max_rate
    return min(max(remaining, 0.0), session.max_rate)


def test_formula_fidelity_on_random_sessions():
    rng = np.random.default_rng(42)
    sessions = random_sessions(rng, HORIZON, 10_000, max_energy=3.0)
    for session in sessions:
        g = direct_charge(session, HORIZON)
        assert g.tolist() == [literal_charge(session, t) for t in range(HORIZON)]
        assert math.fsum(g) == pytest.approx(session.energy_request, abs=1e-9)
        assert np.all(np.diff(np.cumsum(g)) >= 0)


def test_partial_last_hour():
    session = make_session("leaf", 8, 17, 0.024, 0.0066)
    g = direct_charge(session, HORIZON)
    assert g[8:11] == pytest.approx([0.0066] * 3)
    assert g[11] == pytest.approx(0.0042)
    assert np.count_nonzero(g) == 4


def test_saturated_window():
    session = make_session("full", 3, 7, 4 * 0.011, 0.011)
    g = direct_charge(session, 10)
    assert g[3:7] == pytest.approx([0.011] * 4)
    assert g[:3].sum() == 0 and g[7:].sum() == 0


def test_identical_sessions_double_the_aggregate():
    one = direct_profile([make_session("a", 2, 6, 1.5, 1.0)], 8)
    two = direct_profile([make_session("a", 2, 6, 1.5, 1.0), make_session("b", 2, 6, 1.5, 1.0)], 8)
    assert two.aggregate.tolist() == (2 * one.aggregate).tolist()


def test_profile_is_order_independent():
    rng = np.random.default_rng(7)
    sessions = random_sessions(rng, HORIZON, 200, max_energy=0.09)
    forward = direct_profile(sessions, HORIZON)
    backward = direct_profile(list(reversed(sessions)), HORIZON)
    assert forward.vehicle_ids == backward.vehicle_ids
    assert forward.aggregate.tolist() == backward.aggregate.tolist()


def test_session_outside_horizon_names_vehicle():
    with pytest.raises(DomainError, match="late-ev"):
        direct_profile([make_session("late-ev", 20, 30, 1.0, 1.0)], HORIZON)


def test_duplicate_vehicle_ids():
    with pytest.raises(DomainError, match="duplicate"):
        direct_profile([make_session("a", 0, 2, 1.0, 1.0), make_session("a", 1, 3, 1.0, 1.0)], 4)


def test_direct_run_without_sessions_is_base_dispatch(two_gen_fleet):
    load = make_load([6.0, 9.0, 12.0])
    schedule, profile = direct_run(two_gen_fleet, load, [])
    base = dispatch(two_gen_fleet, load.values)
    assert profile.aggregate.tolist() == [0.0, 0.0, 0.0]
    assert schedule.output.tolist() == base.output.tolist()


def test_direct_run_worked_instance(worked_fleet, worked_sessions):
    schedule, profile = direct_run(worked_fleet, make_load([5.0, 12.0]), worked_sessions)
    assert profile.per_vehicle["ev0"].tolist() == [4.0, 0.0]
    assert schedule.total_emissions == pytest.approx(19.8)


def test_direct_run_over_capacity(two_gen_fleet):
    with pytest.raises(InfeasibleError):
        direct_run(two_gen_fleet, make_load([18.0, 5.0]), [make_session("a", 0, 2, 3.0, 3.0)])


def test_profile_frames():
    profile = direct_profile([make_session("b", 0, 2, 1.5, 1.0), make_session("a", 1, 2, 0.5, 0.5)], 2)
    vehicles, aggregate = profile_to_frames(profile)
    assert list(vehicles.columns) == ["hour", "vehicle_id", "charge_mwh"]
    assert vehicles.values.tolist() == [[0, "a", 0.0], [0, "b", 1.0], [1, "a", 0.5], [1, "b", 0.5]]
    assert aggregate["aggregate_mwh"].tolist() == [1.0, 1.0]


def test_empty_profile():
    profile = ChargingProfile.empty(5)
    assert profile.aggregate.tolist() == [0.0] * 5
    assert profile.delivered() == {}
