"""
green_scheduler.py - Emission-oriented charging

Two phases:
1. choose the aggregate charging profile G*(t) that minimizes dispatch
   emissions of L(t) + G(t), subject to
       G(t) <= sum of max rates of vehicles present at t
       sum_t G(t) = total requested energy
   on a Delta-MWh grid, with one of two backends:
   - dp:    forward DP over cumulative allocated energy; each state keeps the
            stack output of its best path, so ramping is threaded only along
            that path (a heuristic when ramps bind)
   - exact: lexicographic branch-and-bound over every allocation, each path
            dispatched with its own stack state (small instances only)
2. disperse G* to vehicles with a min-cost flow that minimizes
   sum_t |sum_i g_i(t) - G*(t)|.

green_run() keeps the direct-charging aggregate as an incumbent: if phase 1
returns something worse, or fails where direct charging is dispatchable, the
direct aggregate is used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from ortools.graph.python import min_cost_flow

from atomic_io import write_frame_atomic
from direct_scheduler import ChargingProfile, direct_run
from dispatch_engine import TOL, DemandSeries, DispatchSchedule, dispatch, fill_stack, validate_schedule
from ev_sessions import ChargingSession, check_horizon, total_energy
from grid_errors import ContractViolation, DomainError, InfeasibleError, InstanceTooLarge
from grid_model import Fleet, LoadSeries

EXACT_MAX_GENERATORS = 4
EXACT_MAX_HOURS = 8
EXACT_MAX_ALLOCATIONS = 1_000_000

FLOW_SCALE = 1_000_000          # flow units per MWh
OVERFLOW_UNIT_COST = 2          # each unit over target implies one unit under elsewhere
TIE_RELATIVE_TOL = 1e-9


class SolverBackend(str, Enum):
    DP = "dp"
    EXACT = "exact"


@dataclass(frozen=True, eq=False)
class AvailabilityMask:
    """zeta_i(t) = 1 iff a_i <= t < d_i; rows follow the session order given."""
    vehicle_ids: Tuple[str, ...]
    mask: np.ndarray

    @classmethod
    def from_sessions(cls, sessions: Sequence[ChargingSession], horizon: int) -> "AvailabilityMask":
        check_horizon(sessions, horizon)
        mask = np.zeros((len(sessions), horizon), dtype=bool)
        for i, s in enumerate(sessions):
            mask[i, s.arrival:s.departure] = True
        mask.setflags(write=False)
        return cls(vehicle_ids=tuple(s.vehicle_id for s in sessions), mask=mask)

    def hourly_capacity(self, sessions: Sequence[ChargingSession]) -> np.ndarray:
        """Aggregate charging capability sum_i m_i zeta_i(t)."""
        if not sessions:
            return np.zeros(self.mask.shape[1])
        rates = np.array([s.max_rate for s in sessions], dtype=float)
        return rates @ self.mask


@dataclass(frozen=True, eq=False)
class GreenSolution:
    aggregate: np.ndarray
    schedule: DispatchSchedule
    profile: ChargingProfile
    dispersal_residual: float
    solver_backend: SolverBackend
    discretization_mwh: float
    used_direct_incumbent: bool = False

    def to_dict(self) -> dict:
        return {
            "emissions_ton": self.schedule.total_emissions,
            "cost": self.schedule.total_cost,
            "residual_mwh": self.dispersal_residual,
            "backend": self.solver_backend.value,
            "delta_mwh": self.discretization_mwh,
            "used_direct_incumbent": self.used_direct_incumbent,
        }


# ============================================================================
# PHASE 1 SHARED PIECES
# ============================================================================

@dataclass(frozen=True)
class _Instance:
    """Phase-1 inputs reduced to Delta units."""
    load: np.ndarray
    caps: np.ndarray
    cap_units: np.ndarray
    total: float
    units: int
    delta: float

    @property
    def horizon(self) -> int:
        return len(self.load)

    def suffix_units(self) -> np.ndarray:
        """suffix[t] = units that hours t..T-1 can still absorb."""
        return np.concatenate([np.cumsum(self.cap_units[::-1])[::-1], [0]])


def _prepare(load: LoadSeries, sessions: Sequence[ChargingSession], delta: float) -> _Instance:
    if not delta > 0:
        raise DomainError(f"discretization step must be > 0, got {delta}")
    horizon = len(load)
    caps = AvailabilityMask.from_sessions(sessions, horizon).hourly_capacity(sessions)
    total = total_energy(sessions)
    if total > caps.sum() + TOL:
        raise InfeasibleError(f"EV energy {total:.6f} MWh exceeds aggregate charging capability {caps.sum():.6f} MWh")
    cap_units = np.floor(caps / delta + 1e-9).astype(int)
    units = min(int(round(total / delta)), int(cap_units.sum()))
    return _Instance(
        load=load.array,
        caps=caps,
        cap_units=cap_units,
        total=total,
        units=units,
        delta=float(delta),
    )


def _reconcile(instance: _Instance, allocation_units: Sequence[int]) -> np.ndarray:
    """
    Turn a Delta-unit allocation into MWh that sums to the exact EV energy.

    The sub-Delta residue goes to the highest-allocation hours first (earliest
    on ties) without exceeding the hourly capability.
    """
    aggregate = np.asarray(allocation_units, dtype=float) * instance.delta
    residue = instance.total - aggregate.sum()
    if abs(residue) <= 1e-12:
        return aggregate
    order = sorted(range(instance.horizon), key=lambda t: (-aggregate[t], t))
    for t in order:
        if residue > 0:
            step = min(residue, instance.caps[t] - aggregate[t])
        else:
            step = -min(-residue, aggregate[t])
        if step == 0:
            continue
        aggregate[t] += step
        residue -= step
        if abs(residue) <= 1e-12:
            break
    if abs(residue) > TOL:
        raise InfeasibleError(f"cannot place {residue:.6f} MWh of rounding residue within hourly caps")
    logger.debug(f"[GREEN] reconciled rounding residue {instance.total - instance.units * instance.delta:+.6f} MWh")
    return aggregate


# ============================================================================
# PHASE 1: DYNAMIC PROGRAM
# ============================================================================

def optimize_aggregate_dp(
    fleet: Fleet,
    load: LoadSeries,
    sessions: Sequence[ChargingSession],
    delta: float,
) -> np.ndarray:
    """
    Forward DP over hours; state = Delta units allocated so far.

    Among equal-emission trajectories the lexicographically smallest
    allocation wins: predecessors are visited in prefix order and a state is
    only replaced on strict improvement.
    """
    if len(fleet) == 0:
        raise DomainError("fleet is empty")
    instance = _prepare(load, sessions, delta)
    horizon, k = instance.horizon, instance.units
    suffix = instance.suffix_units()
    rates = fleet.emission_rates

    # per stage: cost, stack output, lexicographic rank of the prefix
    cost = np.full(k + 1, np.inf)
    cost[0] = 0.0
    outputs = np.zeros((k + 1, len(fleet)))
    rank = np.zeros(k + 1, dtype=int)
    alive = np.array([0])
    parents: List[np.ndarray] = []
    choices: List[np.ndarray] = []

    for t in range(horizon):
        next_cost = np.full(k + 1, np.inf)
        next_outputs = np.zeros((k + 1, len(fleet)))
        parent = np.full(k + 1, -1)
        choice = np.full(k + 1, -1)
        for s in alive[np.argsort(rank[alive], kind="stable")]:
            low = max(0, k - s - suffix[t + 1])
            high = min(instance.cap_units[t], k - s)
            if low > high:
                continue
            xs = np.arange(low, high + 1)
            prev = outputs[s] if t > 0 else None
            stack, feasible = fill_stack(fleet, prev, instance.load[t] + xs * instance.delta)
            candidate = np.where(feasible, cost[s] + stack @ rates, np.inf)
            targets = s + xs
            incumbent = next_cost[targets]
            threshold = np.full(incumbent.shape, np.inf)
            reached = np.isfinite(incumbent)
            threshold[reached] = incumbent[reached] - TIE_RELATIVE_TOL * np.maximum(1.0, np.abs(incumbent[reached]))
            better = candidate < threshold
            improved = targets[better]
            next_cost[improved] = candidate[better]
            next_outputs[improved] = stack[better]
            parent[improved] = s
            choice[improved] = xs[better]

        alive = np.flatnonzero(np.isfinite(next_cost))
        if alive.size == 0:
            raise InfeasibleError("no dispatch-feasible charging allocation", hour=t)
        # new prefix rank: by (parent prefix rank, units chosen now)
        order = np.lexsort((choice[alive], rank[parent[alive]]))
        next_rank = np.zeros(k + 1, dtype=int)
        next_rank[alive[order]] = np.arange(alive.size)
        cost, outputs, rank = next_cost, next_outputs, next_rank
        parents.append(parent)
        choices.append(choice)

    if not np.isfinite(cost[k]):
        raise InfeasibleError("no dispatch-feasible allocation delivers the full EV energy")

    allocation = [0] * horizon
    state = k
    for t in range(horizon - 1, -1, -1):
        allocation[t] = int(choices[t][state])
        state = int(parents[t][state])

    logger.debug(f"[GREEN] dp T={horizon} units={k} delta={delta} emissions={cost[k]:.6f}")
    return _reconcile(instance, allocation)


# ============================================================================
# PHASE 1: EXACT SEARCH
# ============================================================================

def count_allocations(cap_units: Sequence[int], units: int) -> int:
    """Number of integer vectors x with 0 <= x_t <= cap_t and sum x = units."""
    ways = np.zeros(units + 1, dtype=object)
    ways[0] = 1
    for cap in cap_units:
        nxt = np.zeros(units + 1, dtype=object)
        for s in range(units + 1):
            if ways[s]:
                top = min(int(cap), units - s)
                nxt[s:s + top + 1] += ways[s]
        ways = nxt
    return int(ways[units])


def optimize_aggregate_exact(
    fleet: Fleet,
    load: LoadSeries,
    sessions: Sequence[ChargingSession],
    delta: float,
) -> np.ndarray:
    """
    Global minimizer over the Delta grid, found by depth-first search in
    lexicographic order with pruning on the partial emissions.

    Only for small instances; raises InstanceTooLarge otherwise.
    """
    if len(fleet) == 0:
        raise DomainError("fleet is empty")
    if len(fleet) > EXACT_MAX_GENERATORS or len(load) > EXACT_MAX_HOURS:
        raise InstanceTooLarge(
            f"exact backend handles J <= {EXACT_MAX_GENERATORS} and T <= {EXACT_MAX_HOURS}, "
            f"got J={len(fleet)} T={len(load)}; use the dp backend"
        )
    instance = _prepare(load, sessions, delta)
    n_allocations = count_allocations(instance.cap_units, instance.units)
    if n_allocations > EXACT_MAX_ALLOCATIONS:
        raise InstanceTooLarge(
            f"{n_allocations} allocations exceed the exact-search limit of {EXACT_MAX_ALLOCATIONS}; "
            f"use the dp backend or a coarser delta"
        )

    horizon, k = instance.horizon, instance.units
    suffix = instance.suffix_units()
    rates = fleet.emission_rates
    best_cost = math.inf
    best: Optional[List[int]] = None
    path: List[int] = []

    def improves(value: float) -> bool:
        if not math.isfinite(best_cost):
            return True
        return value < best_cost - TIE_RELATIVE_TOL * max(1.0, abs(best_cost))

    def search(t: int, allocated: int, prev: Optional[np.ndarray], partial: float) -> None:
        nonlocal best_cost, best
        if t == horizon:
            if improves(partial):
                best_cost, best = partial, list(path)
            return
        low = max(0, k - allocated - suffix[t + 1])
        high = min(instance.cap_units[t], k - allocated)
        if low > high:
            return
        xs = np.arange(low, high + 1)
        stack, feasible = fill_stack(fleet, prev, instance.load[t] + xs * instance.delta)
        hour_emissions = stack @ rates
        for index, x in enumerate(xs):
            if not feasible[index]:
                continue
            value = partial + hour_emissions[index]
            # emissions are non-negative, so a prefix that cannot beat best never will
            if not improves(value):
                continue
            path.append(int(x))
            search(t + 1, allocated + int(x), stack[index], value)
            path.pop()

    search(0, 0, None, 0.0)
    if best is None:
        raise InfeasibleError("no dispatch-feasible allocation delivers the full EV energy")
    logger.debug(f"[GREEN] exact T={horizon} units={k} allocations={n_allocations} emissions={best_cost:.6f}")
    return _reconcile(instance, best)


OPTIMIZERS = {
    SolverBackend.DP: optimize_aggregate_dp,
    SolverBackend.EXACT: optimize_aggregate_exact,
}


# ============================================================================
# PHASE 2: DISPERSAL
# ============================================================================

def disperse(g_star: Sequence[float], sessions: Sequence[ChargingSession]) -> Tuple[ChargingProfile, float]:
    """
    Split G* across vehicles, minimizing the L1 hourly deviation.

    Flow network: vehicle (supply E_i) -> hour in window (cap m_i) -> sink,
    where each hour has a free arc up to G*(t) and a priced overflow arc.
    Returns the profile and the residual sum_t |sum_i g_i(t) - G*(t)|.
    """
    g_star = np.asarray(g_star, dtype=float)
    horizon = len(g_star)
    if horizon == 0:
        raise DomainError("G* is empty")
    if np.any(g_star < -TOL):
        raise DomainError("G* must be non-negative")
    check_horizon(sessions, horizon)
    energy = total_energy(sessions)
    if abs(energy - g_star.sum()) > TOL:
        raise ContractViolation(
            f"sum of requests {energy!r} MWh != sum of G* {g_star.sum()!r} MWh"
        )
    if not sessions:
        return ChargingProfile.empty(horizon), float(np.abs(g_star).sum())

    n = len(sessions)
    sink = n + horizon
    tails, heads, capacities, costs = [], [], [], []
    for i, s in enumerate(sessions):
        rate_units = math.ceil(s.max_rate * FLOW_SCALE)
        for t in range(s.arrival, s.departure):
            tails.append(i)
            heads.append(n + t)
            capacities.append(rate_units)
            costs.append(0)
    supplies = np.array([math.floor(s.energy_request * FLOW_SCALE) for s in sessions], dtype=np.int64)
    demand_units = int(supplies.sum())
    targets = np.floor(np.clip(g_star, 0.0, None) * FLOW_SCALE).astype(np.int64)
    for t in range(horizon):
        tails += [n + t, n + t]
        heads += [sink, sink]
        capacities += [int(targets[t]), demand_units]
        costs += [0, OVERFLOW_UNIT_COST]

    smcf = min_cost_flow.SimpleMinCostFlow()
    arcs = smcf.add_arcs_with_capacity_and_unit_cost(
        np.array(tails, dtype=np.int32),
        np.array(heads, dtype=np.int32),
        np.array(capacities, dtype=np.int64),
        np.array(costs, dtype=np.int64),
    )
    node_supplies = np.concatenate([supplies, np.zeros(horizon, dtype=np.int64), [-demand_units]])
    smcf.set_nodes_supplies(np.arange(sink + 1, dtype=np.int32), node_supplies.astype(np.int64))
    status = smcf.solve()
    if status != smcf.OPTIMAL:
        raise InfeasibleError(f"dispersal flow has no feasible solution (status {status})")

    flows = smcf.flows(arcs[:len(arcs) - 2 * horizon])
    rows = {}
    position = 0
    for s in sessions:
        width = s.window_hours
        g = np.zeros(horizon)
        window = np.minimum(flows[position:position + width] / FLOW_SCALE, s.max_rate)
        position += width
        # undo the flooring of E_i: top up the largest hours that still have room
        shortfall = s.energy_request - window.sum()
        for t in np.argsort(-window, kind="stable"):
            if shortfall <= 0:
                break
            step = min(shortfall, s.max_rate - window[t])
            window[t] += step
            shortfall -= step
        g[s.arrival:s.departure] = window
        rows[s.vehicle_id] = g
    profile = ChargingProfile.from_rows(rows, horizon)
    residual = float(np.abs(profile.aggregate - g_star).sum())
    logger.debug(f"[GREEN] dispersed {n} vehicles, residual={residual:.6f} MWh")
    return profile, residual


# ============================================================================
# COMPOSITION
# ============================================================================

def _check_solution(
    fleet: Fleet,
    load: LoadSeries,
    sessions: Sequence[ChargingSession],
    solution: GreenSolution,
) -> None:
    caps = AvailabilityMask.from_sessions(sessions, len(load)).hourly_capacity(sessions)
    if np.any(solution.aggregate > caps + TOL):
        raise ContractViolation("G* exceeds the aggregate charging capability")
    if abs(solution.aggregate.sum() - total_energy(sessions)) > TOL:
        raise ContractViolation("G* does not deliver the total EV energy")
    if solution.dispersal_residual < 0:
        raise ContractViolation("negative dispersal residual")
    problems = validate_schedule(fleet, DemandSeries.of(load.array + solution.aggregate), solution.schedule)
    if problems:
        raise ContractViolation(f"green schedule breaks dispatch invariants: {problems[0]}")


def green_run(
    fleet: Fleet,
    load: LoadSeries,
    sessions: Sequence[ChargingSession],
    backend: SolverBackend | str = SolverBackend.DP,
    delta: float = 1.0,
) -> GreenSolution:
    backend = SolverBackend(backend)
    optimizer = OPTIMIZERS[backend]

    try:
        direct_schedule, direct_charging = direct_run(fleet, load, sessions)
    except InfeasibleError:
        direct_schedule, direct_charging = None, None

    used_direct = False
    try:
        aggregate = optimizer(fleet, load, sessions, delta)
        schedule = dispatch(fleet, load.array + aggregate)
    except InfeasibleError as e:
        if direct_schedule is None:
            raise
        logger.warning(f"[GREEN] {backend.value} optimizer failed ({e}); using the direct profile")
        aggregate, schedule, used_direct = direct_charging.aggregate, direct_schedule, True
    else:
        if direct_schedule is not None and direct_schedule.total_emissions < schedule.total_emissions:
            logger.debug(
                f"[GREEN] direct profile beats {backend.value} result "
                f"({direct_schedule.total_emissions:.6f} < {schedule.total_emissions:.6f}); keeping direct"
            )
            aggregate, schedule, used_direct = direct_charging.aggregate, direct_schedule, True

    aggregate = np.asarray(aggregate, dtype=float)
    profile, residual = disperse(aggregate, sessions)
    solution = GreenSolution(
        aggregate=aggregate,
        schedule=schedule,
        profile=profile,
        dispersal_residual=residual,
        solver_backend=backend,
        discretization_mwh=float(delta),
        used_direct_incumbent=used_direct,
    )
    _check_solution(fleet, load, sessions, solution)
    logger.debug(
        f"[GREEN] backend={backend.value} delta={delta} emissions={schedule.total_emissions:.3f} t "
        f"residual={residual:.6f} MWh"
    )
    return solution


def write_g_star(aggregate: Sequence[float], path: Path | str) -> Path:
    path = Path(path)
    frame = pd.DataFrame({"hour": np.arange(len(aggregate)), "g_star_mwh": np.asarray(aggregate, dtype=float)})
    write_frame_atomic(path, frame)
    logger.info(f"[GREEN] Wrote G* ({len(aggregate)}h) to {path}")
    return path
