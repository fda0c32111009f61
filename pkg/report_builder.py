"""
report_builder.py - Comparison statistics and report files

summarize() pairs the direct and emission rows of each (date, scenario) and
computes:
- savings_pct = (total emissions under emission scheme - under direct) / under direct x 100
  (negative = savings)
- ev_savings_pct, the same ratio on EV emissions only (run total minus
  dispatching the net load alone)
- mean savings per scenario over significant days (|delta CO2| > threshold)
- savings histogram per scenario, daily-emissions histogram and its mode
- mean aggregate charging profile per (scenario, scheme)

emit_reports() writes every file atomically under one output-dir lock.
Floats are written at full precision, so recomputing from the CSVs gives the
same numbers as summary.json.
"""

from __future__ import annotations

import io
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from loguru import logger

from atomic_io import (
    output_lock,
    read_jsonl,
    write_bytes_atomic,
    write_frame_atomic,
    write_json_atomic,
    write_jsonl_atomic,
)
from direct_scheduler import profile_to_frames
from dispatch_engine import write_schedule
from green_scheduler import write_g_star
from grid_errors import DataValidationError, DomainError
from grid_model import (
    Fleet,
    LoadSeries,
    ThresholdReport,
    load_histogram,
    marginal_emission_curve,
    parse_float,
    read_checked_csv,
)
from simulator import DailyResult, DayRun

# fixed hash salt and no date stamp keep SVG output byte-stable
plt.rcParams["svg.hashsalt"] = "gridshift"
SVG_METADATA = {"Date": None}

DAILY_COLUMNS = ["date", "scenario", "scheme", "emissions_ton", "cost", "residual_mwh", "base_emissions_ton"]
SUMMARY_KEYS = ("mean_savings_pct_day", "mean_savings_pct_night", "significant_fraction", "n_days", "threshold_ton")
EV_SUMMARY_KEYS = ("mean_ev_savings_pct_day", "mean_ev_savings_pct_night")


@dataclass(frozen=True)
class SavingsPair:
    date: date
    scenario: str
    direct_ton: float
    emission_ton: float
    savings_pct: float
    significant: bool
    ev_savings_pct: float = 0.0


@dataclass(frozen=True)
class HistogramBin:
    left: float
    right: float
    count: int


@dataclass
class ComparisonSummary:
    mean_savings_pct_day: float
    mean_savings_pct_night: float
    significant_fraction: float
    n_days: int
    threshold_ton: float
    mean_ev_savings_pct_day: float = 0.0
    mean_ev_savings_pct_night: float = 0.0
    pairs: List[SavingsPair] = field(default_factory=list)
    savings_histograms: Dict[str, List[HistogramBin]] = field(default_factory=dict)
    emissions_histograms: Dict[Tuple[str, str], List[HistogramBin]] = field(default_factory=dict)
    emission_modes: Dict[Tuple[str, str], float] = field(default_factory=dict)
    mean_profiles: Dict[Tuple[str, str], np.ndarray] = field(default_factory=dict)
    profile_day_counts: Dict[Tuple[str, str], int] = field(default_factory=dict)

    @property
    def significant_day_fraction(self) -> float:
        return self.significant_fraction

    def to_dict(self) -> "OrderedDict[str, object]":
        """summary.json content: the stable keys, the EV-only savings, then the emission modes."""
        data: "OrderedDict[str, object]" = OrderedDict(
            (key, getattr(self, key)) for key in SUMMARY_KEYS + EV_SUMMARY_KEYS
        )
        for (scenario, scheme), mode in sorted(self.emission_modes.items()):
            data[f"mode_emissions_ton_{scenario}_{scheme}"] = mode
        return data

    def __str__(self) -> str:
        return (
            f"Summary(n_days={self.n_days}, day={self.mean_savings_pct_day:.2f}%, "
            f"night={self.mean_savings_pct_night:.2f}%, significant={self.significant_day_fraction:.1%})"
        )


# ============================================================================
# STATISTICS
# ============================================================================

def savings_pct(direct_ton: float, emission_ton: float) -> float:
    if direct_ton == 0:
        return 0.0
    return (emission_ton - direct_ton) / direct_ton * 100.0


def floor_histogram(values: Sequence[float], bin_width: float) -> List[HistogramBin]:
    """Contiguous bins [k*w, (k+1)*w) from the lowest to the highest value."""
    if not bin_width > 0:
        raise DomainError(f"bin width must be > 0, got {bin_width}")
    if not values:
        return []
    indices = np.floor(np.asarray(values, dtype=float) / bin_width).astype(int)
    low, high = int(indices.min()), int(indices.max())
    counts = np.bincount(indices - low, minlength=high - low + 1)
    return [
        HistogramBin(left=k * bin_width, right=(k + 1) * bin_width, count=int(counts[k - low]))
        for k in range(low, high + 1)
    ]


def histogram_mode(bins: Sequence[HistogramBin]) -> Optional[float]:
    """Centre of the fullest bin (lowest bin on ties)."""
    if not bins:
        return None
    best = max(bins, key=lambda b: (b.count, -b.left))
    return (best.left + best.right) / 2.0


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def summarize(
    results: Sequence[DailyResult],
    bin_pct: float = 1.0,
    significance_ton: float = 0.01,
    emissions_bin_ton: float = 10.0,
) -> ComparisonSummary:
    by_key: Dict[Tuple[date, str], Dict[str, DailyResult]] = {}
    for result in results:
        by_key.setdefault((result.date, result.scenario), {})[result.scheme] = result

    pairs: List[SavingsPair] = []
    for (day, scenario), schemes in by_key.items():
        if "emission" not in schemes:
            continue
        if "direct" not in schemes:
            raise DataValidationError(f"{day.isoformat()} {scenario}: emission result has no direct counterpart")
        direct, emission = schemes["direct"], schemes["emission"]
        pairs.append(SavingsPair(
            date=day,
            scenario=scenario,
            direct_ton=direct.emissions_ton,
            emission_ton=emission.emissions_ton,
            savings_pct=savings_pct(direct.emissions_ton, emission.emissions_ton),
            significant=abs(emission.emissions_ton - direct.emissions_ton) > significance_ton,
            ev_savings_pct=savings_pct(direct.ev_emissions_ton, emission.ev_emissions_ton),
        ))

    def scenario_mean(scenario: str, attr: str = "savings_pct") -> float:
        return _mean([getattr(p, attr) for p in pairs if p.scenario == scenario and p.significant])

    scenarios = sorted({p.scenario for p in pairs})
    savings_histograms = {
        scenario: floor_histogram([p.savings_pct for p in pairs if p.scenario == scenario], bin_pct)
        for scenario in scenarios
    }

    groups: Dict[Tuple[str, str], List[DailyResult]] = {}
    for result in results:
        groups.setdefault((result.scenario, result.scheme), []).append(result)

    emissions_histograms = {}
    emission_modes = {}
    mean_profiles = {}
    profile_day_counts = {}
    for key in sorted(groups):
        rows = groups[key]
        bins = floor_histogram([r.ev_emissions_ton for r in rows], emissions_bin_ton)
        emissions_histograms[key] = bins
        emission_modes[key] = histogram_mode(bins)
        profiles = [r.aggregate_profile for r in rows if r.aggregate_profile]
        if profiles:
            if len({len(p) for p in profiles}) != 1:
                raise DataValidationError(f"{key[0]}/{key[1]}: aggregate profiles have different lengths")
            matrix = np.asarray(profiles, dtype=float)
            mean_profiles[key] = np.array([math.fsum(column) for column in matrix.T]) / len(profiles)
            profile_day_counts[key] = len(profiles)

    n_days = len(pairs)
    summary = ComparisonSummary(
        mean_savings_pct_day=scenario_mean("day"),
        mean_savings_pct_night=scenario_mean("night"),
        significant_fraction=(sum(p.significant for p in pairs) / n_days) if n_days else 0.0,
        n_days=n_days,
        threshold_ton=float(significance_ton),
        mean_ev_savings_pct_day=scenario_mean("day", "ev_savings_pct"),
        mean_ev_savings_pct_night=scenario_mean("night", "ev_savings_pct"),
        pairs=pairs,
        savings_histograms=savings_histograms,
        emissions_histograms=emissions_histograms,
        emission_modes=emission_modes,
        mean_profiles=mean_profiles,
        profile_day_counts=profile_day_counts,
    )
    logger.info(f"[REPORT] {summary}")
    return summary


# ============================================================================
# SVG RENDERS
# ============================================================================

def _svg_bytes(fig) -> bytes:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return buffer.getvalue()


def render_bars(bins: Dict[str, List[HistogramBin]], xlabel: str, title: str) -> bytes:
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, series in bins.items():
        if series:
            ax.bar(
                [b.left for b in series],
                [b.count for b in series],
                width=[b.right - b.left for b in series],
                align="edge",
                alpha=0.6,
                label=label,
            )
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    if any(bins.values()):
        ax.legend(frameon=False)
    return _svg_bytes(fig)


def render_lines(series: Dict[str, Tuple[Sequence[float], Sequence[float]]], xlabel: str, ylabel: str,
                 title: str, step: bool = False) -> bytes:
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, (xs, ys) in series.items():
        if step:
            ax.step(xs, ys, where="pre", label=label)
        else:
            ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    return _svg_bytes(fig)


# ============================================================================
# FRAMES
# ============================================================================

def results_frame(results: Sequence[DailyResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in results], columns=DAILY_COLUMNS)


def savings_histogram_frame(summary: ComparisonSummary) -> pd.DataFrame:
    rows = [
        {"bin_left_pct": b.left, "bin_right_pct": b.right, "count": b.count, "scenario": scenario}
        for scenario, bins in summary.savings_histograms.items()
        for b in bins
    ]
    return pd.DataFrame(rows, columns=["bin_left_pct", "bin_right_pct", "count", "scenario"])


def emissions_histogram_frame(summary: ComparisonSummary) -> pd.DataFrame:
    rows = [
        {"scenario": scenario, "scheme": scheme, "bin_left_ton": b.left, "bin_right_ton": b.right, "count": b.count}
        for (scenario, scheme), bins in summary.emissions_histograms.items()
        for b in bins
    ]
    return pd.DataFrame(rows, columns=["scenario", "scheme", "bin_left_ton", "bin_right_ton", "count"])


# ============================================================================
# EMIT
# ============================================================================

def emit_reports(
    summary: ComparisonSummary,
    results: Sequence[DailyResult],
    output_dir: Path | str,
    write_profiles: bool = True,
) -> List[Path]:
    """Write every report file into `output_dir`; returns the paths written."""
    output_dir = Path(output_dir)
    written: List[Path] = []
    with output_lock(output_dir):
        written.append(write_frame_atomic(output_dir / "daily_results.csv", results_frame(results)))
        if write_profiles:
            written.append(write_jsonl_atomic(output_dir / "daily_profiles.jsonl", [r.to_record() for r in results]))
        written.append(write_json_atomic(output_dir / "summary.json", summary.to_dict()))
        written.append(write_frame_atomic(output_dir / "savings_histogram.csv", savings_histogram_frame(summary)))
        written.append(write_frame_atomic(output_dir / "emissions_histogram.csv", emissions_histogram_frame(summary)))

        for (scenario, scheme), profile in summary.mean_profiles.items():
            stem = f"mean_profile_{scenario}_{scheme}"
            frame = pd.DataFrame({"hour": np.arange(len(profile)), "mean_mwh": profile})
            written.append(write_frame_atomic(output_dir / f"{stem}.csv", frame))
            svg = render_lines(
                {f"{scenario}/{scheme}": (np.arange(len(profile)), profile)},
                "hour of horizon", "mean charging (MWh)", f"Mean charging profile: {scenario}, {scheme}",
            )
            written.append(write_bytes_atomic(output_dir / f"{stem}.svg", svg))

        daily_series = {}
        for result in results:
            xs, ys = daily_series.setdefault(f"{result.scenario}/{result.scheme}", ([], []))
            xs.append(len(xs))
            ys.append(result.ev_emissions_ton)
        written.append(write_bytes_atomic(
            output_dir / "daily_results.svg",
            render_lines(daily_series, "simulated day", "EV-attributable CO2 (ton)", "Daily charging emissions"),
        ))
        written.append(write_bytes_atomic(
            output_dir / "savings_histogram.svg",
            render_bars(summary.savings_histograms, "savings (%)", "Emission-oriented vs direct charging"),
        ))
        written.append(write_bytes_atomic(
            output_dir / "emissions_histogram.svg",
            render_bars(
                {f"{sc}/{sch}": bins for (sc, sch), bins in summary.emissions_histograms.items()},
                "daily EV-attributable CO2 (ton)", "Daily emission distribution",
            ),
        ))
    logger.info(f"[REPORT] Wrote {len(written)} report file(s) to {output_dir}")
    return written


def read_daily_results(output_dir: Path | str) -> List[DailyResult]:
    """
    Rebuild DailyResult rows from a previous `compare` output.

    Profiles and the direct-incumbent flag come from daily_profiles.jsonl when
    present; numbers always come from daily_results.csv.
    """
    output_dir = Path(output_dir)
    frame = read_checked_csv(output_dir / "daily_results.csv", DAILY_COLUMNS)
    profiles: Dict[Tuple[str, str, str], Tuple[float, ...]] = {}
    incumbents: Dict[Tuple[str, str, str], bool] = {}
    jsonl = output_dir / "daily_profiles.jsonl"
    if jsonl.exists():
        for record in read_jsonl(jsonl):
            key = (str(record["date"]), str(record["scenario"]), str(record["scheme"]))
            profiles[key] = tuple(float(v) for v in record.get("aggregate_profile", ()))
            incumbents[key] = bool(record.get("used_direct_incumbent", False))

    results = []
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 1
        try:
            day = date.fromisoformat(record["date"].strip())
        except ValueError:
            raise DataValidationError(f"bad date '{record['date']}'", row=row)
        key = (day.isoformat(), record["scenario"].strip(), record["scheme"].strip())
        results.append(DailyResult(
            date=day,
            scenario=key[1],
            scheme=key[2],
            emissions_ton=parse_float(record["emissions_ton"], "emissions_ton", row),
            cost=parse_float(record["cost"], "cost", row),
            residual_mwh=parse_float(record["residual_mwh"], "residual_mwh", row),
            aggregate_profile=profiles.get(key, ()),
            base_emissions_ton=parse_float(record["base_emissions_ton"], "base_emissions_ton", row),
            used_direct_incumbent=incumbents.get(key, False),
        ))
    logger.info(f"[REPORT] Read {len(results)} daily result(s) from {output_dir}")
    return results


# ============================================================================
# LOAD ANALYSIS AND SINGLE-DAY EXPORTS
# ============================================================================

def emit_load_analysis(
    fleet: Fleet,
    series: LoadSeries,
    report: ThresholdReport,
    output_dir: Path | str,
    bin_mw: float = 1000.0,
) -> List[Path]:
    """load_stats.json, load_histogram.csv, marginal_emission_curve.csv and their SVGs."""
    output_dir = Path(output_dir)
    curve = marginal_emission_curve(fleet)
    histogram = load_histogram(series, bin_mw)
    curve_frame = pd.DataFrame({
        "cumulative_capacity_mw": [p.cumulative_capacity_mw for p in curve],
        "marginal_emission_rate": [p.marginal_emission_rate for p in curve],
    })
    histogram_frame = pd.DataFrame(histogram, columns=["bin_left_mw", "bin_right_mw", "count"])
    written: List[Path] = []
    with output_lock(output_dir):
        written.append(write_json_atomic(output_dir / "load_stats.json", report.to_dict()))
        written.append(write_frame_atomic(output_dir / "load_histogram.csv", histogram_frame))
        written.append(write_frame_atomic(output_dir / "marginal_emission_curve.csv", curve_frame))
        written.append(write_bytes_atomic(
            output_dir / "load_histogram.svg",
            render_bars(
                {"net load": [HistogramBin(left, right, count) for left, right, count in histogram]},
                "net load (MW)", f"Hourly net load, threshold {report.threshold_mw:g} MW",
            ),
        ))
        xs = [0.0] + [p.cumulative_capacity_mw for p in curve]
        ys = [curve[0].marginal_emission_rate] + [p.marginal_emission_rate for p in curve]
        written.append(write_bytes_atomic(
            output_dir / "marginal_emission_curve.svg",
            render_lines({"marginal rate": (xs, ys)}, "cumulative capacity (MW)",
                         "emission rate (ton/MWh)", "Marginal emission curve", step=True),
        ))
    logger.info(f"[REPORT] Wrote load analysis to {output_dir}")
    return written


def day_summary_record(run: DayRun) -> dict:
    return {
        "day": run.date.isoformat(),
        "scheme": run.scheme,
        "scenario": run.scenario,
        "emissions_ton": run.schedule.total_emissions,
        "cost": run.schedule.total_cost,
        "residual_mwh": run.green.dispersal_residual if run.green is not None else 0.0,
        "backend": run.green.solver_backend.value if run.green is not None else None,
        "delta_mwh": run.green.discretization_mwh if run.green is not None else None,
        "used_direct_incumbent": run.green.used_direct_incumbent if run.green is not None else None,
    }


def emit_day_exports(fleet: Fleet, runs: Sequence[DayRun], output_dir: Path | str) -> List[Path]:
    """
    Single-day artifacts: `<scheme>/schedule.csv`, `<scheme>/profile_vehicles.csv`,
    `<scheme>/profile_aggregate.csv`, `emission/g_star.csv` and one
    run_summary.jsonl record per scheme at the top level.
    """
    output_dir = Path(output_dir)
    written: List[Path] = []
    with output_lock(output_dir):
        for run in runs:
            scheme_dir = output_dir / run.scheme
            written.append(write_schedule(fleet, run.schedule, scheme_dir / "schedule.csv"))
            vehicles, aggregate = profile_to_frames(run.profile)
            written.append(write_frame_atomic(scheme_dir / "profile_vehicles.csv", vehicles))
            written.append(write_frame_atomic(scheme_dir / "profile_aggregate.csv", aggregate))
            if run.green is not None:
                written.append(write_g_star(run.green.aggregate, scheme_dir / "g_star.csv"))
        written.append(write_jsonl_atomic(output_dir / "run_summary.jsonl", [day_summary_record(r) for r in runs]))
    return written
