"""Closed-loop races, lap detection, lap statistics and method comparison."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from .config import RunConfig
from .errors import NoCompletedLapsError, OffTrackError, RaceAbortedError, SolverFailureError
from .planner import HorizonPlan, Planner, PlannerMode, contour_lag_errors
from .track import TrackModel
from .vehicle import ControlInput, VehicleState, plant_step

logger = logging.getLogger(__name__)

DISTANCE_TOLERANCE = 0.15
MAX_CONSECUTIVE_FAILURES = 2


@dataclass(frozen=True)
class CycleRecord:
    """One control cycle: the state at time ``t`` and the command applied from it."""

    t: float
    state: VehicleState
    command: ControlInput
    xi_con: float
    xi_lag: float
    beta: float
    solve_time: float
    solver_status: str
    iterations: int = 0
    path_speed: float = float("nan")  # plant-integrated speed over the following period


@dataclass(frozen=True)
class LapBoundary:
    """Start-line crossing: first sample at or past the line, and the interpolated crossing time."""

    index: int
    time: float


class LapStats(BaseModel):
    """Per-lap times and mean velocities with their max/min/mean rows."""

    lap_times: list[float] = Field(default_factory=list, description="Seconds per counted lap")
    velocities: list[float] = Field(
        default_factory=list, description="Mean commanded v_l per lap, m/s"
    )
    path_velocities: list[float] = Field(
        default_factory=list, description="Mean plant-integrated path speed per lap, m/s"
    )
    lap_time_max: float | None = None
    lap_time_min: float | None = None
    lap_time_mean: float | None = None
    velocity_max: float | None = None
    velocity_min: float | None = None
    velocity_mean: float | None = None

    @classmethod
    def from_laps(
        cls,
        lap_times: Sequence[float],
        velocities: Sequence[float],
        path_velocities: Sequence[float] = (),
    ) -> LapStats:
        lap_times = [float(t) for t in lap_times]
        velocities = [float(v) for v in velocities]
        if not lap_times:
            return cls(path_velocities=[float(v) for v in path_velocities])
        return cls(
            lap_times=lap_times,
            velocities=velocities,
            path_velocities=[float(v) for v in path_velocities],
            lap_time_max=max(lap_times),
            lap_time_min=min(lap_times),
            lap_time_mean=float(np.mean(lap_times)),
            velocity_max=max(velocities),
            velocity_min=min(velocities),
            velocity_mean=float(np.mean(velocities)),
        )

    @property
    def n_laps(self) -> int:
        return len(self.lap_times)


class ComparisonReport(BaseModel):
    """Baseline versus candidate lap statistics with relative changes in percent."""

    baseline_method: str
    candidate_method: str
    baseline: LapStats
    candidate: LapStats
    lap_time_change_pct: float = Field(
        description="(baseline - candidate) / baseline of the mean lap time, one decimal"
    )
    velocity_change_pct: float = Field(
        description="(candidate - baseline) / baseline of the mean velocity, one decimal"
    )
    row_changes: dict[str, dict[str, float]] = Field(
        default_factory=dict,
        description="Relative changes of every max/min/mean row, one decimal"
    )

    def summary(self) -> str:
        def arrow(value: float) -> str:
            return f"{'↑' if value >= 0 else '↓'}{abs(value):.1f}%"

        return (
            f"{self.candidate_method} vs {self.baseline_method}: "
            f"mean lap time {self.candidate.lap_time_mean:.3f} s vs {self.baseline.lap_time_mean:.3f} s "
            f"({arrow(self.lap_time_change_pct)}), "
            f"mean velocity {self.candidate.velocity_mean:.3f} m/s vs "
            f"{self.baseline.velocity_mean:.3f} m/s ({arrow(self.velocity_change_pct)})"
        )


@dataclass
class RaceResult:
    method: str
    records: list[CycleRecord]
    boundaries: list[LapBoundary]
    stats: LapStats


def detect_lap_completion(
    progress: Sequence[float],
    total_length: float,
    times: Sequence[float] | None = None,
) -> list[LapBoundary]:
    """Lap k completes at the first sample with unwrapped progress >= k * total_length.

    Crossing times are interpolated linearly between the bracketing samples;
    without ``times`` the sample index serves as time.
    """
    s = np.asarray(progress, dtype=float)
    t = np.arange(s.size, dtype=float) if times is None else np.asarray(times, dtype=float)
    if t.shape != s.shape:
        raise ValueError("progress and times must have the same length")
    if s.size == 0:
        return []

    # running maximum makes transient decreases harmless
    peak = np.maximum.accumulate(s)
    boundaries: list[LapBoundary] = []
    lap = 1
    while True:
        line = lap * total_length
        hits = np.flatnonzero(peak >= line)
        if hits.size == 0:
            break
        j = int(hits[0])
        if j == 0 or s[j] == line:
            crossing = float(t[j])
        else:
            s0, s1 = s[j - 1], s[j]
            crossing = float(t[j - 1] + (line - s0) / (s1 - s0) * (t[j] - t[j - 1]))
        boundaries.append(LapBoundary(index=j, time=crossing))
        lap += 1
    return boundaries


def compute_stats(
    records: Sequence[CycleRecord],
    lap_boundaries: Sequence[LapBoundary],
    total_length: float | None = None,
) -> LapStats:
    """Statistics of the laps between consecutive boundaries.

    The first boundary closes the launch lap, so N boundaries give N - 1
    counted laps. With ``total_length`` the distance-consistency check runs.
    """
    if len(lap_boundaries) < 2:
        raise NoCompletedLapsError(
            f"Need at least two start-line crossings, got {len(lap_boundaries)}"
        )
    lap_times = []
    velocities = []
    path_velocities = []
    for start, end in zip(lap_boundaries[:-1], lap_boundaries[1:]):
        lap_times.append(end.time - start.time)
        cycles = records[start.index : end.index]
        velocities.append(float(np.mean([r.command.v_l for r in cycles])) if cycles else float("nan"))
        speeds = [r.path_speed for r in cycles if math.isfinite(r.path_speed)]
        path_velocities.append(float(np.mean(speeds)) if speeds else float("nan"))

    stats = LapStats.from_laps(lap_times, velocities, path_velocities)
    if total_length is not None:
        check_distance_consistency(stats, total_length)
    return stats


def check_distance_consistency(stats: LapStats, total_length: float) -> bool:
    """Mean velocity times mean lap time should land within 15% of the track length."""
    if stats.velocity_mean is None or stats.lap_time_mean is None:
        return True
    distance = stats.velocity_mean * stats.lap_time_mean
    ok = abs(distance - total_length) <= DISTANCE_TOLERANCE * total_length
    if not ok:
        logger.warning(
            f"Mean velocity x mean lap time = {distance:.2f} m, "
            f"outside {DISTANCE_TOLERANCE:.0%} of track length {total_length:.2f} m"
        )
    return ok


def initial_state(track: TrackModel) -> VehicleState:
    """At rest on the centerline at s = 0, heading along the track."""
    pose = track.sample(0.0)
    return VehicleState(pose.x, pose.y, pose.heading, 0.0)


def run_race(
    track: TrackModel,
    planner_mode: PlannerMode | str,
    config: RunConfig,
    n_laps: int | None = None,
    seed: int | None = None,
) -> RaceResult:
    """Closed-loop race: plan, apply the first command to the plant, record; repeat.

    Runs until ``n_laps`` laps after the launch lap are complete.
    """
    mode = PlannerMode(planner_mode)
    n_laps = config.n_laps if n_laps is None else n_laps
    seed = config.seed if seed is None else seed
    planner = config.build_planner(track, mode)
    t_s = planner.horizon.t_s
    vehicle = planner.vehicle
    disturbance = config.disturbance()
    rng = np.random.default_rng(seed)
    reanchor = config.harness.reanchor_progress
    length = track.total_length
    max_cycles = int(math.ceil((n_laps + 1) * config.harness.max_lap_time / t_s))

    state = initial_state(track)
    plan: HorizonPlan | None = None
    command: ControlInput | None = None
    failures = 0
    records: list[CycleRecord] = []
    crossings = 0
    logger.info(f"Race start: {mode.value}, {n_laps} counted laps, seed {seed}")

    for cycle in range(max_cycles):
        t = cycle * t_s
        xi_con, xi_lag = contour_lag_errors(state, track)
        try:
            plan = planner.solve_step(state, plan, command)
        except SolverFailureError as e:
            failures += 1
            if failures >= MAX_CONSECUTIVE_FAILURES:
                raise RaceAbortedError(
                    f"{mode.value}: {failures} consecutive solver failures at t={t:.2f} s: {e}",
                    method=mode.value,
                    records=records,
                ) from e
            if command is None:
                v_l, v_p = planner.bounds.v_under
                command = ControlInput(v_l, 0.0, v_p)
            logger.warning(f"{mode.value}: solve failed at t={t:.2f} s, reapplying previous command")
            plan = None
            beta, solve_time, status, iterations = float("nan"), float("nan"), "SolverFailure", 0
        except OffTrackError as e:
            raise RaceAbortedError(
                f"{mode.value}: off track at t={t:.2f} s: {e}", method=mode.value, records=records
            ) from e
        else:
            failures = 0
            command = plan.command
            beta = float(np.mean(plan.beta))
            solve_time = plan.solve_time
            status = plan.solver_status.value
            iterations = plan.iterations

        nxt = plant_step(state, command, vehicle, t_s, disturbance, rng)
        path_speed = math.hypot(nxt.x - state.x, nxt.y - state.y) / t_s
        records.append(
            CycleRecord(
                t=t,
                state=state,
                command=command,
                xi_con=xi_con,
                xi_lag=xi_lag,
                beta=beta,
                solve_time=solve_time,
                solver_status=status,
                iterations=iterations,
                path_speed=path_speed,
            )
        )
        if reanchor:
            s = track.unwrap_progress(track.foot_point(nxt.x, nxt.y, nxt.progress), nxt.progress)
            nxt = VehicleState(nxt.x, nxt.y, nxt.heading, s)
        state = nxt

        while state.progress >= (crossings + 1) * length:
            crossings += 1
            if crossings > 1:
                logger.info(f"{mode.value}: lap {crossings - 1} complete at t={t + t_s:.2f} s")
        if crossings >= n_laps + 1:
            # closing sample at or past the final line
            xi_con, xi_lag = contour_lag_errors(state, track)
            records.append(
                CycleRecord(
                    t=t + t_s,
                    state=state,
                    command=command,
                    xi_con=xi_con,
                    xi_lag=xi_lag,
                    beta=beta,
                    solve_time=float("nan"),
                    solver_status="Finished",
                )
            )
            break
    else:
        raise RaceAbortedError(
            f"{mode.value}: {n_laps} laps not completed within {max_cycles} cycles",
            method=mode.value,
            records=records,
        )

    boundaries = detect_lap_completion(
        [r.state.progress for r in records], length, [r.t for r in records]
    )
    stats = compute_stats(records, boundaries, length) if n_laps > 0 else LapStats()
    logger.info(
        f"Race finished: {mode.value}, {stats.n_laps} laps"
        + (f", mean lap {stats.lap_time_mean:.3f} s" if stats.lap_time_mean is not None else "")
    )
    return RaceResult(method=mode.value, records=records, boundaries=boundaries, stats=stats)


def _relative(baseline: float | None, candidate: float | None, lower_is_better: bool) -> float:
    if baseline is None or candidate is None or baseline == 0:
        return float("nan")
    change = (baseline - candidate) if lower_is_better else (candidate - baseline)
    return round(100.0 * change / baseline, 1)


def build_report(
    baseline: LapStats, candidate: LapStats, baseline_method: str, candidate_method: str
) -> ComparisonReport:
    rows = {
        "lap_time": {
            agg: _relative(
                getattr(baseline, f"lap_time_{agg}"), getattr(candidate, f"lap_time_{agg}"), True
            )
            for agg in ("max", "min", "mean")
        },
        "velocity": {
            agg: _relative(
                getattr(baseline, f"velocity_{agg}"), getattr(candidate, f"velocity_{agg}"), False
            )
            for agg in ("max", "min", "mean")
        },
    }
    return ComparisonReport(
        baseline_method=baseline_method,
        candidate_method=candidate_method,
        baseline=baseline,
        candidate=candidate,
        lap_time_change_pct=rows["lap_time"]["mean"],
        velocity_change_pct=rows["velocity"]["mean"],
        row_changes=rows,
    )


def compare(
    track: TrackModel,
    config: RunConfig,
    n_laps: int | None = None,
    seed: int | None = None,
    baseline: PlannerMode = PlannerMode.MPCC,
    candidate: PlannerMode = PlannerMode.CIMPCC,
) -> tuple[ComparisonReport, RaceResult, RaceResult]:
    """Race ``baseline`` then ``candidate`` under the same track, config and seed."""
    base = run_race(track, baseline, config, n_laps, seed)
    cand = run_race(track, candidate, config, n_laps, seed)
    if base.stats.n_laps == 0 or cand.stats.n_laps == 0:
        raise NoCompletedLapsError("Comparison needs at least one counted lap per method")
    report = build_report(base.stats, cand.stats, base.method, cand.method)
    logger.info(report.summary())
    return report, base, cand
