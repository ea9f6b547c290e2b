"""Telemetry CSV and JSON documents, and the summaries printed by ``cimpcc report``."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .errors import ParseError
from .harness import CycleRecord, LapStats, compute_stats, detect_lap_completion
from .vehicle import ControlInput, VehicleState

logger = logging.getLogger(__name__)

TELEMETRY_COLUMNS = [
    "t_s",
    "x_m",
    "y_m",
    "heading_rad",
    "s_m",
    "v_l_cmd",
    "delta_cmd",
    "v_p_cmd",
    "xi_con_m",
    "xi_lag_m",
    "beta",
    "solve_time_s",
    "status",
]

# 95th-percentile solve time measured on the onboard computer of the 1:10 car
REFERENCE_P95_SOLVE_TIME = 0.0206


def records_to_frame(records: Sequence[CycleRecord]) -> pd.DataFrame:
    rows = [
        (
            r.t,
            r.state.x,
            r.state.y,
            r.state.heading,
            r.state.progress,
            r.command.v_l,
            r.command.delta,
            r.command.v_p,
            r.xi_con,
            r.xi_lag,
            r.beta,
            r.solve_time,
            r.solver_status,
        )
        for r in records
    ]
    return pd.DataFrame(rows, columns=TELEMETRY_COLUMNS)


def write_telemetry(records: Sequence[CycleRecord], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    records_to_frame(records).to_csv(path, index=False)
    logger.info(f"Wrote {len(records)} telemetry rows to {path}")
    return path


def read_telemetry(path: Path) -> pd.DataFrame:
    """Read a telemetry CSV, checking the header and numeric columns."""
    try:
        frame = pd.read_csv(
            path,
            dtype={"status": str},
            keep_default_na=False,
            na_values=[""],
            float_precision="round_trip",
        )
    except FileNotFoundError as e:
        raise ParseError(f"Telemetry file not found: {path}") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ParseError(f"Cannot parse telemetry {path}: {e}") from e
    if list(frame.columns) != TELEMETRY_COLUMNS:
        raise ParseError(f"{path}: expected header {','.join(TELEMETRY_COLUMNS)}")
    if frame.empty:
        raise ParseError(f"{path}: telemetry has no rows")

    numeric = [c for c in TELEMETRY_COLUMNS if c != "status"]
    converted = frame[numeric].apply(pd.to_numeric, errors="coerce")
    # NaN is legal in beta and solve_time_s; elsewhere it marks a bad field
    strict = [c for c in numeric if c not in ("beta", "solve_time_s")]
    bad = np.flatnonzero(converted[strict].isna().any(axis=1).to_numpy())
    if bad.size:
        raise ParseError(f"{path}: non-numeric field in data row {int(bad[0]) + 1}")
    frame[numeric] = converted
    return frame


def frame_to_records(frame: pd.DataFrame) -> list[CycleRecord]:
    return [
        CycleRecord(
            t=float(row.t_s),
            state=VehicleState(float(row.x_m), float(row.y_m), float(row.heading_rad), float(row.s_m)),
            command=ControlInput(float(row.v_l_cmd), float(row.delta_cmd), float(row.v_p_cmd)),
            xi_con=float(row.xi_con_m),
            xi_lag=float(row.xi_lag_m),
            beta=float(row.beta),
            solve_time=float(row.solve_time_s),
            solver_status=str(row.status),
        )
        for row in frame.itertuples(index=False)
    ]


def stats_from_telemetry(frame: pd.DataFrame, total_length: float) -> LapStats:
    records = frame_to_records(frame)
    boundaries = detect_lap_completion(frame["s_m"].to_numpy(), total_length, frame["t_s"].to_numpy())
    return compute_stats(records, boundaries)


@dataclass(frozen=True)
class SolveTimeSummary:
    count: int
    p50: float
    p95: float
    max: float
    budget: float | None = None
    under_budget: float | None = None  # fraction of solves at or under the budget


def summarize_solve_times(solve_times: Sequence[float], budget: float | None = None) -> SolveTimeSummary:
    """Percentiles over the finite entries; failed and closing rows carry NaN."""
    times = np.asarray(solve_times, dtype=float)
    times = times[np.isfinite(times)]
    if times.size == 0:
        raise ParseError("Telemetry holds no solve times")
    return SolveTimeSummary(
        count=int(times.size),
        p50=float(np.percentile(times, 50)),
        p95=float(np.percentile(times, 95)),
        max=float(times.max()),
        budget=budget,
        under_budget=None if budget is None else float(np.mean(times <= budget)),
    )


def format_report(
    stats: LapStats | None, solve_times: SolveTimeSummary, reference: bool = False
) -> str:
    lines = []
    if stats is not None and stats.n_laps:
        lines.append(f"{'lap':>4}  {'time [s]':>10}  {'v_l [m/s]':>10}")
        for i, (lap_time, v) in enumerate(zip(stats.lap_times, stats.velocities), start=1):
            lines.append(f"{i:>4}  {lap_time:>10.3f}  {v:>10.3f}")
        lines.append(
            f"{'max':>4}  {stats.lap_time_max:>10.3f}  {stats.velocity_max:>10.3f}"
        )
        lines.append(
            f"{'min':>4}  {stats.lap_time_min:>10.3f}  {stats.velocity_min:>10.3f}"
        )
        lines.append(
            f"{'mean':>4}  {stats.lap_time_mean:>10.3f}  {stats.velocity_mean:>10.3f}"
        )
    else:
        lines.append("No completed laps")

    lines.append(
        f"solve time over {solve_times.count} cycles: p50 {solve_times.p50 * 1e3:.2f} ms, "
        f"p95 {solve_times.p95 * 1e3:.2f} ms, max {solve_times.max * 1e3:.2f} ms"
    )
    if solve_times.budget is not None and solve_times.under_budget is not None:
        lines.append(
            f"{solve_times.under_budget:.1%} of solves within {solve_times.budget * 1e3:.1f} ms"
        )
    if reference:
        lines.append(
            f"reference: 95% of solves < {REFERENCE_P95_SOLVE_TIME} s on the onboard "
            f"computer of the 1:10 car; here p95 = {solve_times.p95:.4f} s"
        )
    return "\n".join(lines)


def write_json(document: BaseModel, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def read_stats(path: Path) -> LapStats:
    try:
        return LapStats.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ParseError(f"Cannot read stats {path}: {e}") from e
