"""Command-line front end: ``cimpcc process-track | race | compare | report | init-config``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    RunMode,
    apply_env_overrides,
    create_default_config_file,
    load_config,
    save_config,
)
from .errors import CimpccError, ConfigurationError, ParseError, RaceAbortedError
from .harness import LapStats, build_report, compare, run_race
from .planner import PlannerMode
from .telemetry import (
    format_report,
    read_stats,
    read_telemetry,
    stats_from_telemetry,
    summarize_solve_times,
    write_json,
    write_telemetry,
)
from .track import DEFAULT_MAF_WINDOW, TrackModel, bundled_track_path, load_track

logger = logging.getLogger("cimpcc")

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_ABORTED = 3

RESOLVED_CONFIG_NAME = "config.resolved.yaml"
LAP_TIME_TOLERANCE = 1e-9  # seconds; report vs. stored stats


def _load_run_config(path: Path | None) -> RunConfig:
    config = apply_env_overrides(load_config(path))
    logger.info(f"Mode: {config.mode.value}, laps: {config.n_laps}, seed: {config.seed}")
    return config


def cmd_process_track(
    track_path: Path | None,
    maf_window: int = DEFAULT_MAF_WINDOW,
    resample_spacing: float | None = None,
    out_dir: Path = Path("."),
) -> Path:
    """Write the curvature profile CSV of a track and print its raw curvature range."""
    track = load_track(track_path, window=maf_window, resample_spacing=resample_spacing)
    name = (track_path or bundled_track_path()).stem
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{name}_profile.csv"
    track.profile_frame().to_csv(out_path, index=False)
    raw = track.profile.raw
    print(f"kappa_raw min {raw.min():.6f} 1/m, max {raw.max():.6f} 1/m")
    print(f"Wrote {out_path}")
    return out_path


def cmd_race(config: RunConfig, mode: PlannerMode) -> int:
    track = config.load_track()
    out = config.output_dir
    save_config(config, out / RESOLVED_CONFIG_NAME)
    try:
        result = run_race(track, mode, config)
    except RaceAbortedError as e:
        write_telemetry(e.records, out / f"telemetry_{mode.value}.csv")
        logger.error(str(e))
        return EXIT_ABORTED
    write_telemetry(result.records, out / f"telemetry_{mode.value}.csv")
    write_json(result.stats, out / f"stats_{mode.value}.json")
    return EXIT_OK


def cmd_compare(config: RunConfig, self_compare: bool = False) -> int:
    """Race both methods and write ``comparison.json``.

    ``self_compare`` races CiMPCC once and compares the run with itself.
    """
    if config.mode != RunMode.COMPARE:
        raise ConfigurationError(
            f"compare needs mode {RunMode.COMPARE.value}, config has {config.mode.value}; use race instead"
        )
    track = config.load_track()
    out = config.output_dir
    save_config(config, out / RESOLVED_CONFIG_NAME)
    try:
        if self_compare:
            base = cand = run_race(track, PlannerMode.CIMPCC, config)
            report = build_report(base.stats, cand.stats, base.method, cand.method)
        else:
            report, base, cand = compare(track, config)
    except RaceAbortedError as e:
        write_telemetry(e.records, out / f"telemetry_{e.method}_aborted.csv")
        logger.error(f"{e.method} aborted: {e}")
        return EXIT_ABORTED

    for result in {base.method: base, cand.method: cand}.values():
        write_telemetry(result.records, out / f"telemetry_{result.method}.csv")
        write_json(result.stats, out / f"stats_{result.method}.json")
    write_json(report, out / "comparison.json")
    print(report.summary())
    return EXIT_OK


def _report_track(telemetry_path: Path, track_path: Path | None) -> TrackModel:
    if track_path is not None:
        return load_track(track_path)
    resolved = telemetry_path.parent / RESOLVED_CONFIG_NAME
    if resolved.exists():
        logger.info(f"Track settings from {resolved}")
        return load_config(resolved).load_track()
    logger.warning(f"No --track and no {RESOLVED_CONFIG_NAME} beside {telemetry_path}; using the bundled track")
    return load_track(None)


def _check_stored_stats(stats: LapStats | None, telemetry_path: Path) -> None:
    """Compare recomputed lap times with the race's ``stats_<method>.json``, if present."""
    method = telemetry_path.stem.removeprefix("telemetry_")
    stats_path = telemetry_path.with_name(f"stats_{method}.json")
    if method == telemetry_path.stem or not stats_path.exists():
        return
    stored = read_stats(stats_path)
    recomputed = stats.lap_times if stats is not None else []
    if len(recomputed) != len(stored.lap_times) or not np.allclose(
        recomputed, stored.lap_times, rtol=0.0, atol=LAP_TIME_TOLERANCE
    ):
        raise ParseError(
            f"Lap times from {telemetry_path.name} {recomputed} "
            f"disagree with {stats_path.name} {stored.lap_times}"
        )
    logger.info(f"Lap times agree with {stats_path.name}")


def cmd_report(
    telemetry_path: Path,
    track_path: Path | None = None,
    budget: float | None = None,
    reference: bool = False,
) -> str:
    """Print lap and solve-time summaries recomputed from a telemetry CSV."""
    frame = read_telemetry(telemetry_path)
    track = _report_track(telemetry_path, track_path)
    stats = None
    if len(frame) > 1:
        try:
            stats = stats_from_telemetry(frame, track.total_length)
        except CimpccError as e:
            logger.info(f"No lap table: {e}")
    _check_stored_stats(stats, telemetry_path)
    solve_times = summarize_solve_times(frame["solve_time_s"].to_numpy(), budget)
    text = format_report(stats, solve_times, reference)
    print(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cimpcc",
        description="CiMPCC Racing - curvature-integrated MPCC planning and race benchmarks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log per-cycle solver details")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("process-track", help="Compute the curvature profile of a track")
    p.add_argument("--track", type=Path, default=None, help="Track CSV (default: bundled fixture)")
    p.add_argument("--window", type=int, default=DEFAULT_MAF_WINDOW, help="Odd MAF window in points")
    p.add_argument("--spacing", type=float, default=None, help="Resample to this spacing in meters")
    p.add_argument("--out", type=Path, default=Path("."), help="Output directory")

    p = sub.add_parser("race", help="Run one closed-loop race")
    p.add_argument("--config", "-c", type=Path, default=None, help="Run configuration file")
    p.add_argument(
        "--mode",
        choices=[m.value for m in PlannerMode],
        default=None,
        help="Planner mode (overrides the config mode)",
    )

    p = sub.add_parser("compare", help="Race MPCC and CiMPCC under identical settings")
    p.add_argument("--config", "-c", type=Path, default=None, help="Run configuration file")
    p.add_argument(
        "--self-compare",
        action="store_true",
        help="Compare one CiMPCC run with itself (every change is 0.0%%)",
    )

    p = sub.add_parser("report", help="Summarize a telemetry CSV")
    p.add_argument("--telemetry", type=Path, required=True, help="Telemetry CSV from a race")
    p.add_argument(
        "--track",
        type=Path,
        default=None,
        help=f"Track of the race (default: from {RESOLVED_CONFIG_NAME} beside the telemetry)",
    )
    p.add_argument("--budget", type=float, default=None, help="Solve-time budget in seconds")
    p.add_argument(
        "--paper-ref",
        "--reference",
        dest="reference",
        action="store_true",
        help="Print the published onboard solve-time line for comparison",
    )

    p = sub.add_parser("init-config", help="Write a default configuration file and exit")
    p.add_argument("path", type=Path, help="Where to write the config")
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr, force=True
    )

    try:
        if args.command == "init-config":
            path = create_default_config_file(args.path)
            print(f"Created default configuration at: {path}", file=sys.stderr)
            return EXIT_OK

        if args.command == "process-track":
            cmd_process_track(args.track, args.window, args.spacing, args.out)
            return EXIT_OK

        if args.command == "report":
            cmd_report(args.telemetry, args.track, args.budget, args.reference)
            return EXIT_OK

        config = _load_run_config(args.config)
        if args.command == "race":
            mode = args.mode or config.mode.value
            if mode == RunMode.COMPARE.value:
                logger.error("race needs mode MPCC or CiMPCC; use compare or pass --mode")
                return EXIT_INPUT_ERROR
            return cmd_race(config, PlannerMode(mode))
        return cmd_compare(config, self_compare=args.self_compare)

    except RaceAbortedError as e:
        logger.error(str(e))
        return EXIT_ABORTED
    except CimpccError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
