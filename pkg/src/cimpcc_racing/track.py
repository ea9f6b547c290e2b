"""Racetrack centerline model: loading, curvature processing, sampling and projection."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.ndimage import uniform_filter1d

from .errors import (
    DegenerateTrackError,
    InvalidWindowError,
    NumericalDegeneracyError,
    ParseError,
)
from .vehicle import wrap_angle

logger = logging.getLogger(__name__)

TRACK_COLUMNS = ["x_m", "y_m", "w_left_m", "w_right_m"]
MIN_POINTS = 8
MIN_SEGMENT_LENGTH = 1e-9
DEFAULT_MAF_WINDOW = 9
DEFAULT_SEARCH_WINDOW = 20

# Relative spread below which the smoothed curvature counts as constant.
_FLAT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TrackPoint:
    """A centerline point with its distances to the left and right boundaries."""

    x: float
    y: float
    half_width_left: float
    half_width_right: float

    def __post_init__(self) -> None:
        if not (self.half_width_left > 0 and self.half_width_right > 0):
            raise DegenerateTrackError(
                f"Half-widths must be positive, got ({self.half_width_left}, {self.half_width_right})"
            )


@dataclass(frozen=True)
class Centerline:
    """Closed centerline with cumulative arc lengths.

    Arrays are read-only after construction. ``segment_lengths[i]`` is the
    distance from point i to point i+1, the last entry being the closing
    segment back to point 0.
    """

    x: np.ndarray
    y: np.ndarray
    half_width_left: np.ndarray
    half_width_right: np.ndarray
    arc_lengths: np.ndarray
    segment_lengths: np.ndarray
    total_length: float
    closed: bool = True

    @classmethod
    def from_arrays(
        cls,
        x: np.ndarray,
        y: np.ndarray,
        half_width_left: np.ndarray,
        half_width_right: np.ndarray,
    ) -> Centerline:
        """Validate raw arrays and compute the arc-length table."""
        x = np.array(x, dtype=float)
        y = np.array(y, dtype=float)
        w_left = np.broadcast_to(np.asarray(half_width_left, dtype=float), x.shape).copy()
        w_right = np.broadcast_to(np.asarray(half_width_right, dtype=float), x.shape).copy()

        n = x.size
        if n < MIN_POINTS:
            raise DegenerateTrackError(f"Track needs at least {MIN_POINTS} points, got {n}")
        bad = np.flatnonzero((w_left <= 0) | (w_right <= 0))
        if bad.size:
            raise DegenerateTrackError(f"Zero or negative half-width at data row {bad[0] + 1}")

        seg = np.hypot(np.roll(x, -1) - x, np.roll(y, -1) - y)
        short = np.flatnonzero(seg <= MIN_SEGMENT_LENGTH)
        if short.size:
            i = int(short[0])
            if i == n - 1:
                raise DegenerateTrackError(
                    "Last row repeats the first point; closure is implicit"
                )
            raise DegenerateTrackError(f"Duplicate consecutive points at data rows {i + 1} and {i + 2}")

        arc = np.concatenate(([0.0], np.cumsum(seg[:-1])))
        for arr in (x, y, w_left, w_right, arc, seg):
            arr.flags.writeable = False
        return cls(
            x=x,
            y=y,
            half_width_left=w_left,
            half_width_right=w_right,
            arc_lengths=arc,
            segment_lengths=seg,
            total_length=float(seg.sum()),
        )

    @property
    def size(self) -> int:
        return int(self.x.size)

    @property
    def points(self) -> tuple[TrackPoint, ...]:
        return tuple(
            TrackPoint(float(px), float(py), float(wl), float(wr))
            for px, py, wl, wr in zip(self.x, self.y, self.half_width_left, self.half_width_right)
        )

    @property
    def max_half_width(self) -> float:
        return float(max(self.half_width_left.max(), self.half_width_right.max()))

    def wrap(self, s: float | np.ndarray) -> np.ndarray:
        """Wrap arc length into [0, total_length)."""
        s_w = np.mod(np.asarray(s, dtype=float), self.total_length)
        return np.where(s_w >= self.total_length, s_w - self.total_length, s_w)

    def index_at(self, s: float | np.ndarray) -> np.ndarray:
        """Index of the segment start bracketing each arc length."""
        idx = np.searchsorted(self.arc_lengths, self.wrap(s), side="right") - 1
        return np.clip(idx, 0, self.size - 1)


@dataclass(frozen=True)
class CurvatureProfile:
    """Raw, smoothed and normalized curvature along a centerline."""

    raw: np.ndarray
    smoothed: np.ndarray
    normalized: np.ndarray
    window: int
    k_min: float
    k_max: float


@dataclass(frozen=True)
class PoseSample:
    """Interpolated centerline pose at an arc-length position."""

    x: float
    y: float
    heading: float
    nsc: float
    s: float


@dataclass(frozen=True)
class ReferenceSamples:
    """Vectorised centerline samples; ``tx, ty`` is d(x, y)/ds on the bracketing segment."""

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    nsc: np.ndarray
    half_width_left: np.ndarray
    half_width_right: np.ndarray
    s: np.ndarray


def _parse_frame(text: str) -> pd.DataFrame:
    if not text.strip():
        raise ParseError("Track file is empty")
    try:
        frame = pd.read_csv(
            io.StringIO(text),
            comment="#",
            dtype=str,
            skipinitialspace=True,
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError as e:
        raise ParseError("Track file has no header") from e
    except pd.errors.ParserError as e:
        raise ParseError(f"Malformed track file: {e}") from e

    columns = [c.strip() for c in frame.columns]
    if columns != TRACK_COLUMNS:
        raise ParseError(f"Expected header {','.join(TRACK_COLUMNS)}, got {','.join(columns)}")
    frame.columns = columns
    if frame.empty:
        raise ParseError("Track file has a header but no data rows")

    numeric = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad_rows = np.flatnonzero(~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1))
    if bad_rows.size:
        row = int(bad_rows[0])
        raise ParseError(
            f"Data row {row + 1}: non-numeric or missing field in {list(frame.iloc[row])}"
        )
    return numeric


def resample_uniform(
    x: np.ndarray,
    y: np.ndarray,
    half_width_left: np.ndarray,
    half_width_right: np.ndarray,
    spacing: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Resample a closed polyline to uniform arc-length spacing with a periodic cubic spline."""
    if spacing <= 0:
        raise DegenerateTrackError(f"Resample spacing must be positive, got {spacing}")
    xc = np.append(x, x[0])
    yc = np.append(y, y[0])
    chord = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(xc), np.diff(yc)))))
    length = chord[-1]
    spline = CubicSpline(chord, np.column_stack([xc, yc]), bc_type="periodic")

    n = max(MIN_POINTS, int(round(length / spacing)))
    s_new = np.linspace(0.0, length, n, endpoint=False)
    xy = spline(s_new)
    w_left = np.interp(s_new, chord[:-1], half_width_left, period=length)
    w_right = np.interp(s_new, chord[:-1], half_width_right, period=length)
    logger.debug(f"Resampled centerline from {x.size} to {n} points at {length / n:.4f} m")
    return xy[:, 0], xy[:, 1], w_left, w_right


def load_centerline(source: str | Path, resample_spacing: float | None = None) -> Centerline:
    """Load a closed centerline.

    ``source`` is either a path to a track CSV or the CSV text itself.
    When ``resample_spacing`` is given the centerline is resampled to that
    uniform spacing before the arc-length table is built.
    """
    if isinstance(source, Path):
        try:
            text = source.read_text(encoding="utf-8")
        except OSError as e:
            raise ParseError(f"Cannot read track file {source}: {e}") from e
    else:
        text = source

    frame = _parse_frame(text)
    x = frame["x_m"].to_numpy(dtype=float)
    y = frame["y_m"].to_numpy(dtype=float)
    w_left = frame["w_left_m"].to_numpy(dtype=float)
    w_right = frame["w_right_m"].to_numpy(dtype=float)

    # Validate the raw rows first so errors name rows of the file.
    centerline = Centerline.from_arrays(x, y, w_left, w_right)
    if resample_spacing:
        centerline = Centerline.from_arrays(*resample_uniform(x, y, w_left, w_right, resample_spacing))
    return centerline


def curvature_from_points(x: np.ndarray, y: np.ndarray, closed: bool = True) -> np.ndarray:
    """Discrete curvature from backward first and second differences.

    On a closed track the differences wrap around. On an open polyline the
    first two points reuse the value of the third.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if closed:
        dx = x - np.roll(x, 1)
        dy = y - np.roll(y, 1)
        ddx = dx - np.roll(dx, 1)
        ddy = dy - np.roll(dy, 1)
        valid = slice(None)
    else:
        if x.size < 3:
            raise NumericalDegeneracyError("Open curvature needs at least 3 points")
        dx = np.concatenate(([np.nan], np.diff(x)))
        dy = np.concatenate(([np.nan], np.diff(y)))
        ddx = np.concatenate(([np.nan], np.diff(dx)))
        ddy = np.concatenate(([np.nan], np.diff(dy)))
        valid = slice(2, None)

    sq = dx[valid] ** 2 + dy[valid] ** 2
    if np.any(sq < 1e-12):
        i = int(np.flatnonzero(sq < 1e-12)[0])
        raise NumericalDegeneracyError(f"Zero-length difference at point {i if closed else i + 2}")

    kappa = np.empty_like(x)
    kappa[valid] = np.abs(dx[valid] * ddy[valid] - ddx[valid] * dy[valid]) / sq**1.5
    if not closed:
        kappa[:2] = kappa[2]
    return kappa


def compute_raw_curvature(cl: Centerline) -> np.ndarray:
    return curvature_from_points(cl.x, cl.y, closed=True)


def smooth_curvature(raw: np.ndarray, w: int) -> np.ndarray:
    """Centered moving average with circular wrap."""
    raw = np.asarray(raw, dtype=float)
    if not isinstance(w, (int, np.integer)) or w < 1 or w % 2 == 0 or w > raw.size:
        raise InvalidWindowError(f"Window must be an odd integer in [1, {raw.size}], got {w}")
    if w == 1:
        return raw.copy()
    return uniform_filter1d(raw, size=int(w), mode="wrap")


def normalize_curvature(smoothed: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant profile maps to all zeros."""
    k = np.asarray(smoothed, dtype=float)
    if k.size == 0:
        raise ValueError("Cannot normalize an empty curvature sequence")
    k_min = float(k.min())
    k_max = float(k.max())
    span = k_max - k_min
    if span <= _FLAT_TOLERANCE * max(abs(k_max), 1.0):
        return np.zeros_like(k)
    return np.clip((k - k_min) / span, 0.0, 1.0)


def build_profile(cl: Centerline, window: int = DEFAULT_MAF_WINDOW) -> CurvatureProfile:
    raw = compute_raw_curvature(cl)
    smoothed = smooth_curvature(raw, window)
    normalized = normalize_curvature(smoothed)
    for arr in (raw, smoothed, normalized):
        arr.flags.writeable = False
    return CurvatureProfile(
        raw=raw,
        smoothed=smoothed,
        normalized=normalized,
        window=window,
        k_min=float(smoothed.min()),
        k_max=float(smoothed.max()),
    )


def sample_many(cl: Centerline, profile: CurvatureProfile, s: np.ndarray) -> ReferenceSamples:
    """Linear interpolation of position, segment heading and NSC at each arc length."""
    s_w = cl.wrap(s)
    i = cl.index_at(s_w)
    j = (i + 1) % cl.size
    seg = cl.segment_lengths[i]
    frac = (s_w - cl.arc_lengths[i]) / seg

    dx = cl.x[j] - cl.x[i]
    dy = cl.y[j] - cl.y[i]
    nsc = profile.normalized
    return ReferenceSamples(
        x=cl.x[i] + frac * dx,
        y=cl.y[i] + frac * dy,
        heading=wrap_angle(np.arctan2(dy, dx)),
        tx=dx / seg,
        ty=dy / seg,
        nsc=nsc[i] + frac * (nsc[j] - nsc[i]),
        half_width_left=cl.half_width_left[i] + frac * (cl.half_width_left[j] - cl.half_width_left[i]),
        half_width_right=cl.half_width_right[i]
        + frac * (cl.half_width_right[j] - cl.half_width_right[i]),
        s=s_w,
    )


def sample_at_s(cl: Centerline, profile: CurvatureProfile, s: float) -> PoseSample:
    ref = sample_many(cl, profile, np.array([s], dtype=float))
    return PoseSample(
        x=float(ref.x[0]),
        y=float(ref.y[0]),
        heading=float(ref.heading[0]),
        nsc=float(ref.nsc[0]),
        s=float(ref.s[0]),
    )


def project(
    cl: Centerline,
    x: float,
    y: float,
    s_hint: float | None = None,
    search_window: int = DEFAULT_SEARCH_WINDOW,
) -> tuple[float, int]:
    """Nearest centerline point to (x, y); ties go to the lowest index.

    With a hint only ``search_window`` points either side of the hint are
    scanned. The full scan takes over when the windowed minimum sits on the
    window edge or lies farther away than any half-width.
    """
    n = cl.size
    if s_hint is not None and n > 2 * search_window + 1:
        center = int(cl.index_at(s_hint))
        window = (center + np.arange(-search_window, search_window + 1)) % n
        d2 = (cl.x[window] - x) ** 2 + (cl.y[window] - y) ** 2
        d_min = d2.min()
        hits = np.flatnonzero(d2 == d_min)
        on_edge = hits[0] == 0 or hits[-1] == 2 * search_window
        if not on_edge and d_min <= cl.max_half_width**2:
            idx = int(window[hits].min())
            return float(cl.arc_lengths[idx]), idx

    d2 = (cl.x - x) ** 2 + (cl.y - y) ** 2
    idx = int(np.argmin(d2))
    return float(cl.arc_lengths[idx]), idx


def refine_progress(cl: Centerline, x: float, y: float, index: int) -> float:
    """Arc length of the foot point on the two segments adjacent to ``index``."""
    n = cl.size
    best_d2 = np.inf
    best_s = float(cl.arc_lengths[index])
    for a in ((index - 1) % n, index):
        b = (a + 1) % n
        ax, ay = cl.x[a], cl.y[a]
        ex, ey = cl.x[b] - ax, cl.y[b] - ay
        seg2 = ex * ex + ey * ey
        t = min(max(((x - ax) * ex + (y - ay) * ey) / seg2, 0.0), 1.0)
        d2 = (ax + t * ex - x) ** 2 + (ay + t * ey - y) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best_s = float(cl.arc_lengths[a] + t * cl.segment_lengths[a])
    return float(cl.wrap(best_s))


@dataclass(frozen=True)
class TrackModel:
    """Centerline plus curvature profile, shared read-only by planners and the harness."""

    centerline: Centerline
    profile: CurvatureProfile
    search_window: int = field(default=DEFAULT_SEARCH_WINDOW)

    @classmethod
    def from_centerline(
        cls,
        centerline: Centerline,
        window: int = DEFAULT_MAF_WINDOW,
        search_window: int = DEFAULT_SEARCH_WINDOW,
    ) -> TrackModel:
        return cls(centerline, build_profile(centerline, window), search_window)

    @property
    def total_length(self) -> float:
        return self.centerline.total_length

    def sample(self, s: float) -> PoseSample:
        return sample_at_s(self.centerline, self.profile, s)

    def sample_many(self, s: np.ndarray) -> ReferenceSamples:
        return sample_many(self.centerline, self.profile, s)

    def project(self, x: float, y: float, s_hint: float | None = None) -> tuple[float, int]:
        return project(self.centerline, x, y, s_hint, self.search_window)

    def nsc_at_position(self, x: float, y: float, s_hint: float | None = None) -> float:
        """NSC of the centerline point closest to (x, y)."""
        _, idx = self.project(x, y, s_hint)
        return float(self.profile.normalized[idx])

    def foot_point(self, x: float, y: float, s_hint: float | None = None) -> float:
        """Wrapped arc length of the foot point of (x, y) on the centerline polyline."""
        _, idx = self.project(x, y, s_hint)
        return refine_progress(self.centerline, x, y, idx)

    def lateral_offset(
        self, x: float, y: float, s_hint: float | None = None
    ) -> tuple[float, float]:
        """Signed contour error at the foot point (negative to the left of travel), and its s."""
        s = self.foot_point(x, y, s_hint)
        ref = self.sample_many(np.array([s]))
        heading = float(ref.heading[0])
        offset = math.sin(heading) * (x - ref.x[0]) - math.cos(heading) * (y - ref.y[0])
        return float(offset), s

    def unwrap_progress(self, s_wrapped: float, s_previous: float) -> float:
        """Lift a wrapped arc length to the lap count of ``s_previous``, taking the nearest branch."""
        length = self.total_length
        delta = float(s_wrapped) - float(self.centerline.wrap(s_previous))
        delta -= length * round(delta / length)
        return float(s_previous) + delta

    def profile_frame(self) -> pd.DataFrame:
        cl = self.centerline
        return pd.DataFrame(
            {
                "index": np.arange(cl.size),
                "s_m": cl.arc_lengths,
                "x_m": cl.x,
                "y_m": cl.y,
                "kappa_raw": self.profile.raw,
                "kappa_smooth": self.profile.smoothed,
                "kappa_nsc": self.profile.normalized,
            }
        )


def bundled_track_path() -> Path:
    """Path of the shipped stadium-chicane fixture."""
    return Path(str(resources.files("cimpcc_racing") / "data" / "stadium_chicane.csv"))


def load_track(
    path: Path | None = None,
    window: int = DEFAULT_MAF_WINDOW,
    resample_spacing: float | None = None,
    search_window: int = DEFAULT_SEARCH_WINDOW,
) -> TrackModel:
    """Load a track file (the bundled fixture when ``path`` is None) and build its profile."""
    path = path or bundled_track_path()
    centerline = load_centerline(path, resample_spacing)
    track = TrackModel.from_centerline(centerline, window, search_window)
    logger.info(
        f"Loaded track {path.name}: {centerline.size} points, {centerline.total_length:.3f} m"
    )
    return track
