"""Synthetic closed circuits built from straights and circular arcs."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .track import TRACK_COLUMNS, Centerline

DEFAULT_SPACING = 0.1


@dataclass(frozen=True)
class Straight:
    length: float

    @property
    def arc_length(self) -> float:
        return self.length

    @property
    def turn(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Arc:
    """Circular arc; positive ``angle`` turns left."""

    radius: float
    angle: float

    @property
    def arc_length(self) -> float:
        return self.radius * abs(self.angle)

    @property
    def turn(self) -> float:
        return self.angle


Segment = Straight | Arc


def _pose_along(segment: Segment, x0: float, y0: float, th0: float, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(segment, Straight):
        return x0 + u * math.cos(th0), y0 + u * math.sin(th0)
    k = math.copysign(1.0 / segment.radius, segment.angle)
    return (
        x0 + (np.sin(th0 + k * u) - math.sin(th0)) / k,
        y0 - (np.cos(th0 + k * u) - math.cos(th0)) / k,
    )


def sample_segments(
    segments: Sequence[Segment], spacing: float = DEFAULT_SPACING
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a circuit starting at the origin heading +x at ``round(L / spacing)`` uniform points."""
    if spacing <= 0:
        raise ValueError(f"Spacing must be positive, got {spacing}")
    lengths = np.array([seg.arc_length for seg in segments])
    total = float(lengths.sum())
    n = int(round(total / spacing))
    s = np.arange(n) * (total / n)
    starts = np.concatenate(([0.0], np.cumsum(lengths)[:-1]))

    x = np.empty(n)
    y = np.empty(n)
    x0 = y0 = th0 = 0.0
    for seg, s0, length in zip(segments, starts, lengths):
        mask = (s >= s0) & (s < s0 + length)
        xs, ys = _pose_along(seg, x0, y0, th0, s[mask] - s0)
        x[mask] = xs
        y[mask] = ys
        end_x, end_y = _pose_along(seg, x0, y0, th0, np.array([length]))
        x0, y0, th0 = float(end_x[0]), float(end_y[0]), th0 + seg.turn
    return x, y


def build_centerline(
    segments: Sequence[Segment],
    spacing: float = DEFAULT_SPACING,
    half_width_left: float = 0.6,
    half_width_right: float = 0.6,
) -> Centerline:
    x, y = sample_segments(segments, spacing)
    return Centerline.from_arrays(x, y, half_width_left, half_width_right)


def circle(radius: float, n_points: int = 200, half_width: float = 0.5) -> Centerline:
    """Counterclockwise circle through (radius, 0) sampled at ``n_points`` uniform angles."""
    theta = 2.0 * np.pi * np.arange(n_points) / n_points
    return Centerline.from_arrays(
        radius * np.cos(theta), radius * np.sin(theta), half_width, half_width
    )


def stadium_segments(straight: float = 10.0, radius: float = 2.0) -> list[Segment]:
    return [Straight(straight), Arc(radius, math.pi), Straight(straight), Arc(radius, math.pi)]


def stadium(
    straight: float = 10.0, radius: float = 2.0, spacing: float = DEFAULT_SPACING, half_width: float = 0.6
) -> Centerline:
    """Two straights joined by semicircles: one long straight and one hairpin per side."""
    return build_centerline(stadium_segments(straight, radius), spacing, half_width, half_width)


def stadium_chicane_segments(
    chicane_radius: float = 3.0,
    chicane_angle: float = math.radians(25.0),
    corner_radius: float = 1.2,
    width: float = 13.0,
    height: float = 6.0,
) -> list[Segment]:
    """Rectangle with rounded corners whose first long side carries a four-arc chicane."""
    chicane_span = 4.0 * chicane_radius * math.sin(chicane_angle)
    lead = (width - chicane_span) / 2.0
    corner = Arc(corner_radius, math.pi / 2)
    return [
        Straight(lead),
        Arc(chicane_radius, chicane_angle),
        Arc(chicane_radius, -chicane_angle),
        Arc(chicane_radius, -chicane_angle),
        Arc(chicane_radius, chicane_angle),
        Straight(lead),
        corner,
        Straight(height),
        corner,
        Straight(width),
        corner,
        Straight(height),
        corner,
    ]


def stadium_chicane(spacing: float = DEFAULT_SPACING, half_width: float = 0.6) -> Centerline:
    """The bundled desk-scale circuit: about 45.7 m with four sharp corners and a chicane."""
    return build_centerline(stadium_chicane_segments(), spacing, half_width, half_width)


def centerline_frame(centerline: Centerline) -> pd.DataFrame:
    """Track-file layout of a centerline."""
    return pd.DataFrame(
        dict(
            zip(
                TRACK_COLUMNS,
                (centerline.x, centerline.y, centerline.half_width_left, centerline.half_width_right),
            )
        )
    )
