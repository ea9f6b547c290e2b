"""Shared track fixtures."""

import numpy as np
import pytest

from cimpcc_racing import circuits
from cimpcc_racing.track import TrackModel, load_track


def _csv_text(x, y, w_left=0.5, w_right=0.5) -> str:
    w_left = np.broadcast_to(w_left, np.shape(x))
    w_right = np.broadcast_to(w_right, np.shape(x))
    rows = [
        f"{float(a)!r},{float(b)!r},{float(c)!r},{float(d)!r}"
        for a, b, c, d in zip(x, y, w_left, w_right)
    ]
    return "x_m,y_m,w_left_m,w_right_m\n" + "\n".join(rows) + "\n"


@pytest.fixture
def make_csv():
    """Build track CSV content from coordinate arrays."""
    return _csv_text


@pytest.fixture(scope="session")
def chicane_track() -> TrackModel:
    """The bundled stadium-chicane track."""
    return load_track()


@pytest.fixture(scope="session")
def stadium_track() -> TrackModel:
    """A stadium with 10 m straights and 2 m hairpins."""
    return TrackModel.from_centerline(circuits.stadium())


@pytest.fixture(scope="session")
def circle_track() -> TrackModel:
    """A 2 m radius circle, 200 points."""
    return TrackModel.from_centerline(circuits.circle(2.0, 200, half_width=0.6))
