"""Curvature-to-velocity mapping: NSC -> blending coefficient beta, and velocity bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidFactorError

DEFAULT_ALPHA = 3.0
_NSC_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MappingParams:
    """Sensitivity of the reference velocity to the NSC."""

    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be positive and finite, got {self.alpha}")

    @property
    def upper_truncation(self) -> float:
        return 1.0

    @property
    def lower_truncation(self) -> float:
        return math.exp(-self.alpha)


@dataclass(frozen=True)
class VelocityBounds:
    """Aggressive (v_bar) and safe (v_under) overall velocities, each (v_l, v_p) in m/s."""

    v_bar: tuple[float, float]
    v_under: tuple[float, float]

    def __post_init__(self) -> None:
        for lo, hi in zip(self.v_under, self.v_bar):
            if not 0 < lo < hi:
                raise InvalidFactorError(
                    f"Velocity bounds must satisfy 0 < v_under < v_bar, got {self.v_under} / {self.v_bar}"
                )

    def blended(self, beta: float) -> np.ndarray:
        """Minimizer of the blended velocity objective when both terms share R3."""
        return (1.0 - beta) * np.asarray(self.v_under) + beta * np.asarray(self.v_bar)


def map_nsc_to_beta(nsc: float, params: MappingParams) -> float:
    """beta = exp(-alpha * nsc^2), with nsc clamped into [0, 1] within a 1e-9 tolerance."""
    if not (-_NSC_TOLERANCE <= nsc <= 1.0 + _NSC_TOLERANCE):
        raise DomainError(f"NSC must lie in [0, 1], got {nsc}")
    nsc = min(max(nsc, 0.0), 1.0)
    return math.exp(-params.alpha * nsc * nsc)


def map_nsc_array(nsc: np.ndarray, params: MappingParams) -> np.ndarray:
    """Vectorised ``map_nsc_to_beta``."""
    nsc = np.asarray(nsc, dtype=float)
    if np.any(nsc < -_NSC_TOLERANCE) or np.any(nsc > 1.0 + _NSC_TOLERANCE):
        raise DomainError("NSC must lie in [0, 1]")
    nsc = np.clip(nsc, 0.0, 1.0)
    return np.exp(-params.alpha * nsc**2)


def derive_velocity_bounds(
    expert_vp: float, body_factor: float = 1.1, discount: float = 0.65
) -> VelocityBounds:
    """Aggressive bounds from an expert lap's projected velocity, safe bounds by discount."""
    if not expert_vp > 0:
        raise InvalidFactorError(f"Expert projected velocity must be positive, got {expert_vp}")
    if not 0 < discount < 1:
        raise InvalidFactorError(f"Discount must lie in (0, 1), got {discount}")
    if not body_factor >= 1:
        raise InvalidFactorError(f"Body factor must be >= 1, got {body_factor}")
    v_bar = (expert_vp * body_factor, expert_vp)
    return VelocityBounds(v_bar=v_bar, v_under=(v_bar[0] * discount, v_bar[1] * discount))
