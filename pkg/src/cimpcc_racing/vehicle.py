"""Augmented kinematic bicycle model and its fixed-step integrators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SteeringSingularityError

STATE_DIM = 4
INPUT_DIM = 3
PLANT_SUBSTEPS = 10


def wrap_angle(angle: float | np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle geometry."""

    wheelbase: float = 0.324

    def __post_init__(self) -> None:
        if not self.wheelbase > 0:
            raise ValueError(f"Wheelbase must be positive, got {self.wheelbase}")


@dataclass(frozen=True)
class VehicleState:
    """Pose (x, y, heading) plus centerline progress."""

    x: float
    y: float
    heading: float
    progress: float

    @classmethod
    def from_array(cls, arr: np.ndarray) -> VehicleState:
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.progress], dtype=float)


@dataclass(frozen=True)
class ControlInput:
    """Body velocity, steering angle and projected (progress) velocity."""

    v_l: float
    delta: float
    v_p: float

    @classmethod
    def from_array(cls, arr: np.ndarray) -> ControlInput:
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.v_l, self.delta, self.v_p], dtype=float)


@dataclass(frozen=True)
class Disturbance:
    """Zero-mean Gaussian noise applied to the commanded v_l and delta."""

    v_l_std: float = 0.0
    delta_std: float = 0.0

    @property
    def active(self) -> bool:
        return self.v_l_std > 0 or self.delta_std > 0


def _check_steering(delta: np.ndarray) -> None:
    if np.any(np.abs(delta) >= math.pi / 2):
        raise SteeringSingularityError(f"Steering angle {np.max(np.abs(delta)):.4f} rad >= pi/2")


def dynamics_array(states: np.ndarray, inputs: np.ndarray, wheelbase: float) -> np.ndarray:
    """Row-wise state derivatives for (n, 4) states and (n, 3) inputs."""
    phi = states[..., 2]
    v_l = inputs[..., 0]
    return np.stack(
        [
            np.cos(phi) * v_l,
            np.sin(phi) * v_l,
            np.tan(inputs[..., 1]) / wheelbase * v_l,
            inputs[..., 2],
        ],
        axis=-1,
    )


def _dynamics_jacobians(
    states: np.ndarray, inputs: np.ndarray, wheelbase: float
) -> tuple[np.ndarray, np.ndarray]:
    n = states.shape[0]
    phi = states[:, 2]
    v_l = inputs[:, 0]
    delta = inputs[:, 1]

    a = np.zeros((n, STATE_DIM, STATE_DIM))
    a[:, 0, 2] = -np.sin(phi) * v_l
    a[:, 1, 2] = np.cos(phi) * v_l

    b = np.zeros((n, STATE_DIM, INPUT_DIM))
    b[:, 0, 0] = np.cos(phi)
    b[:, 1, 0] = np.sin(phi)
    b[:, 2, 0] = np.tan(delta) / wheelbase
    b[:, 2, 1] = v_l / (wheelbase * np.cos(delta) ** 2)
    b[:, 3, 2] = 1.0
    return a, b


def rk4_array(
    states: np.ndarray, inputs: np.ndarray, wheelbase: float, dt: float
) -> np.ndarray:
    """One RK4 step per row, input held constant; heading is left unwrapped."""
    _check_steering(inputs[..., 1])
    k1 = dynamics_array(states, inputs, wheelbase)
    k2 = dynamics_array(states + 0.5 * dt * k1, inputs, wheelbase)
    k3 = dynamics_array(states + 0.5 * dt * k2, inputs, wheelbase)
    k4 = dynamics_array(states + dt * k3, inputs, wheelbase)
    return states + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_with_jacobians(
    states: np.ndarray, inputs: np.ndarray, wheelbase: float, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 step plus its Jacobians with respect to state (n, 4, 4) and input (n, 4, 3)."""
    _check_steering(inputs[:, 1])
    eye = np.broadcast_to(np.eye(STATE_DIM), (states.shape[0], STATE_DIM, STATE_DIM))

    k1 = dynamics_array(states, inputs, wheelbase)
    a1, b1 = _dynamics_jacobians(states, inputs, wheelbase)
    dk1_dx, dk1_du = a1, b1

    x2 = states + 0.5 * dt * k1
    k2 = dynamics_array(x2, inputs, wheelbase)
    a2, b2 = _dynamics_jacobians(x2, inputs, wheelbase)
    dk2_dx = a2 @ (eye + 0.5 * dt * dk1_dx)
    dk2_du = a2 @ (0.5 * dt * dk1_du) + b2

    x3 = states + 0.5 * dt * k2
    k3 = dynamics_array(x3, inputs, wheelbase)
    a3, b3 = _dynamics_jacobians(x3, inputs, wheelbase)
    dk3_dx = a3 @ (eye + 0.5 * dt * dk2_dx)
    dk3_du = a3 @ (0.5 * dt * dk2_du) + b3

    x4 = states + dt * k3
    k4 = dynamics_array(x4, inputs, wheelbase)
    a4, b4 = _dynamics_jacobians(x4, inputs, wheelbase)
    dk4_dx = a4 @ (eye + dt * dk3_dx)
    dk4_du = a4 @ (dt * dk3_du) + b4

    nxt = states + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    jx = eye + dt / 6.0 * (dk1_dx + 2.0 * dk2_dx + 2.0 * dk3_dx + dk4_dx)
    ju = dt / 6.0 * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du)
    return nxt, jx, ju


def dynamics(state: VehicleState, control: ControlInput, params: VehicleParams) -> np.ndarray:
    """Time derivative (dx, dy, dheading, dprogress) of the augmented bicycle model."""
    _check_steering(np.array(control.delta))
    return dynamics_array(state.as_array(), control.as_array(), params.wheelbase)


def rk4_step(
    state: VehicleState, control: ControlInput, params: VehicleParams, dt: float
) -> VehicleState:
    if dt <= 0:
        raise ValueError(f"Step must be positive, got {dt}")
    nxt = rk4_array(state.as_array(), control.as_array(), params.wheelbase, dt)
    nxt[2] = wrap_angle(nxt[2])
    return VehicleState.from_array(nxt)


def plant_step(
    state: VehicleState,
    control: ControlInput,
    params: VehicleParams,
    dt: float,
    disturbance: Disturbance | None = None,
    rng: np.random.Generator | None = None,
    substeps: int = PLANT_SUBSTEPS,
) -> VehicleState:
    """Advance the simulated vehicle by ``dt`` using ``substeps`` RK4 substeps.

    When a disturbance is active, noise drawn from ``rng`` perturbs v_l and
    delta once for the whole step.
    """
    if dt <= 0:
        raise ValueError(f"Step must be positive, got {dt}")
    u = control.as_array()
    if disturbance is not None and disturbance.active:
        if rng is None:
            raise ValueError("A random generator is required when a disturbance is active")
        u[0] += rng.normal(0.0, disturbance.v_l_std) if disturbance.v_l_std > 0 else 0.0
        u[1] += rng.normal(0.0, disturbance.delta_std) if disturbance.delta_std > 0 else 0.0

    x = state.as_array()
    h = dt / substeps
    for _ in range(substeps):
        x = rk4_array(x, u, params.wheelbase, h)
    x[2] = wrap_angle(x[2])
    return VehicleState.from_array(x)
