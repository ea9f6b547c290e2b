"""Receding-horizon MPCC and CiMPCC planners over a multiple-shooting transcription.

Decision vector layout for horizon (N_p, N_c)::

    [ states 0..N_p (4 each) | inputs 0..N_c-1 (3 each) | corridor slacks 1..N_p ]

Stage k >= 1 is reached with input ``min(k - 1, N_c - 1)``; stages past the
control horizon hold the last input.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, DimensionMismatchError, OffTrackError, SolverFailureError
from .solver import NLPProblem, SolverSettings, SolverStatus, StageBlocks, solve
from .track import TrackModel
from .vehicle import (
    INPUT_DIM,
    STATE_DIM,
    ControlInput,
    VehicleParams,
    VehicleState,
    rk4_array,
    rk4_with_jacobians,
    wrap_angle,
)
from .velocity_map import MappingParams, VelocityBounds, map_nsc_array, map_nsc_to_beta

logger = logging.getLogger(__name__)

STATE_BOUND = 1e9
DEFAULT_SLACK_WEIGHT = 1e4


class PlannerMode(str, Enum):
    MPCC = "MPCC"
    CIMPCC = "CiMPCC"


@dataclass(frozen=True)
class PlannerWeights:
    """Objective weights. Vector weights are diagonals."""

    q_con: float = 800.0
    q_lag: float = 800.0
    gamma: float = 40.0
    r1: tuple[float, float, float] = (10.0, 3500.0, 0.0)
    r2: tuple[float, float, float] = (40.0, 10.0, 40.0)
    r3: tuple[float, float] = (40.0, 40.0)
    u_ref: tuple[float, float, float] = (3.3, 0.0, 3.0)

    def __post_init__(self) -> None:
        for name, size in (("r1", 3), ("r2", 3), ("r3", 2), ("u_ref", 3)):
            if len(getattr(self, name)) != size:
                raise ConfigurationError(f"Weight {name} needs {size} entries")
        scalars = (self.q_con, self.q_lag, self.gamma, *self.r1, *self.r2, *self.r3)
        if any(not (w >= 0 and math.isfinite(w)) for w in scalars):
            raise ConfigurationError("Planner weights must be finite and non-negative")

    @classmethod
    def cimpcc_defaults(cls) -> PlannerWeights:
        return cls(r2=(0.0, 10.0, 0.0))


def effective_weights(mode: PlannerMode, weights: PlannerWeights) -> PlannerWeights:
    """Weights actually used by ``mode``: CiMPCC hands velocity tracking from R2 to R3."""
    if mode == PlannerMode.CIMPCC:
        return replace(weights, r2=(0.0, weights.r2[1], 0.0))
    return weights


@dataclass(frozen=True)
class HorizonConfig:
    n_p: int = 10
    n_c: int = 10
    t_s: float = 0.05
    input_lower: tuple[float, float, float] = (-10.0, -0.35, -10.0)
    input_upper: tuple[float, float, float] = (10.0, 0.35, 10.0)
    state_lower: tuple[float, float, float, float] = (-STATE_BOUND,) * 4
    state_upper: tuple[float, float, float, float] = (STATE_BOUND,) * 4
    boundary_margin: float = 0.15

    def __post_init__(self) -> None:
        if self.n_p < 1 or self.n_c < 1 or self.n_c > self.n_p:
            raise ConfigurationError(f"Need 1 <= n_c <= n_p, got n_p={self.n_p}, n_c={self.n_c}")
        if not self.t_s > 0:
            raise ConfigurationError(f"t_s must be positive, got {self.t_s}")
        if len(self.input_lower) != INPUT_DIM or len(self.input_upper) != INPUT_DIM:
            raise ConfigurationError("Input bounds need 3 entries")
        if len(self.state_lower) != STATE_DIM or len(self.state_upper) != STATE_DIM:
            raise ConfigurationError("State bounds need 4 entries")
        if any(lo >= hi for lo, hi in zip(self.input_lower, self.input_upper)):
            raise ConfigurationError("Input lower bounds must lie strictly below upper bounds")
        if any(lo >= hi for lo, hi in zip(self.state_lower, self.state_upper)):
            raise ConfigurationError("State lower bounds must lie strictly below upper bounds")
        if self.boundary_margin < 0:
            raise ConfigurationError("boundary_margin must be non-negative")
        if max(abs(self.input_lower[1]), abs(self.input_upper[1])) >= math.pi / 2:
            raise ConfigurationError("Steering bounds must stay inside (-pi/2, pi/2)")

    def clip_input(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.input_lower, self.input_upper)


@dataclass(frozen=True)
class PlannerOptions:
    """Planner knobs outside the objective weights."""

    slack_weight: float = DEFAULT_SLACK_WEIGHT
    anchor_previous_input: bool = True
    usable_violation: float = 1e-3
    per_stage_beta: bool = False


@dataclass(frozen=True)
class ShootingLayout:
    """Index bookkeeping for the decision vector."""

    n_p: int
    n_c: int

    @property
    def n_states(self) -> int:
        return (self.n_p + 1) * STATE_DIM

    @property
    def n_inputs(self) -> int:
        return self.n_c * INPUT_DIM

    @property
    def dimension(self) -> int:
        return self.n_states + self.n_inputs + self.n_p

    @property
    def n_constraints(self) -> int:
        return STATE_DIM * (self.n_p + 1)

    @property
    def stage_inputs(self) -> np.ndarray:
        """Input index applied on the transition into stage k, for k = 1..N_p."""
        return np.minimum(np.arange(self.n_p), self.n_c - 1)

    def state_index(self, k: int, j: int = 0) -> int:
        return k * STATE_DIM + j

    def input_index(self, k: int, j: int = 0) -> int:
        return self.n_states + k * INPUT_DIM + j

    def slack_index(self, k: int) -> int:
        """Slack of stage k, for k = 1..N_p."""
        return self.n_states + self.n_inputs + k - 1

    def unpack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dimension,):
            raise DimensionMismatchError(f"Decision vector has shape {z.shape}, expected ({self.dimension},)")
        states = z[: self.n_states].reshape(self.n_p + 1, STATE_DIM)
        inputs = z[self.n_states : self.n_states + self.n_inputs].reshape(self.n_c, INPUT_DIM)
        slacks = z[self.n_states + self.n_inputs :]
        return states, inputs, slacks

    def pack(self, states: np.ndarray, inputs: np.ndarray, slacks: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(states), np.ravel(inputs), np.ravel(slacks)]).astype(float)

    def blocks(self) -> StageBlocks:
        return StageBlocks(
            states=tuple(np.arange(k * STATE_DIM, (k + 1) * STATE_DIM) for k in range(self.n_p + 1)),
            inputs=tuple(
                self.n_states + np.arange(k * INPUT_DIM, (k + 1) * INPUT_DIM) for k in range(self.n_c)
            ),
            slacks=self.n_states + self.n_inputs + np.arange(self.n_p),
        )


@dataclass
class HorizonPlan:
    """Solved (or evaluated) horizon.

    ``states`` keeps the solver's unwrapped headings; ``state(k)`` returns a
    normalized ``VehicleState``. ``xi_con`` and ``xi_lag`` cover stages 0..N_p.
    """

    states: np.ndarray
    inputs: np.ndarray
    xi_con: np.ndarray
    xi_lag: np.ndarray
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta: float | np.ndarray = 1.0
    objective_value: float = float("nan")
    solve_time: float = 0.0
    solver_status: SolverStatus = SolverStatus.CONVERGED
    iterations: int = 0
    constraint_violation: float = 0.0

    @property
    def n_p(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_c(self) -> int:
        return self.inputs.shape[0]

    @property
    def command(self) -> ControlInput:
        return ControlInput.from_array(self.inputs[0])

    def state(self, k: int) -> VehicleState:
        s = self.states[k].copy()
        s[2] = wrap_angle(s[2])
        return VehicleState.from_array(s)

    def stage_input(self, k: int) -> np.ndarray:
        """Input applied on the transition into stage k (k >= 1)."""
        return self.inputs[min(k - 1, self.n_c - 1)]

    @classmethod
    def evaluate(
        cls, track: TrackModel, states: np.ndarray, inputs: np.ndarray, **diagnostics: Any
    ) -> HorizonPlan:
        """Build a plan from raw arrays, computing the contour and lag errors of every stage."""
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        if states.ndim != 2 or states.shape[1] != STATE_DIM:
            raise DimensionMismatchError(f"States must be (n, {STATE_DIM}), got {states.shape}")
        if inputs.ndim != 2 or inputs.shape[1] != INPUT_DIM:
            raise DimensionMismatchError(f"Inputs must be (n, {INPUT_DIM}), got {inputs.shape}")
        xi_con, xi_lag = contour_lag_arrays(track, states[:, 0], states[:, 1], states[:, 3])
        return cls(states=states, inputs=inputs, xi_con=xi_con, xi_lag=xi_lag, **diagnostics)


def contour_lag_arrays(
    track: TrackModel, x: np.ndarray, y: np.ndarray, s: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    ref = track.sample_many(np.asarray(s, dtype=float))
    sin_t = np.sin(ref.heading)
    cos_t = np.cos(ref.heading)
    dx = np.asarray(x) - ref.x
    dy = np.asarray(y) - ref.y
    return sin_t * dx - cos_t * dy, -cos_t * dx - sin_t * dy


def contour_lag_errors(state: VehicleState, track: TrackModel) -> tuple[float, float]:
    """Contour and lag error of ``state`` against the centerline pose at its progress."""
    xi_con, xi_lag = contour_lag_arrays(
        track, np.array([state.x]), np.array([state.y]), np.array([state.progress])
    )
    return float(xi_con[0]), float(xi_lag[0])


def _check_plan(plan: HorizonPlan, cfg: HorizonConfig) -> None:
    if plan.states.shape != (cfg.n_p + 1, STATE_DIM) or plan.inputs.shape != (cfg.n_c, INPUT_DIM):
        raise DimensionMismatchError(
            f"Plan has states {plan.states.shape} and inputs {plan.inputs.shape}, "
            f"horizon expects ({cfg.n_p + 1}, {STATE_DIM}) and ({cfg.n_c}, {INPUT_DIM})"
        )
    if plan.xi_con.shape != (cfg.n_p + 1,) or plan.xi_lag.shape != (cfg.n_p + 1,):
        raise DimensionMismatchError("Plan errors must cover stages 0..N_p")


def eval_j_mpcc(
    plan: HorizonPlan,
    weights: PlannerWeights,
    cfg: HorizonConfig,
    previous_input: np.ndarray | None = None,
) -> float:
    """Contouring cost: tracking errors, progress reward, input rate and input reference terms.

    ``previous_input`` adds the rate term of the first input against the last
    applied command.
    """
    _check_plan(plan, cfg)
    layout = ShootingLayout(cfg.n_p, cfg.n_c)
    stage_u = plan.inputs[layout.stage_inputs]

    cost = float(
        np.sum(weights.q_con * plan.xi_con[1:] ** 2 + weights.q_lag * plan.xi_lag[1:] ** 2)
    )
    cost -= weights.gamma * cfg.t_s * float(np.sum(stage_u[:, 2]))

    r1 = np.asarray(weights.r1)
    du = np.diff(plan.inputs, axis=0)
    if previous_input is not None:
        du = np.vstack([plan.inputs[0] - np.asarray(previous_input, dtype=float), du])
    cost += float(np.sum(r1 * du**2))
    cost += float(np.sum(np.asarray(weights.r2) * (plan.inputs - np.asarray(weights.u_ref)) ** 2))
    return cost


def eval_j_ci(
    plan: HorizonPlan,
    beta: float | np.ndarray,
    bounds: VelocityBounds,
    r3: tuple[float, float],
) -> float:
    """Curvature-integrated velocity cost blending safe and aggressive targets by beta."""
    n_p = plan.n_p
    beta_arr = np.broadcast_to(np.asarray(beta, dtype=float), (n_p,))
    if np.any(beta_arr <= 0) or np.any(beta_arr > 1):
        raise ConfigurationError("beta must lie in (0, 1]")
    if len(r3) != 2:
        raise DimensionMismatchError("r3 needs 2 entries")

    idx = ShootingLayout(n_p, plan.n_c).stage_inputs
    v = plan.inputs[idx][:, [0, 2]]
    w = np.asarray(r3, dtype=float)
    safe = np.sum(w * (v - np.asarray(bounds.v_under)) ** 2, axis=1)
    aggressive = np.sum(w * (v - np.asarray(bounds.v_bar)) ** 2, axis=1)
    return float(np.sum((1.0 - beta_arr) * safe + beta_arr * aggressive))


def slack_penalty(xi_con: np.ndarray, slacks: np.ndarray, weight: float) -> float:
    """Soft corridor cost over stages 1..N_p."""
    return float(weight * np.sum((np.asarray(xi_con)[1:] - slacks) ** 2))


def corridor_limits(
    track: TrackModel, progress: np.ndarray, margin: float
) -> tuple[np.ndarray, np.ndarray]:
    """Allowed contour-error range per stage: [-(w_left - margin), w_right - margin]."""
    ref = track.sample_many(np.asarray(progress, dtype=float))
    lower = -np.maximum(ref.half_width_left - margin, 0.0)
    upper = np.maximum(ref.half_width_right - margin, 0.0)
    return lower, upper


def build_nlp(
    mode: PlannerMode,
    zeta_cur: VehicleState,
    beta: float | np.ndarray,
    cfg: HorizonConfig,
    weights: PlannerWeights,
    bounds: VelocityBounds,
    track: TrackModel,
    vehicle: VehicleParams | None = None,
    slack_weight: float = DEFAULT_SLACK_WEIGHT,
    previous_input: np.ndarray | None = None,
    corridor_progress: np.ndarray | None = None,
) -> NLPProblem:
    """Assemble the shooting NLP for one receding-horizon solve.

    ``corridor_progress`` gives the arc length at which each stage's half-widths
    are read (stages 1..N_p); by default it advances from the current progress
    at the safe projected velocity.
    """
    vehicle = vehicle or VehicleParams()
    layout = ShootingLayout(cfg.n_p, cfg.n_c)
    n_p, n_c = cfg.n_p, cfg.n_c
    zeta = zeta_cur.as_array()
    if not np.all(np.isfinite(zeta)):
        raise ConfigurationError(f"Current state is not finite: {zeta}")

    w = effective_weights(mode, weights)
    beta_arr = np.broadcast_to(np.asarray(beta, dtype=float), (n_p,)).copy()
    if mode == PlannerMode.CIMPCC and (np.any(beta_arr <= 0) or np.any(beta_arr > 1)):
        raise ConfigurationError("beta must lie in (0, 1]")
    if previous_input is not None:
        previous_input = np.asarray(previous_input, dtype=float)
        if previous_input.shape != (INPUT_DIM,):
            raise ConfigurationError(f"Previous input must have {INPUT_DIM} entries")

    if corridor_progress is None:
        corridor_progress = zeta[3] + cfg.t_s * bounds.v_under[1] * np.arange(1, n_p + 1)
    corridor_progress = np.asarray(corridor_progress, dtype=float)
    if corridor_progress.shape != (n_p,):
        raise ConfigurationError(f"corridor_progress needs {n_p} entries")

    stage_u = layout.stage_inputs
    sqrt_q = np.sqrt([w.q_con, w.q_lag])
    sqrt_ws = math.sqrt(slack_weight)
    sqrt_r1 = np.sqrt(w.r1)
    sqrt_r2 = np.sqrt(w.r2)
    u_ref = np.asarray(w.u_ref)
    anchored = previous_input is not None
    ci = mode == PlannerMode.CIMPCC
    sqrt_r3 = np.sqrt(w.r3)
    v_under = np.asarray(bounds.v_under)
    v_bar = np.asarray(bounds.v_bar)
    w_safe = np.sqrt(1.0 - beta_arr)[:, None] * sqrt_r3
    w_aggr = np.sqrt(beta_arr)[:, None] * sqrt_r3

    # residual row offsets
    r_track = 0
    r_slack = r_track + 2 * n_p
    r_rate = r_slack + n_p
    n_rate = (n_c - 1 + int(anchored)) * INPUT_DIM
    r_ref = r_rate + n_rate
    r_ci = r_ref + n_c * INPUT_DIM
    n_res = r_ci + (4 * n_p if ci else 0)

    def residuals(z: np.ndarray) -> np.ndarray:
        states, inputs, slacks = layout.unpack(z)
        stages = states[1:]
        xi_con, xi_lag = contour_lag_arrays(track, stages[:, 0], stages[:, 1], stages[:, 3])
        parts = [
            np.column_stack([sqrt_q[0] * xi_con, sqrt_q[1] * xi_lag]).ravel(),
            sqrt_ws * (xi_con - slacks),
        ]
        du = np.diff(inputs, axis=0)
        if anchored:
            du = np.vstack([inputs[0] - previous_input, du])
        parts.append((sqrt_r1 * du).ravel())
        parts.append((sqrt_r2 * (inputs - u_ref)).ravel())
        if ci:
            v = inputs[stage_u][:, [0, 2]]
            parts.append(np.column_stack([w_safe * (v - v_under), w_aggr * (v - v_bar)]).ravel())
        return np.concatenate(parts)

    # fixed sparsity pattern; only the tracking rows change with z
    stage_k = np.arange(n_p)
    input_base = layout.n_states
    slack_base = layout.n_states + layout.n_inputs
    xys_cols = (STATE_DIM * (stage_k[:, None] + 1) + np.array([0, 1, 3])).ravel()
    track_rows = np.concatenate(
        [
            np.repeat(r_track + 2 * stage_k, 3),
            np.repeat(r_track + 2 * stage_k + 1, 3),
            np.repeat(r_slack + stage_k, 3),
            r_slack + stage_k,
        ]
    )
    track_cols = np.concatenate([xys_cols, xys_cols, xys_cols, slack_base + stage_k])

    channels = np.arange(INPUT_DIM)
    first = 0 if anchored else 1
    rate_k = np.arange(first, n_c)
    prev_k = rate_k[rate_k > 0]
    rate_rows = r_rate + ((rate_k - first)[:, None] * INPUT_DIM + channels).ravel()
    prev_rows = r_rate + ((prev_k - first)[:, None] * INPUT_DIM + channels).ravel()
    ref_k = np.arange(n_c)
    fixed_rows = [
        rate_rows,
        prev_rows,
        r_ref + (ref_k[:, None] * INPUT_DIM + channels).ravel(),
    ]
    fixed_cols = [
        (input_base + INPUT_DIM * rate_k[:, None] + channels).ravel(),
        (input_base + INPUT_DIM * (prev_k[:, None] - 1) + channels).ravel(),
        (input_base + INPUT_DIM * ref_k[:, None] + channels).ravel(),
    ]
    fixed_vals = [
        np.tile(sqrt_r1, rate_k.size),
        -np.tile(sqrt_r1, prev_k.size),
        np.tile(sqrt_r2, n_c),
    ]
    if ci:
        v_col = input_base + INPUT_DIM * stage_u
        vp_col = v_col + 2
        fixed_rows.append((r_ci + 4 * stage_k[:, None] + np.arange(4)).ravel())
        fixed_cols.append(np.column_stack([v_col, vp_col, v_col, vp_col]).ravel())
        fixed_vals.append(np.column_stack([w_safe, w_aggr]).ravel())
    jac_rows = np.concatenate([track_rows, *fixed_rows])
    jac_cols = np.concatenate([track_cols, *fixed_cols])
    fixed_vals_flat = np.concatenate(fixed_vals)
    slack_diag = np.full(n_p, -sqrt_ws)

    def residual_jacobian(z: np.ndarray) -> sparse.csr_matrix:
        states, _, _ = layout.unpack(z)
        stages = states[1:]
        ref = track.sample_many(stages[:, 3])
        sin_t, cos_t = np.sin(ref.heading), np.cos(ref.heading)
        dcon = np.column_stack([sin_t, -cos_t, -sin_t * ref.tx + cos_t * ref.ty])
        dlag = np.column_stack([-cos_t, -sin_t, cos_t * ref.tx + sin_t * ref.ty])
        vals = np.concatenate(
            [
                (sqrt_q[0] * dcon).ravel(),
                (sqrt_q[1] * dlag).ravel(),
                (sqrt_ws * dcon).ravel(),
                slack_diag,
                fixed_vals_flat,
            ]
        )
        return sparse.coo_matrix((vals, (jac_rows, jac_cols)), shape=(n_res, layout.dimension)).tocsr()

    linear = np.zeros(layout.dimension)
    np.add.at(linear, input_base + INPUT_DIM * stage_u + 2, -w.gamma * cfg.t_s)

    # identity on every state, then -jx and -ju blocks in (stage, row, column) order
    state_block = np.arange(STATE_DIM)
    next_rows = STATE_DIM * (stage_k[:, None, None] + 1) + state_block[:, None]
    jx_shape = (n_p, STATE_DIM, STATE_DIM)
    ju_shape = (n_p, STATE_DIM, INPUT_DIM)
    diagonal = np.arange(layout.n_constraints)
    con_rows = np.concatenate(
        [diagonal, np.broadcast_to(next_rows, jx_shape).ravel(), np.broadcast_to(next_rows, ju_shape).ravel()]
    )
    con_cols = np.concatenate(
        [
            diagonal,
            np.broadcast_to(STATE_DIM * stage_k[:, None, None] + state_block, jx_shape).ravel(),
            np.broadcast_to(input_base + INPUT_DIM * stage_u[:, None, None] + channels, ju_shape).ravel(),
        ]
    )
    con_ones = np.ones(layout.n_constraints)

    def constraints(z: np.ndarray) -> np.ndarray:
        states, inputs, _ = layout.unpack(z)
        nxt = rk4_array(states[:-1], inputs[stage_u], vehicle.wheelbase, cfg.t_s)
        return np.concatenate([states[0] - zeta, (states[1:] - nxt).ravel()])

    def constraint_jacobian(z: np.ndarray) -> sparse.csr_matrix:
        states, inputs, _ = layout.unpack(z)
        _, jx, ju = rk4_with_jacobians(states[:-1], inputs[stage_u], vehicle.wheelbase, cfg.t_s)
        vals = np.concatenate([con_ones, -jx.ravel(), -ju.ravel()])
        return sparse.coo_matrix(
            (vals, (con_rows, con_cols)), shape=(layout.n_constraints, layout.dimension)
        ).tocsr()

    lower = np.empty(layout.dimension)
    upper = np.empty(layout.dimension)
    lower[: layout.n_states] = np.tile(cfg.state_lower, n_p + 1)
    upper[: layout.n_states] = np.tile(cfg.state_upper, n_p + 1)
    s_idx = np.arange(n_p + 1) * STATE_DIM + 3
    lower[s_idx] = np.maximum(lower[s_idx], zeta[3] - 1.0)
    upper[s_idx] = np.minimum(upper[s_idx], zeta[3] + cfg.input_upper[2] * cfg.t_s * n_p + 1.0)
    lower[layout.n_states : layout.n_states + layout.n_inputs] = np.tile(cfg.input_lower, n_c)
    upper[layout.n_states : layout.n_states + layout.n_inputs] = np.tile(cfg.input_upper, n_c)
    lo_slack, hi_slack = corridor_limits(track, corridor_progress, cfg.boundary_margin)
    lower[layout.n_states + layout.n_inputs :] = lo_slack
    upper[layout.n_states + layout.n_inputs :] = hi_slack

    return NLPProblem(
        dimension=layout.dimension,
        residuals=residuals,
        residual_jacobian=residual_jacobian,
        linear_cost=linear,
        lower_bounds=lower,
        upper_bounds=upper,
        constraints=constraints,
        constraint_jacobian=constraint_jacobian,
        sparsity=layout.blocks(),
    )


class Planner:
    """One receding-horizon planner; owns nothing but its configuration.

    Warm starts come in through ``prev_solution``, so a single instance can be
    reused across races.
    """

    def __init__(
        self,
        track: TrackModel,
        mode: PlannerMode,
        horizon: HorizonConfig | None = None,
        weights: PlannerWeights | None = None,
        bounds: VelocityBounds | None = None,
        mapping: MappingParams | None = None,
        vehicle: VehicleParams | None = None,
        solver_settings: SolverSettings | None = None,
        options: PlannerOptions | None = None,
    ):
        self.track = track
        self.mode = PlannerMode(mode)
        self.horizon = horizon or HorizonConfig()
        self.weights = weights or (
            PlannerWeights.cimpcc_defaults() if self.mode == PlannerMode.CIMPCC else PlannerWeights()
        )
        self.bounds = bounds or VelocityBounds(v_bar=(4.18, 3.8), v_under=(2.72, 2.47))
        self.mapping = mapping or MappingParams()
        self.vehicle = vehicle or VehicleParams()
        self.solver_settings = solver_settings or SolverSettings()
        self.options = options or PlannerOptions()
        self.layout = ShootingLayout(self.horizon.n_p, self.horizon.n_c)

    def __repr__(self) -> str:
        return f"Planner(mode={self.mode.value}, n_p={self.horizon.n_p}, n_c={self.horizon.n_c})"

    def check_corridor(self, zeta_cur: VehicleState) -> float:
        """Return the contour error at the vehicle's foot point; raise OffTrack past the recovery band."""
        offset, s = self.track.lateral_offset(zeta_cur.x, zeta_cur.y, zeta_cur.progress)
        margin = self.horizon.boundary_margin
        lo, hi = corridor_limits(self.track, np.array([s]), margin)
        excess = max(lo[0] - offset, offset - hi[0], 0.0)
        if excess > 2.0 * margin:
            raise OffTrackError(
                f"Vehicle at ({zeta_cur.x:.3f}, {zeta_cur.y:.3f}) is {excess:.3f} m outside the corridor"
            )
        return offset

    def current_beta(self, zeta_cur: VehicleState) -> float:
        nsc = self.track.nsc_at_position(zeta_cur.x, zeta_cur.y, zeta_cur.progress)
        return map_nsc_to_beta(nsc, self.mapping)

    def cold_start_guess(self, zeta_cur: VehicleState) -> np.ndarray:
        """Roll out along the centerline at the safe projected velocity."""
        cfg = self.horizon
        v_l, v_p = self.bounds.v_under
        s = zeta_cur.progress + cfg.t_s * v_p * np.arange(cfg.n_p + 1)
        ref = self.track.sample_many(s)
        heading = zeta_cur.heading + wrap_angle(ref.heading - zeta_cur.heading)
        states = np.column_stack([ref.x, ref.y, heading, s])
        states[0] = zeta_cur.as_array()
        inputs = np.tile(cfg.clip_input(np.array([v_l, 0.0, v_p])), (cfg.n_c, 1))
        xi_con, _ = contour_lag_arrays(self.track, states[1:, 0], states[1:, 1], states[1:, 3])
        return self.layout.pack(states, inputs, xi_con)

    def warm_start_guess(self, zeta_cur: VehicleState, prev: HorizonPlan) -> np.ndarray:
        """Previous plan shifted one stage; the new last stage repeats the last input."""
        cfg = self.horizon
        if prev.states.shape != (cfg.n_p + 1, STATE_DIM) or prev.inputs.shape != (cfg.n_c, INPUT_DIM):
            raise DimensionMismatchError("Previous plan does not match the planner horizon")
        inputs = np.vstack([prev.inputs[1:], prev.inputs[-1:]])
        last = rk4_array(prev.states[-1], inputs[-1], self.vehicle.wheelbase, cfg.t_s)
        states = np.vstack([prev.states[1:], last])

        heading0 = zeta_cur.heading
        turns = np.round((states[0, 2] - heading0) / (2.0 * np.pi))
        states[:, 2] -= 2.0 * np.pi * turns
        states[0] = zeta_cur.as_array()

        slacks = np.concatenate([prev.slacks[1:], prev.slacks[-1:]]) if prev.slacks.size else None
        if slacks is None or slacks.shape != (cfg.n_p,):
            slacks, _ = contour_lag_arrays(self.track, states[1:, 0], states[1:, 1], states[1:, 3])
        return self.layout.pack(states, inputs, slacks)

    def solve_step(
        self,
        zeta_cur: VehicleState,
        prev_solution: HorizonPlan | None = None,
        previous_command: ControlInput | None = None,
    ) -> HorizonPlan:
        """Plan from ``zeta_cur``; the returned plan's first input is the command to apply.

        ``previous_command`` anchors the first input-rate term and defaults to
        the first input of ``prev_solution``.
        """
        start = time.perf_counter()
        cfg = self.horizon
        self.check_corridor(zeta_cur)

        guess = (
            self.warm_start_guess(zeta_cur, prev_solution)
            if prev_solution is not None
            else self.cold_start_guess(zeta_cur)
        )
        guess_states, _, _ = self.layout.unpack(guess)
        corridor_progress = guess_states[1:, 3]

        beta: float | np.ndarray = 1.0
        if self.mode == PlannerMode.CIMPCC:
            if self.options.per_stage_beta:
                beta = map_nsc_array(self.track.sample_many(corridor_progress).nsc, self.mapping)
            else:
                beta = self.current_beta(zeta_cur)

        anchor = None
        if self.options.anchor_previous_input:
            if previous_command is not None:
                anchor = previous_command.as_array()
            elif prev_solution is not None:
                anchor = prev_solution.inputs[0]

        problem = build_nlp(
            self.mode,
            zeta_cur,
            beta,
            cfg,
            self.weights,
            self.bounds,
            self.track,
            vehicle=self.vehicle,
            slack_weight=self.options.slack_weight,
            previous_input=anchor,
            corridor_progress=corridor_progress,
        )
        solution = solve(problem, guess, self.solver_settings)

        if solution.status != SolverStatus.CONVERGED:
            usable = (
                solution.status
                in (SolverStatus.TIME_LIMIT, SolverStatus.ITERATION_LIMIT, SolverStatus.STALLED)
                and solution.constraint_violation <= self.options.usable_violation
            )
            if not usable:
                raise SolverFailureError(
                    f"{self.mode.value} solve ended with {solution.status.value} "
                    f"(violation {solution.constraint_violation:.2e})"
                )
            logger.warning(
                f"Using {solution.status.value} iterate as command "
                f"(violation {solution.constraint_violation:.2e}, {solution.iterations} iterations)"
            )

        states, inputs, slacks = self.layout.unpack(solution.point)
        inputs = cfg.clip_input(inputs)
        plan = HorizonPlan.evaluate(
            self.track,
            states.copy(),
            inputs,
            slacks=slacks.copy(),
            beta=beta,
            objective_value=solution.objective_value,
            solve_time=time.perf_counter() - start,
            solver_status=solution.status,
            iterations=solution.iterations,
            constraint_violation=solution.constraint_violation,
        )
        logger.debug(
            f"{self.mode.value} s={zeta_cur.progress:.3f} beta={np.mean(beta):.3f} "
            f"status={solution.status.value} it={solution.iterations} "
            f"t={plan.solve_time * 1e3:.1f}ms u0={np.round(inputs[0], 3).tolist()}"
        )
        return plan
