"""Run configuration: pydantic models loaded from YAML (or JSON) files."""

from __future__ import annotations

import logging
import os
from enum import Enum
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import CimpccError, ConfigurationError
from .planner import HorizonConfig, Planner, PlannerMode, PlannerOptions, PlannerWeights
from .solver import HessianStrategy, SolverSettings
from .track import DEFAULT_MAF_WINDOW, DEFAULT_SEARCH_WINDOW, TrackModel, load_track
from .vehicle import Disturbance, VehicleParams
from .velocity_map import MappingParams, VelocityBounds, derive_velocity_bounds

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "CIMPCC_SEED"


class RunMode(str, Enum):
    """What the ``race`` and ``compare`` commands run."""

    MPCC = "MPCC"
    CIMPCC = "CiMPCC"
    COMPARE = "compare"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrackSection(Section):
    path: Path | None = Field(
        default=None,
        description="Track CSV; the bundled stadium-chicane fixture when unset"
    )
    maf_window: int = Field(
        default=DEFAULT_MAF_WINDOW,
        description="Moving average window in points (odd)"
    )
    resample_spacing: float | None = Field(
        default=None,
        description="Resample the centerline to this uniform spacing in meters"
    )
    search_window: int = Field(
        default=DEFAULT_SEARCH_WINDOW,
        description="Projection search half-window in points"
    )


class VehicleSection(Section):
    wheelbase: float = Field(default=0.324, description="Wheelbase L in meters")


class HorizonSection(Section):
    n_p: int = Field(default=10, description="Prediction horizon in stages")
    n_c: int = Field(default=10, description="Control horizon in stages")
    t_s: float = Field(default=0.05, description="Stage duration and control period in seconds")
    input_lower: tuple[float, float, float] = Field(
        default=(-10.0, -0.35, -10.0),
        description="Lower bounds on (v_l, delta, v_p)"
    )
    input_upper: tuple[float, float, float] = Field(
        default=(10.0, 0.35, 10.0),
        description="Upper bounds on (v_l, delta, v_p)"
    )
    boundary_margin: float = Field(
        default=0.15,
        description="Vehicle half-width kept clear of each track boundary, meters"
    )


class WeightsSection(Section):
    q_con: float = Field(default=800.0, description="Contour error weight")
    q_lag: float = Field(default=800.0, description="Lag error weight")
    gamma: float = Field(default=40.0, description="Progress reward weight")
    r1: tuple[float, float, float] = Field(
        default=(10.0, 3500.0, 0.0),
        description="Input rate weights on (v_l, delta, v_p)"
    )
    r2: tuple[float, float, float] = Field(
        default=(40.0, 10.0, 40.0),
        description="Input reference weights on (v_l, delta, v_p)"
    )
    r3: tuple[float, float] = Field(
        default=(40.0, 40.0),
        description="Overall velocity tracking weights on (v_l, v_p)"
    )
    u_ref: tuple[float, float, float] = Field(
        default=(3.3, 0.0, 3.0),
        description="Reference input (v_l, delta, v_p)"
    )

    def to_weights(self) -> PlannerWeights:
        return PlannerWeights(**self.model_dump())


class WeightsConfig(Section):
    mpcc: WeightsSection = Field(default_factory=WeightsSection, description="Baseline MPCC weights")
    cimpcc: WeightsSection = Field(
        default_factory=lambda: WeightsSection(r2=(0.0, 10.0, 0.0)),
        description="CiMPCC weights; R2 velocity entries are zeroed regardless"
    )


class MappingSection(Section):
    alpha: float = Field(default=3.0, description="NSC sensitivity of the velocity blend")
    per_stage_beta: bool = Field(
        default=False,
        description="Evaluate beta at every stage's progress instead of once per solve"
    )


class ExpertSection(Section):
    expert_vp: float = Field(description="Fastest projected velocity of an expert lap, m/s")
    body_factor: float = Field(default=1.1, description="v_bar_l = expert_vp * body_factor")
    discount: float = Field(default=0.65, description="Safe velocities = aggressive * discount")


class VelocitySection(Section):
    v_bar: tuple[float, float] = Field(
        default=(4.18, 3.8),
        description="Aggressive overall velocity (v_l, v_p)"
    )
    v_under: tuple[float, float] = Field(
        default=(2.72, 2.47),
        description="Safe overall velocity (v_l, v_p)"
    )
    expert: ExpertSection | None = Field(
        default=None,
        description="Derive both pairs from an expert lap instead"
    )

    def to_bounds(self) -> VelocityBounds:
        if self.expert is not None:
            return derive_velocity_bounds(
                self.expert.expert_vp, self.expert.body_factor, self.expert.discount
            )
        return VelocityBounds(v_bar=self.v_bar, v_under=self.v_under)


class SolverSection(Section):
    kkt_tolerance: float = Field(default=1e-6, description="Stationarity and feasibility tolerance")
    max_iterations: int = Field(default=100, description="SQP iteration budget per solve")
    max_wall_time: float | None = Field(
        default=None,
        description="Optional wall-time budget per solve in seconds, e.g. 0.05; null keeps runs reproducible"
    )
    hessian_strategy: HessianStrategy = Field(
        default=HessianStrategy.GAUSS_NEWTON,
        description="Objective curvature model"
    )


class PlannerSection(Section):
    slack_weight: float = Field(default=1e4, description="Soft corridor penalty weight")
    anchor_previous_input: bool = Field(
        default=True,
        description="Penalize the first input's change from the last applied command"
    )
    usable_violation: float = Field(
        default=1e-3,
        description="Max constraint violation of a non-converged iterate used as command"
    )


class DisturbanceSection(Section):
    v_l_std: float = Field(default=0.0, ge=0.0, description="Std dev of v_l noise, m/s")
    delta_std: float = Field(default=0.0, ge=0.0, description="Std dev of steering noise, rad")


class HarnessSection(Section):
    disturbance: DisturbanceSection = Field(default_factory=DisturbanceSection)
    max_lap_time: float = Field(
        default=60.0,
        gt=0.0,
        description="Abort when a lap (launch lap included) takes longer than this, seconds"
    )
    reanchor_progress: bool = Field(
        default=True,
        description="Reset the progress state to the vehicle's foot point every cycle"
    )


class RunConfig(Section):
    """Complete configuration of a race or comparison."""

    mode: RunMode = Field(default=RunMode.COMPARE, description="MPCC, CiMPCC or compare")
    n_laps: int = Field(default=5, ge=0, description="Counted laps after the launch lap")
    seed: int = Field(default=0, description="Disturbance random seed")
    output_dir: Path = Field(default=Path("results"), description="Directory for run outputs")

    track: TrackSection = Field(default_factory=TrackSection)
    vehicle: VehicleSection = Field(default_factory=VehicleSection)
    horizon: HorizonSection = Field(default_factory=HorizonSection)
    weights: WeightsConfig = Field(default_factory=WeightsConfig)
    mapping: MappingSection = Field(default_factory=MappingSection)
    velocity: VelocitySection = Field(default_factory=VelocitySection)
    solver: SolverSection = Field(default_factory=SolverSection)
    planner: PlannerSection = Field(default_factory=PlannerSection)
    harness: HarnessSection = Field(default_factory=HarnessSection)

    def horizon_config(self) -> HorizonConfig:
        return HorizonConfig(**self.horizon.model_dump())

    def weights_for(self, mode: PlannerMode) -> PlannerWeights:
        section = self.weights.cimpcc if mode == PlannerMode.CIMPCC else self.weights.mpcc
        return section.to_weights()

    def velocity_bounds(self) -> VelocityBounds:
        return self.velocity.to_bounds()

    def mapping_params(self) -> MappingParams:
        return MappingParams(alpha=self.mapping.alpha)

    def vehicle_params(self) -> VehicleParams:
        return VehicleParams(wheelbase=self.vehicle.wheelbase)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(**self.solver.model_dump())

    def planner_options(self) -> PlannerOptions:
        return PlannerOptions(per_stage_beta=self.mapping.per_stage_beta, **self.planner.model_dump())

    def disturbance(self) -> Disturbance:
        return Disturbance(**self.harness.disturbance.model_dump())

    def load_track(self) -> TrackModel:
        return load_track(
            self.track.path,
            window=self.track.maf_window,
            resample_spacing=self.track.resample_spacing,
            search_window=self.track.search_window,
        )

    def build_planner(self, track: TrackModel, mode: PlannerMode) -> Planner:
        return Planner(
            track,
            mode,
            horizon=self.horizon_config(),
            weights=self.weights_for(mode),
            bounds=self.velocity_bounds(),
            mapping=self.mapping_params(),
            vehicle=self.vehicle_params(),
            solver_settings=self.solver_settings(),
            options=self.planner_options(),
        )

    def check(self) -> None:
        """Build every domain object once so invariant violations surface as config errors."""
        if self.track.path is not None and not self.track.path.is_file():
            raise ConfigurationError(f"track.path: file not found: {self.track.path}")
        try:
            self.horizon_config()
            self.weights_for(PlannerMode.MPCC)
            self.weights_for(PlannerMode.CIMPCC)
            self.velocity_bounds()
            self.mapping_params()
            self.vehicle_params()
            self.solver_settings()
        except (CimpccError, ValueError) as e:
            raise ConfigurationError(str(e)) from e


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{where}: {item['msg']}")
    return "; ".join(lines)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse YAML or JSON config text into a checked ``RunConfig``."""
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            raise ConfigurationError(
                f"{source}: syntax error at line {mark.line + 1}, column {mark.column + 1}: "
                f"{getattr(e, 'problem', e)}"
            ) from e
        raise ConfigurationError(f"{source}: syntax error: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")

    try:
        config = RunConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"{source}: {_format_validation_error(e)}") from e
    config.check()
    return config


def apply_env_overrides(config: RunConfig) -> RunConfig:
    """Apply ``CIMPCC_SEED`` on top of a loaded config."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or not raw.strip():
        return config
    try:
        seed = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from e
    logger.info(f"Seed overridden by {SEED_ENV_VAR}={seed}")
    return config.model_copy(update={"seed": seed})


def load_config(config_path: Path | None = None) -> RunConfig:
    """Load configuration from file, or the embedded defaults when no path is given."""
    if config_path is None:
        return RunConfig()
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {config_path}: {e}") from e
    return parse_config(text, str(config_path))


def save_config(config: RunConfig, config_path: Path) -> None:
    """Write the fully resolved configuration."""
    config_path.parent.mkdir(parents=True, exist_ok=True)
    data = config.model_dump(mode="json")
    with open(config_path, "w") as f:
        yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)


def create_default_config_file(config_path: Path) -> Path:
    """Create a default configuration file."""
    save_config(RunConfig(), config_path)
    return config_path
