"""Tests for the objective terms, NLP assembly and receding-horizon planner."""

import math

import numpy as np
import pytest
from scipy import sparse

from cimpcc_racing.errors import (
    ConfigurationError,
    DimensionMismatchError,
    OffTrackError,
)
from cimpcc_racing.planner import (
    HorizonConfig,
    HorizonPlan,
    Planner,
    PlannerMode,
    PlannerOptions,
    PlannerWeights,
    ShootingLayout,
    build_nlp,
    contour_lag_errors,
    corridor_limits,
    effective_weights,
    eval_j_ci,
    eval_j_mpcc,
    slack_penalty,
)
from cimpcc_racing.solver import SolverSettings, SolverStatus
from cimpcc_racing.vehicle import ControlInput, VehicleState, plant_step, rk4_array
from cimpcc_racing.velocity_map import VelocityBounds

BOUNDS = VelocityBounds(v_bar=(4.18, 3.8), v_under=(2.72, 2.47))
SETTINGS = SolverSettings(max_wall_time=None)


def _one_stage_plan(inputs, xi_con=(0.0, 0.0), xi_lag=(0.0, 0.0)):
    return HorizonPlan(
        states=np.zeros((2, 4)),
        inputs=np.atleast_2d(np.asarray(inputs, dtype=float)),
        xi_con=np.asarray(xi_con, dtype=float),
        xi_lag=np.asarray(xi_lag, dtype=float),
    )


def _rollout(zeta, inputs, cfg):
    states = [zeta.as_array()]
    for k in range(cfg.n_p):
        u = inputs[min(k, cfg.n_c - 1)]
        states.append(rk4_array(states[-1], u, 0.324, cfg.t_s))
    return np.array(states)


def _finite_difference(fn, z, h=1e-6):
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        cols.append((np.atleast_1d(fn(z + e)) - np.atleast_1d(fn(z - e))) / (2 * h))
    return np.column_stack(cols)


class TestContourLagErrors:
    """Tests for contour_lag_errors."""

    def test_on_reference(self, chicane_track):
        """Test a vehicle at the reference pose has no error."""
        pose = chicane_track.sample(1.0)
        xi = contour_lag_errors(VehicleState(pose.x, pose.y, 0.0, 1.0), chicane_track)
        assert xi == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_lateral_offset(self, chicane_track):
        """Test a leftward offset on a +x straight gives xi_con = -d."""
        xi_con, xi_lag = contour_lag_errors(VehicleState(1.0, 0.3, 0.0, 1.0), chicane_track)
        assert xi_con == pytest.approx(-0.3, abs=1e-9)
        assert xi_lag == pytest.approx(0.0, abs=1e-9)

    def test_longitudinal_offset(self, chicane_track):
        """Test being ahead of the reference gives xi_lag = -l."""
        xi_con, xi_lag = contour_lag_errors(VehicleState(1.2, 0.0, 0.0, 1.0), chicane_track)
        assert xi_con == pytest.approx(0.0, abs=1e-9)
        assert xi_lag == pytest.approx(-0.2, abs=1e-9)

    def test_rotated_frame(self, circle_track):
        """Test the sign convention holds for any reference heading."""
        pose = circle_track.sample(3.3)
        d = 0.25
        x = pose.x - d * math.sin(pose.heading)
        y = pose.y + d * math.cos(pose.heading)
        xi_con, xi_lag = contour_lag_errors(VehicleState(x, y, 0.0, 3.3), circle_track)
        assert xi_con == pytest.approx(-d)
        assert xi_lag == pytest.approx(0.0, abs=1e-12)


class TestObjectiveTerms:
    """Tests for eval_j_mpcc, eval_j_ci and slack_penalty."""

    @pytest.fixture
    def cfg(self):
        """A one-stage horizon."""
        return HorizonConfig(n_p=1, n_c=1)

    def test_zero_cost(self, cfg):
        """Test inputs at the reference with no errors cost nothing."""
        weights = PlannerWeights(u_ref=(1.0, 0.0, 0.0))
        assert eval_j_mpcc(_one_stage_plan([1.0, 0.0, 0.0]), weights, cfg) == 0.0

    def test_contour_term(self, cfg):
        """Test a unit contour error costs Q."""
        weights = PlannerWeights(gamma=0.0, r1=(0.0, 0.0, 0.0), r2=(0.0, 0.0, 0.0))
        plan = _one_stage_plan([0.0, 0.0, 0.0], xi_con=(0.0, 1.0))
        assert eval_j_mpcc(plan, weights, cfg) == pytest.approx(800.0)

    def test_stage_zero_error_not_counted(self, cfg):
        """Test the current stage's error is a constant left out of the cost."""
        weights = PlannerWeights(gamma=0.0, r1=(0.0, 0.0, 0.0), r2=(0.0, 0.0, 0.0))
        plan = _one_stage_plan([0.0, 0.0, 0.0], xi_con=(5.0, 0.0))
        assert eval_j_mpcc(plan, weights, cfg) == 0.0

    def test_progress_reward(self, cfg):
        """Test the progress term is -gamma v_p T_s."""
        weights = PlannerWeights(
            q_con=0.0, q_lag=0.0, r1=(0.0, 0.0, 0.0), r2=(0.0, 0.0, 0.0)
        )
        assert eval_j_mpcc(_one_stage_plan([0.0, 0.0, 3.0]), weights, cfg) == pytest.approx(-6.0)

    def test_previous_input_rate(self, cfg):
        """Test the first input's change from the applied command is penalized."""
        weights = PlannerWeights(
            q_con=0.0, q_lag=0.0, gamma=0.0, r2=(0.0, 0.0, 0.0)
        )
        plan = _one_stage_plan([1.0, 0.1, 0.0])
        cost = eval_j_mpcc(plan, weights, cfg, previous_input=np.zeros(3))
        assert cost == pytest.approx(10.0 + 3500.0 * 0.01)

    def test_dimension_mismatch(self):
        """Test a plan of the wrong size is rejected."""
        with pytest.raises(DimensionMismatchError):
            eval_j_mpcc(_one_stage_plan([0.0, 0.0, 0.0]), PlannerWeights(), HorizonConfig())

    def test_ci_zero_at_aggressive(self):
        """Test beta=1 at v_bar costs nothing."""
        plan = _one_stage_plan([4.18, 0.0, 3.8])
        assert eval_j_ci(plan, 1.0, BOUNDS, (40.0, 40.0)) == pytest.approx(0.0)

    def test_ci_half_blend(self):
        """Test a hand-evaluated blend."""
        bounds = VelocityBounds(v_bar=(4.0, 4.0), v_under=(2.0, 2.0))
        plan = _one_stage_plan([4.0, 0.0, 4.0])
        assert eval_j_ci(plan, 0.5, bounds, (1.0, 1.0)) == pytest.approx(4.0)

    def test_ci_argmin_is_blend(self):
        """Test the blended target minimizes the velocity cost."""
        beta = math.exp(-3.0)
        v = BOUNDS.blended(beta)
        best = eval_j_ci(_one_stage_plan([v[0], 0.0, v[1]]), beta, BOUNDS, (40.0, 40.0))
        for dv in ((0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)):
            plan = _one_stage_plan([v[0] + dv[0], 0.0, v[1] + dv[1]])
            assert eval_j_ci(plan, beta, BOUNDS, (40.0, 40.0)) > best

    @pytest.mark.parametrize("beta", [0.0, 1.5])
    def test_ci_invalid_beta(self, beta):
        """Test beta outside (0, 1] is rejected."""
        with pytest.raises(ConfigurationError):
            eval_j_ci(_one_stage_plan([1.0, 0.0, 1.0]), beta, BOUNDS, (40.0, 40.0))

    def test_slack_penalty(self):
        """Test the soft corridor cost skips stage 0."""
        assert slack_penalty(np.array([9.0, 0.5, -0.2]), np.array([0.4, -0.2]), 100.0) == pytest.approx(1.0)

    def test_effective_weights(self):
        """Test CiMPCC zeroes the velocity entries of R2."""
        weights = PlannerWeights()
        assert effective_weights(PlannerMode.CIMPCC, weights).r2 == (0.0, 10.0, 0.0)
        assert effective_weights(PlannerMode.MPCC, weights) is weights


class TestConfiguration:
    """Tests for weight, horizon and layout validation."""

    def test_weight_sizes(self):
        """Test vector weights need the right length."""
        with pytest.raises(ConfigurationError):
            PlannerWeights(r3=(1.0,))

    def test_negative_weight(self):
        """Test weights must be non-negative."""
        with pytest.raises(ConfigurationError):
            PlannerWeights(q_con=-1.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_p": 5, "n_c": 6},
            {"n_p": 0},
            {"t_s": 0.0},
            {"input_lower": (-1.0, -1.6, -1.0), "input_upper": (1.0, 1.6, 1.0)},
            {"boundary_margin": -0.1},
        ],
    )
    def test_invalid_horizon(self, kwargs):
        """Test inconsistent horizons are rejected."""
        with pytest.raises(ConfigurationError):
            HorizonConfig(**kwargs)

    def test_wide_steering_bound_accepted(self):
        """Test steering bounds inside pi/2 are accepted."""
        assert HorizonConfig(input_lower=(-10, -0.5, -10), input_upper=(10, 0.5, 10)).input_upper[1] == 0.5

    def test_layout_sizes(self):
        """Test the decision vector and constraint counts."""
        layout = ShootingLayout(10, 10)
        assert layout.dimension == 84
        assert layout.n_constraints == 44
        assert layout.slack_index(1) == 74

    def test_stage_inputs_hold_last(self):
        """Test stages past the control horizon reuse the last input."""
        assert ShootingLayout(5, 3).stage_inputs.tolist() == [0, 1, 2, 2, 2]

    def test_unpack_dimension(self):
        """Test unpacking a wrong-size vector fails."""
        with pytest.raises(DimensionMismatchError):
            ShootingLayout(10, 10).unpack(np.zeros(80))


class TestBuildNlp:
    """Tests for build_nlp."""

    @pytest.fixture
    def cfg(self):
        """Default horizon."""
        return HorizonConfig()

    @pytest.fixture
    def zeta(self):
        """On the first straight of the stadium."""
        return VehicleState(2.0, 0.0, 0.0, 2.0)

    @pytest.fixture
    def candidate(self, cfg, zeta):
        """A dynamically feasible candidate with perturbed inputs and slacks."""
        rng = np.random.default_rng(5)
        inputs = np.column_stack(
            [
                rng.uniform(2.0, 3.5, cfg.n_c),
                rng.uniform(-0.1, 0.1, cfg.n_c),
                rng.uniform(2.0, 3.5, cfg.n_c),
            ]
        )
        states = _rollout(zeta, inputs, cfg)
        slacks = rng.uniform(-0.2, 0.2, cfg.n_p)
        return ShootingLayout(cfg.n_p, cfg.n_c).pack(states, inputs, slacks)

    def test_dimensions(self, stadium_track, cfg, zeta, candidate):
        """Test problem and constraint sizes."""
        problem = build_nlp(PlannerMode.CIMPCC, zeta, 0.7, cfg, PlannerWeights(), BOUNDS, stadium_track)
        assert problem.dimension == 84
        assert problem.constraint_values(candidate).shape == (44,)
        assert problem.constraint_matrix(candidate).shape == (44, 84)

    def test_feasible_candidate(self, stadium_track, cfg, zeta, candidate):
        """Test a rollout satisfies the shooting constraints."""
        problem = build_nlp(PlannerMode.MPCC, zeta, 1.0, cfg, PlannerWeights(), BOUNDS, stadium_track)
        assert np.max(np.abs(problem.constraint_values(candidate))) < 1e-12

    def test_mpcc_ignores_beta(self, stadium_track, cfg, zeta, candidate):
        """Test MPCC builds with different beta are the same problem."""
        a = build_nlp(PlannerMode.MPCC, zeta, 0.2, cfg, PlannerWeights(), BOUNDS, stadium_track)
        b = build_nlp(PlannerMode.MPCC, zeta, 0.9, cfg, PlannerWeights(), BOUNDS, stadium_track)
        assert np.array_equal(a.residuals(candidate), b.residuals(candidate))
        assert np.array_equal(a.linear_cost, b.linear_cost)
        assert np.array_equal(a.lower_bounds, b.lower_bounds)
        assert np.array_equal(a.upper_bounds, b.upper_bounds)

    @pytest.mark.parametrize("mode", list(PlannerMode))
    def test_gradient_matches_finite_differences(self, stadium_track, cfg, zeta, candidate, mode):
        """Test the objective gradient against central differences."""
        problem = build_nlp(
            mode,
            zeta,
            0.6,
            cfg,
            PlannerWeights(),
            BOUNDS,
            stadium_track,
            previous_input=np.array([2.5, 0.0, 2.4]),
        )
        fd = _finite_difference(problem.objective, candidate)[0]
        assert np.allclose(problem.gradient(candidate), fd, rtol=1e-5, atol=1e-4)

    def test_constraint_jacobian_matches_finite_differences(self, stadium_track, cfg, zeta, candidate):
        """Test the shooting Jacobian against central differences."""
        problem = build_nlp(PlannerMode.MPCC, zeta, 1.0, cfg, PlannerWeights(), BOUNDS, stadium_track)
        fd = _finite_difference(problem.constraint_values, candidate)
        assert np.allclose(problem.constraint_matrix(candidate), fd, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("mode", list(PlannerMode))
    @pytest.mark.parametrize("previous", [None, np.array([2.5, 0.0, 2.4])])
    def test_residual_jacobian_is_sparse(self, stadium_track, cfg, zeta, candidate, mode, previous):
        """Test the sparse residual Jacobian against central differences."""
        beta = np.linspace(0.3, 0.9, cfg.n_p)
        problem = build_nlp(
            mode, zeta, beta, cfg, PlannerWeights(), BOUNDS, stadium_track, previous_input=previous
        )
        jac = problem.residual_jacobian(candidate)
        assert sparse.issparse(jac)
        assert jac.shape == (problem.residuals(candidate).size, 84)
        fd = _finite_difference(problem.residuals, candidate)
        assert np.allclose(jac.toarray(), fd, rtol=1e-5, atol=1e-5)
        assert sparse.issparse(problem.constraint_jacobian(candidate))

    @pytest.mark.parametrize("mode", list(PlannerMode))
    def test_objective_decomposition(self, stadium_track, cfg, zeta, candidate, mode):
        """Test the NLP objective equals the standalone cost terms."""
        weights = PlannerWeights()
        previous = np.array([2.5, 0.05, 2.4])
        beta = 0.4
        problem = build_nlp(
            mode, zeta, beta, cfg, weights, BOUNDS, stadium_track, previous_input=previous
        )
        layout = ShootingLayout(cfg.n_p, cfg.n_c)
        states, inputs, slacks = layout.unpack(candidate)
        plan = HorizonPlan.evaluate(stadium_track, states, inputs)

        expected = eval_j_mpcc(plan, effective_weights(mode, weights), cfg, previous_input=previous)
        if mode == PlannerMode.CIMPCC:
            expected += eval_j_ci(plan, beta, BOUNDS, weights.r3)
        expected += slack_penalty(plan.xi_con, slacks, 1e4)
        assert problem.objective(candidate) == pytest.approx(expected, rel=1e-10)

    def test_progress_reward_pushes_past_v_bar(self, stadium_track, cfg, zeta):
        """Test at v_bar with beta=1 the gradient still favors faster progress."""
        layout = ShootingLayout(cfg.n_p, cfg.n_c)
        inputs = np.tile([4.18, 0.0, 3.8], (cfg.n_c, 1))
        z = layout.pack(_rollout(zeta, inputs, cfg), inputs, np.zeros(cfg.n_p))
        problem = build_nlp(PlannerMode.CIMPCC, zeta, 1.0, cfg, PlannerWeights(), BOUNDS, stadium_track)
        grad = problem.gradient(z)
        v_p = [layout.input_index(k, 2) for k in range(cfg.n_c)]
        v_l = [layout.input_index(k, 0) for k in range(cfg.n_c)]
        assert grad[v_p] == pytest.approx(np.full(cfg.n_c, -40.0 * 0.05))
        assert grad[v_l] == pytest.approx(np.zeros(cfg.n_c), abs=1e-9)

    def test_corridor_slack_bounds(self, stadium_track, cfg, zeta):
        """Test slack bounds are the half-widths minus the margin."""
        problem = build_nlp(PlannerMode.MPCC, zeta, 1.0, cfg, PlannerWeights(), BOUNDS, stadium_track)
        slack = ShootingLayout(cfg.n_p, cfg.n_c).slack_index(1)
        assert problem.lower_bounds[slack:] == pytest.approx(np.full(cfg.n_p, -0.45))
        assert problem.upper_bounds[slack:] == pytest.approx(np.full(cfg.n_p, 0.45))

    def test_corridor_limits_never_invert(self, stadium_track):
        """Test a margin wider than the track collapses the corridor to zero."""
        lo, hi = corridor_limits(stadium_track, np.array([1.0, 2.0]), 0.8)
        assert np.all(lo == 0.0)
        assert np.all(hi == 0.0)

    def test_nonfinite_state(self, stadium_track, cfg):
        """Test a non-finite current state is rejected."""
        with pytest.raises(ConfigurationError):
            build_nlp(
                PlannerMode.MPCC,
                VehicleState(math.nan, 0.0, 0.0, 0.0),
                1.0,
                cfg,
                PlannerWeights(),
                BOUNDS,
                stadium_track,
            )

    def test_invalid_beta(self, stadium_track, cfg, zeta):
        """Test CiMPCC rejects beta outside (0, 1]."""
        with pytest.raises(ConfigurationError):
            build_nlp(PlannerMode.CIMPCC, zeta, 0.0, cfg, PlannerWeights(), BOUNDS, stadium_track)


class TestPlanner:
    """Tests for Planner.solve_step."""

    @pytest.fixture
    def zeta(self):
        """On the first straight of the stadium, aligned with it."""
        return VehicleState(2.0, 0.0, 0.0, 2.0)

    @pytest.fixture
    def planner(self, stadium_track):
        """A CiMPCC planner without a wall-time budget."""
        return Planner(stadium_track, PlannerMode.CIMPCC, solver_settings=SETTINGS)

    def test_accelerates_straight(self, planner, zeta):
        """Test a vehicle on a straight drives forward without steering."""
        plan = planner.solve_step(zeta)
        assert plan.command.v_l > 0
        assert abs(plan.command.delta) < 0.02
        assert plan.beta == pytest.approx(1.0, abs=1e-6)

    def test_plan_respects_bounds(self, planner, zeta):
        """Test returned inputs lie inside the input bounds."""
        plan = planner.solve_step(zeta)
        cfg = planner.horizon
        assert np.all(plan.inputs >= np.asarray(cfg.input_lower))
        assert np.all(plan.inputs <= np.asarray(cfg.input_upper))
        assert plan.states.shape == (11, 4)
        assert plan.xi_con.shape == (11,)

    def test_plan_is_dynamically_consistent(self, planner, zeta):
        """Test the returned states follow the shooting dynamics."""
        plan = planner.solve_step(zeta)
        assert plan.constraint_violation <= 1e-3
        for k in range(plan.n_p):
            nxt = rk4_array(plan.states[k], plan.inputs[min(k, plan.n_c - 1)], 0.324, 0.05)
            assert np.max(np.abs(plan.states[k + 1] - nxt)) <= plan.constraint_violation + 1e-12

    def test_first_stage_is_current_state(self, planner, zeta):
        """Test stage 0 of the plan is the current state."""
        plan = planner.solve_step(zeta)
        assert plan.state(0).as_array() == pytest.approx(zeta.as_array(), abs=1e-3)

    def test_off_track(self, planner):
        """Test a vehicle far outside the corridor is rejected."""
        with pytest.raises(OffTrackError):
            planner.solve_step(VehicleState(2.0, 1.5, 0.0, 2.0))

    def test_recovery_band(self, planner):
        """Test a vehicle just outside the corridor is still planned for."""
        assert planner.check_corridor(VehicleState(2.0, 0.5, 0.0, 2.0)) == pytest.approx(-0.5)

    def test_mpcc_beta_is_one(self, stadium_track, zeta):
        """Test MPCC plans carry beta=1."""
        planner = Planner(stadium_track, PlannerMode.MPCC, solver_settings=SETTINGS)
        assert planner.solve_step(zeta).beta == 1.0

    def test_per_stage_beta(self, stadium_track, zeta):
        """Test the per-stage option evaluates beta along the horizon."""
        planner = Planner(
            stadium_track,
            PlannerMode.CIMPCC,
            solver_settings=SETTINGS,
            options=PlannerOptions(per_stage_beta=True),
        )
        plan = planner.solve_step(zeta)
        assert np.shape(plan.beta) == (10,)

    def test_cold_start_guess(self, planner, zeta):
        """Test the cold start rolls out along the centerline at the safe velocity."""
        states, inputs, _ = planner.layout.unpack(planner.cold_start_guess(zeta))
        assert states[0] == pytest.approx(zeta.as_array())
        assert np.all(inputs == np.array([2.72, 0.0, 2.47]))
        assert states[-1, 3] == pytest.approx(2.0 + 10 * 0.05 * 2.47)

    def test_warm_start_shifts(self, planner, zeta):
        """Test the warm start drops the first stage and repeats the last input."""
        plan = planner.solve_step(zeta)
        nxt = VehicleState(*plan.states[1])
        states, inputs, _ = planner.layout.unpack(planner.warm_start_guess(nxt, plan))
        assert inputs[:-1] == pytest.approx(plan.inputs[1:])
        assert inputs[-1] == pytest.approx(plan.inputs[-1])
        assert states[1:-1] == pytest.approx(plan.states[2:])

    def test_warm_start_shape_mismatch(self, planner, zeta, stadium_track):
        """Test a plan from another horizon cannot warm start."""
        short = Planner(
            stadium_track,
            PlannerMode.CIMPCC,
            horizon=HorizonConfig(n_p=5, n_c=5),
            solver_settings=SETTINGS,
        )
        with pytest.raises(DimensionMismatchError):
            planner.warm_start_guess(zeta, short.solve_step(zeta))

    @pytest.mark.slow
    def test_warm_start_needs_fewer_iterations(self, planner, zeta):
        """Test warm starts take no more iterations than cold starts, median over a run."""
        warm_iterations, cold_iterations = [], []
        state = zeta
        plan = planner.solve_step(state)
        command = plan.command
        for _ in range(20):
            state = plant_step(state, command, planner.vehicle, 0.05)
            warm = planner.solve_step(state, plan, command)
            cold = planner.solve_step(state, None, command)
            warm_iterations.append(warm.iterations)
            cold_iterations.append(cold.iterations)
            plan, command = warm, warm.command
        assert np.median(warm_iterations) <= np.median(cold_iterations)

    def test_command_is_first_input(self, planner, zeta):
        """Test the command is the plan's first input."""
        plan = planner.solve_step(zeta)
        assert plan.command == ControlInput(*plan.inputs[0])
        assert plan.solver_status in set(SolverStatus)
