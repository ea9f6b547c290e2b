"""Tests for the bicycle model and its integrators."""

import math

import numpy as np
import pytest

from cimpcc_racing.errors import SteeringSingularityError
from cimpcc_racing.vehicle import (
    ControlInput,
    Disturbance,
    VehicleParams,
    VehicleState,
    dynamics,
    plant_step,
    rk4_step,
    rk4_with_jacobians,
    wrap_angle,
)


@pytest.fixture
def params():
    """Default vehicle geometry."""
    return VehicleParams()


def _integrate(state, control, params, dt, duration):
    for _ in range(int(round(duration / dt))):
        state = rk4_step(state, control, params, dt)
    return state


class TestDynamics:
    """Tests for the continuous-time model."""

    def test_yaw_rate(self, params):
        """Test the heading rate of a steered vehicle."""
        deriv = dynamics(VehicleState(0, 0, 0, 0), ControlInput(2.0, 0.35, 1.0), params)
        assert deriv[2] == pytest.approx(2 * math.tan(0.35) / 0.324)
        assert deriv[3] == 1.0

    def test_straight_motion(self, params):
        """Test a vehicle heading +y moves along y."""
        deriv = dynamics(VehicleState(0, 0, math.pi / 2, 0), ControlInput(1.5, 0.0, 0.0), params)
        assert deriv == pytest.approx([0.0, 1.5, 0.0, 0.0], abs=1e-12)

    def test_steering_singularity(self, params):
        """Test steering at pi/2 is rejected."""
        with pytest.raises(SteeringSingularityError):
            dynamics(VehicleState(0, 0, 0, 0), ControlInput(1.0, math.pi / 2, 0.0), params)

    def test_invalid_wheelbase(self):
        """Test the wheelbase must be positive."""
        with pytest.raises(ValueError):
            VehicleParams(wheelbase=0.0)


class TestRk4Step:
    """Tests for the RK4 discretization."""

    def test_heading_change_exact(self, params):
        """Test RK4 is exact in heading for constant steering."""
        nxt = rk4_step(VehicleState(0, 0, 0, 0), ControlInput(1.0, 0.2, 0.0), params, 0.05)
        assert nxt.heading == pytest.approx(math.tan(0.2) / 0.324 * 0.05, abs=1e-8)

    def test_convergence_order(self, params):
        """Test halving the step cuts the error by about 16."""
        start = VehicleState(0.0, 0.0, 0.3, 0.0)
        control = ControlInput(2.0, 0.3, 1.0)
        reference = _integrate(start, control, params, 0.001, 1.0)
        errors = []
        for dt in (0.2, 0.1):
            end = _integrate(start, control, params, dt, 1.0)
            errors.append(math.hypot(end.x - reference.x, end.y - reference.y))
        assert math.log2(errors[0] / errors[1]) >= 3.5

    def test_progress_decoupled(self, params):
        """Test progress depends only on v_p."""
        state = VehicleState(1.0, 2.0, 0.4, 7.0)
        a = rk4_step(state, ControlInput(1.0, 0.1, 2.0), params, 0.05)
        b = rk4_step(state, ControlInput(3.0, -0.3, 2.0), params, 0.05)
        assert a.progress == b.progress == pytest.approx(7.1)

    def test_heading_wrapped(self, params):
        """Test heading stays in (-pi, pi] over many steps."""
        state = VehicleState(0, 0, 0, 0)
        for _ in range(400):
            state = rk4_step(state, ControlInput(3.0, 0.35, 0.0), params, 0.05)
            assert -math.pi < state.heading <= math.pi

    def test_nonpositive_step(self, params):
        """Test dt must be positive."""
        with pytest.raises(ValueError):
            rk4_step(VehicleState(0, 0, 0, 0), ControlInput(1.0, 0.0, 1.0), params, 0.0)

    def test_jacobians_match_finite_differences(self, params):
        """Test the analytic step Jacobians against central differences."""
        x = np.array([[0.5, -0.2, 0.7, 3.0]])
        u = np.array([[2.0, 0.25, 1.5]])
        _, jx, ju = rk4_with_jacobians(x, u, params.wheelbase, 0.05)
        h = 1e-6
        for i in range(4):
            e = np.zeros((1, 4))
            e[0, i] = h
            plus, _, _ = rk4_with_jacobians(x + e, u, params.wheelbase, 0.05)
            minus, _, _ = rk4_with_jacobians(x - e, u, params.wheelbase, 0.05)
            assert np.allclose((plus - minus)[0] / (2 * h), jx[0, :, i], atol=1e-6)
        for i in range(3):
            e = np.zeros((1, 3))
            e[0, i] = h
            plus, _, _ = rk4_with_jacobians(x, u + e, params.wheelbase, 0.05)
            minus, _, _ = rk4_with_jacobians(x, u - e, params.wheelbase, 0.05)
            assert np.allclose((plus - minus)[0] / (2 * h), ju[0, :, i], atol=1e-6)


class TestPlantStep:
    """Tests for the simulated plant."""

    def test_matches_rk4(self, params):
        """Test the substepped plant agrees with one RK4 step."""
        state = VehicleState(0.0, 0.0, 0.1, 0.0)
        control = ControlInput(2.0, 0.3, 1.8)
        a = plant_step(state, control, params, 0.05)
        b = rk4_step(state, control, params, 0.05)
        assert a.as_array() == pytest.approx(b.as_array(), abs=1e-6)

    def test_zero_variance_disturbance(self, params):
        """Test an inactive disturbance changes nothing."""
        state = VehicleState(0.0, 0.0, 0.1, 0.0)
        control = ControlInput(2.0, 0.3, 1.8)
        noisy = plant_step(
            state, control, params, 0.05, Disturbance(), np.random.default_rng(0)
        )
        assert noisy == plant_step(state, control, params, 0.05)

    def test_seeded_disturbance_deterministic(self, params):
        """Test equal seeds give equal trajectories."""
        state = VehicleState(0.0, 0.0, 0.1, 0.0)
        control = ControlInput(2.0, 0.1, 1.8)
        noise = Disturbance(v_l_std=0.2, delta_std=0.05)
        a = plant_step(state, control, params, 0.05, noise, np.random.default_rng(7))
        b = plant_step(state, control, params, 0.05, noise, np.random.default_rng(7))
        assert a == b
        assert a != plant_step(state, control, params, 0.05)

    def test_disturbance_needs_generator(self, params):
        """Test an active disturbance without a generator is an error."""
        with pytest.raises(ValueError):
            plant_step(
                VehicleState(0, 0, 0, 0),
                ControlInput(1.0, 0.0, 1.0),
                params,
                0.05,
                Disturbance(v_l_std=0.1),
            )


def test_wrap_angle():
    """Test wrapping into (-pi, pi]."""
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_state_array_roundtrip():
    """Test VehicleState and ControlInput array conversion."""
    state = VehicleState(1.0, 2.0, 0.5, 3.0)
    assert VehicleState.from_array(state.as_array()) == state
    command = ControlInput(1.0, -0.2, 2.0)
    assert ControlInput.from_array(command.as_array()) == command
