import math

import numpy as np
import pytest

from otbot.dynamics import RobotState, constraint_violation
from otbot.integrator import IntegratorOptions
from otbot.model import holonomic_residual
from otbot.params import nominal_params
from otbot.simulate import (
    ControlSequence,
    simulate_robot,
    simulate_shaft,
    trajectory_from_csv,
    trajectory_to_csv,
)


def chassis_controls(duration=1.0, rate=100.0):
    return ControlSequence.constant([6.0, -10.0, 6.0], duration=duration, rate=rate)


def test_control_sequence_lookup():
    seq = ControlSequence(t0=0.25, dt=0.25, samples=[[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(seq.boundaries, [0.25, 0.5, 0.75])
    assert seq.end_time == pytest.approx(1.0)
    assert seq.value_at(0.3)[0] == 1.0
    assert seq.value_at(0.5)[0] == 2.0  # boundary belongs to the new hold
    assert seq.value_at(0.0)[0] == 1.0  # clamped before t0
    assert seq.value_at(9.0)[0] == 3.0  # clamped past the end


def test_control_sequence_constant():
    seq = ControlSequence.constant([1.5, -2.5, 0.5], duration=0.5, rate=100.0)
    assert seq.samples.shape == (50, 3)
    assert seq.dt == pytest.approx(0.01)
    np.testing.assert_array_equal(seq.samples[17], [1.5, -2.5, 0.5])


def test_control_sequence_rejects_bad_dt():
    with pytest.raises(ValueError, match="dt"):
        ControlSequence(t0=0.0, dt=0.0, samples=[[1.0]])


def test_rest_with_zero_torque_stays_at_rest():
    p = nominal_params()
    controls = ControlSequence.constant([0.0, 0.0, 0.0], duration=0.2, rate=100.0)
    traj = simulate_robot(p, RobotState.rest(), controls)
    assert np.max(np.abs(traj.states)) == 0.0


def test_recorded_derivatives_and_controls():
    p = nominal_params()
    traj = simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.3))
    # First half of the derivative is the velocity, stored bitwise identical.
    np.testing.assert_array_equal(traj.derivs[:, :6], traj.dq)
    np.testing.assert_array_equal(traj.controls, np.tile([6.0, -10.0, 6.0], (len(traj.times), 1)))
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(0.3)


def test_simulation_is_deterministic():
    p = nominal_params()
    a = simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.4))
    b = simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.4))
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.times, b.times)


def test_output_times_subset_is_honoured():
    p = nominal_params()
    wanted = [0.0, 0.1, 0.25, 0.4]
    traj = simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.4), output_times=wanted)
    np.testing.assert_array_equal(traj.times, wanted)
    assert traj.states.shape == (4, 12)


def test_output_times_outside_span_rejected():
    p = nominal_params()
    with pytest.raises(ValueError, match="outside"):
        simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.4), output_times=[0.0, 0.7])


def test_output_grid_one_ulp_off_the_hold_grid():
    # arange(k)/rate and t0 + k*dt spell some instants differently by one ulp
    # (0.35 here); the two spellings must merge instead of leaving a
    # degenerate segment behind.
    grid = np.arange(51) / 100.0
    controls = ControlSequence.constant([6.0], duration=0.5, rate=100.0)
    assert controls.boundaries[35] != grid[35]  # the collision this guards
    traj = simulate_shaft(1.04e-2, 0.18, controls, output_times=grid)
    np.testing.assert_array_equal(traj.times, grid)
    assert np.all(np.isfinite(traj.states))


def test_shaft_matches_closed_form():
    inertia, damping, tau = 1.04e-2, 0.18, 6.0
    controls = ControlSequence.constant([tau], duration=1.5, rate=100.0)
    traj = simulate_shaft(inertia, damping, controls, options=IntegratorOptions(rtol=1e-10))
    t = traj.times
    rate = tau / damping * (1.0 - np.exp(-damping * t / inertia))
    angle = tau / damping * (t + inertia / damping * (np.exp(-damping * t / inertia) - 1.0))
    np.testing.assert_allclose(traj.states[:, 1], rate, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(traj.states[:, 0], angle, rtol=1e-8, atol=1e-12)


def test_shaft_without_damping_matches_closed_form():
    inertia, tau = 2.22, -3.0
    controls = ControlSequence.constant([tau], duration=1.0, rate=50.0)
    traj = simulate_shaft(inertia, 0.0, controls)
    np.testing.assert_allclose(traj.states[:, 1], tau * traj.times / inertia, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(
        traj.states[:, 0], 0.5 * tau * traj.times**2 / inertia, rtol=1e-9, atol=1e-12
    )


def test_rollout_preserves_constraints():
    p = nominal_params()
    traj = simulate_robot(p, RobotState.rest(), chassis_controls(duration=1.0))
    q0 = traj.q[0]
    for k in range(len(traj.times)):
        assert constraint_violation(p, traj.q[k], traj.dq[k]) < 1e-9
        assert abs(holonomic_residual(p, traj.q[k], q0)) < 1e-9


def test_pivot_force_changes_the_motion():
    p = nominal_params()
    controls = ControlSequence.constant([0.0, 0.0, 0.0], duration=0.5, rate=100.0)

    def push(t):
        return (40.0, 0.0) if t < 0.25 else None

    pushed = simulate_robot(p, RobotState.rest(), controls, pivot_force_fn=push, breakpoints=(0.25,))
    assert pushed.states[-1][0] > 0.01  # picked up forward speed, then coasts
    assert constraint_violation(p, pushed.q[-1], pushed.dq[-1]) < 1e-9


def test_csv_round_trip(tmp_path):
    p = nominal_params()
    traj = simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.3))
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, path)
    back = trajectory_from_csv(path)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.controls, traj.controls)
    with pytest.raises(ValueError, match="derivative"):
        back.accelerations


def test_csv_rejects_foreign_schema(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("time,speed\n0.0,1.0\n")
    with pytest.raises(ValueError, match="other.csv"):
        trajectory_from_csv(path)


def test_csv_rejects_empty_file(tmp_path):
    p = nominal_params()
    traj = simulate_robot(p, RobotState.rest(), chassis_controls(duration=0.2))
    path = tmp_path / "empty.csv"
    trajectory_to_csv(traj, path)
    path.write_text(path.read_text().splitlines()[0] + "\n")
    with pytest.raises(ValueError, match="no data"):
        trajectory_from_csv(path)
