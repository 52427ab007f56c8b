import numpy as np
import pytest

from otbot.dynamics import RobotState
from otbot.params import nominal_params
from otbot.sensors import (
    ENCODER_SIGMA,
    SensorModel,
    imu_truth,
    sample_sensors,
    sigma_imu,
)
from otbot.simulate import ControlSequence, simulate_robot, simulate_shaft


@pytest.fixture(scope="module")
def robot_traj():
    controls = ControlSequence.constant([6.0, -10.0, 6.0], duration=0.5, rate=100.0)
    return simulate_robot(nominal_params(), RobotState.rest(), controls)


@pytest.fixture(scope="module")
def shaft_traj():
    controls = ControlSequence.constant([6.0], duration=0.5, rate=100.0)
    return simulate_shaft(1.04e-2, 0.18, controls)


def test_sigma_imu_is_density_times_root_rate():
    assert sigma_imu(13.73e-3, 100.0) == pytest.approx(0.1373)
    assert sigma_imu(0.0, 100.0) == 0.0


def test_model_validation():
    with pytest.raises(ValueError, match="kind"):
        SensorModel(kind="lidar", sigma=0.1)
    with pytest.raises(ValueError, match="axis"):
        SensorModel(kind="encoder", sigma=0.1)
    with pytest.raises(ValueError, match="sigma"):
        SensorModel(kind="imu", sigma=-0.1)


def test_noise_free_encoder_returns_truth(shaft_traj):
    model = SensorModel(kind="encoder", sigma=0.0, axis=1)
    rec = sample_sensors(shaft_traj, model)
    np.testing.assert_array_equal(rec.values, shaft_traj.states[:, 1])
    np.testing.assert_array_equal(rec.times, shaft_traj.times)
    assert rec.kind == "encoder"


def test_seeded_noise_is_reproducible(shaft_traj):
    model = SensorModel(kind="encoder", sigma=ENCODER_SIGMA, axis=1)
    a = sample_sensors(shaft_traj, model, seed=42)
    b = sample_sensors(shaft_traj, model, seed=42)
    c = sample_sensors(shaft_traj, model, seed=43)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.any(a.values != c.values)
    assert a.seed == 42 and a.sigma == ENCODER_SIGMA


def test_noise_level_scales_with_sigma(shaft_traj):
    truth = shaft_traj.states[:, 1]
    devs = []
    for sigma in (0.01, 1.0):
        model = SensorModel(kind="encoder", sigma=sigma, axis=1)
        rec = sample_sensors(shaft_traj, model, seed=7)
        devs.append(np.std(rec.values - truth))
    # Same seed, so the draw is identical up to the scale factor.
    assert devs[1] == pytest.approx(100.0 * devs[0], rel=1e-12)
    assert devs[1] == pytest.approx(1.0, rel=0.3)


def test_imu_truth_channels(robot_traj):
    out = imu_truth(robot_traj)
    assert out.shape == (len(robot_traj.times), 3)
    # Third channel is the platform rate verbatim.
    np.testing.assert_array_equal(out[:, 2], robot_traj.states[:, 8])
    # The planar channels are a rotation: the acceleration magnitude survives.
    acc = robot_traj.accelerations[:, 0:2]
    np.testing.assert_allclose(
        np.hypot(out[:, 0], out[:, 1]), np.hypot(acc[:, 0], acc[:, 1]), atol=1e-12
    )


def test_imu_at_zero_platform_angle_is_world_frame(robot_traj):
    out = imu_truth(robot_traj)
    # The rollout starts with alpha = 0, so the first sample needs no rotation.
    assert robot_traj.states[0, 2] == 0.0
    np.testing.assert_allclose(out[0, 0:2], robot_traj.accelerations[0, 0:2], atol=1e-12)


def test_imu_sampling_uses_recorded_accelerations(robot_traj):
    model = SensorModel(kind="imu", sigma=0.0, rate=100.0)
    rec = sample_sensors(robot_traj, model)
    np.testing.assert_array_equal(rec.values, imu_truth(robot_traj))


def test_sensor_rate_may_be_coarser_than_the_grid(robot_traj):
    model = SensorModel(kind="imu", sigma=0.0, rate=50.0)
    rec = sample_sensors(robot_traj, model)
    assert len(rec.times) == 26
    np.testing.assert_allclose(np.diff(rec.times), 0.02, atol=1e-12)


def test_misaligned_grid_is_rejected(robot_traj):
    model = SensorModel(kind="imu", sigma=0.0, rate=333.0)
    with pytest.raises(ValueError, match="grid"):
        sample_sensors(robot_traj, model)
