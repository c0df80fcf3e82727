import numpy as np
import pytest

from trellismap.geometry import Pose, so3_exp, so3_log
from trellismap.imu import (
    ImuNoise,
    ImuSample,
    RobotState,
    imu_residual,
    predict_state,
    preintegrate,
)

from helpers import random_rotation

ZERO3 = np.zeros(3)
GRAVITY = np.array([0.0, 0.0, -9.81])
NOISE = ImuNoise(gyro_sigma=0.002, accel_sigma=0.02)


def make_stream(duration, rate, gyro_fn, accel_fn, t0=0.0):
    n = int(round(duration * rate)) + 1
    return [
        ImuSample(t0 + k / rate, gyro_fn(t0 + k / rate), accel_fn(t0 + k / rate))
        for k in range(n)
    ]


class TestPreintegrate:
    def test_null_motion(self):
        stream = make_stream(1.0, 100.0, lambda t: ZERO3, lambda t: ZERO3)
        delta = preintegrate(stream, ZERO3, ZERO3, NOISE)
        assert np.allclose(delta.rotation.matrix, np.eye(3), atol=1e-15)
        assert np.allclose(delta.velocity, 0.0)
        assert np.allclose(delta.position, 0.0)
        assert delta.dt == pytest.approx(1.0)

    def test_constant_rate_closed_form(self):
        stream = make_stream(1.0, 100.0, lambda t: np.array([0.0, 0.0, 1.0]), lambda t: ZERO3)
        delta = preintegrate(stream, ZERO3, ZERO3, NOISE)
        expected = so3_exp([0.0, 0.0, 1.0])
        assert np.allclose(delta.rotation.matrix, expected.matrix, atol=1e-12)

    def test_constant_accel_kinematics(self):
        # a = 1 m/s^2 along body x for 2 s: v = a t = 2, p = a t^2 / 2 = 2.
        stream = make_stream(2.0, 100.0, lambda t: ZERO3, lambda t: np.array([1.0, 0.0, 0.0]))
        delta = preintegrate(stream, ZERO3, ZERO3, NOISE)
        assert np.allclose(delta.velocity, [2.0, 0.0, 0.0], atol=1e-12)
        assert np.allclose(delta.position, [2.0, 0.0, 0.0], atol=1e-12)

    def test_bias_correction(self):
        bias_g = np.array([0.01, -0.02, 0.03])
        bias_a = np.array([-0.1, 0.05, 0.2])
        stream = make_stream(1.0, 100.0, lambda t: bias_g, lambda t: bias_a)
        delta = preintegrate(stream, bias_g, bias_a, NOISE)
        assert np.allclose(delta.rotation.matrix, np.eye(3), atol=1e-14)
        assert np.allclose(delta.velocity, 0.0, atol=1e-14)

    def test_subinterval_composition(self):
        # Splitting a stream at a shared sample and composing the two deltas
        # reproduces the whole-interval delta exactly.
        rng = np.random.default_rng(5)

        def gyro(t):
            return 0.15 * np.array([np.sin(2 * t), np.cos(3 * t), np.sin(t + 0.4)])

        def accel(t):
            return np.array([0.5 * np.sin(t), -0.3 * np.cos(2 * t), 0.2 * np.sin(3 * t)])

        stream = make_stream(2.0, 100.0, gyro, accel)
        mid = len(stream) // 2
        whole = preintegrate(stream, ZERO3, ZERO3, NOISE)
        first = preintegrate(stream[: mid + 1], ZERO3, ZERO3, NOISE)
        second = preintegrate(stream[mid:], ZERO3, ZERO3, NOISE)

        rot = first.rotation @ second.rotation
        vel = first.velocity + first.rotation.apply(second.velocity)
        pos = first.position + first.velocity * second.dt + first.rotation.apply(second.position)
        assert np.linalg.norm(so3_log(rot.inverse() @ whole.rotation)) < 1e-6
        assert np.linalg.norm(vel - whole.velocity) < 1e-6
        assert np.linalg.norm(pos - whole.position) < 1e-6

    def test_covariance_properties(self):
        def gyro(t):
            return np.array([0.1 * np.sin(t), 0.05, 0.2 * np.cos(t)])

        def accel(t):
            return np.array([0.3, 0.1 * np.sin(2 * t), -0.2])

        traces = []
        for duration in (0.2, 0.5, 1.0, 2.0):
            stream = make_stream(duration, 100.0, gyro, accel)
            delta = preintegrate(stream, ZERO3, ZERO3, NOISE)
            cov = delta.covariance
            assert np.allclose(cov, cov.T, atol=1e-15)
            assert np.min(np.linalg.eigvalsh(cov)) > 0
            traces.append(np.trace(cov))
        assert all(a < b for a, b in zip(traces, traces[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            preintegrate([], ZERO3, ZERO3, NOISE)
        bad = [ImuSample(0.0, ZERO3, ZERO3), ImuSample(0.0, ZERO3, ZERO3)]
        with pytest.raises(ValueError):
            preintegrate(bad, ZERO3, ZERO3, NOISE)


class TestResidual:
    def _delta(self):
        def gyro(t):
            return np.array([0.2 * np.sin(t), -0.1, 0.3 * np.cos(2 * t)])

        def accel(t):
            return np.array([0.5, 0.2 * np.sin(t), -0.1])

        stream = make_stream(0.8, 100.0, gyro, accel)
        return preintegrate(stream, ZERO3, ZERO3, NOISE)

    def test_zero_on_consistent_states(self):
        rng = np.random.default_rng(9)
        delta = self._delta()
        state_i = RobotState(Pose(random_rotation(rng), rng.normal(size=3)), rng.normal(size=3))
        state_j = predict_state(state_i, delta, GRAVITY)
        r = imu_residual(delta, state_i, state_j, GRAVITY)
        assert np.linalg.norm(r) < 1e-9

    def test_position_perturbation_maps_into_frame_i(self):
        rng = np.random.default_rng(10)
        delta = self._delta()
        state_i = RobotState(Pose(random_rotation(rng), rng.normal(size=3)), rng.normal(size=3))
        state_j = predict_state(state_i, delta, GRAVITY)
        shifted = RobotState(
            Pose(state_j.pose.rotation, state_j.pose.translation + np.array([0.1, 0.0, 0.0])),
            state_j.velocity,
        )
        r = imu_residual(delta, state_i, shifted, GRAVITY)
        expected = state_i.pose.rotation.matrix.T @ np.array([0.1, 0.0, 0.0])
        assert np.allclose(r[6:9], expected, atol=1e-12)
        assert np.linalg.norm(r[0:6]) < 1e-9
