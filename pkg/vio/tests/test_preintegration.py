import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from vio.exceptions import InvalidInputError
from vio.services.liealg import exp_so3, log_so3
from vio.services.preintegration import (
    GRAVITY, ImuNoiseModel, ImuSample, PreintegratedImu, bias_corrected_delta, covariance_batch_oracle,
    integrate_batch, predict, preintegrate, sample_intervals,
)
from vio.services.simulator import SimConfig, TrajectoryParams, simulate
from vio.services.state import ImuBias, NavState

NOISE = ImuNoiseModel(0.0007, 0.019, 0.0004, 0.012)


def random_stream(rng, count=50, dt=0.005):
    return [(ImuSample(k * dt, rng.normal(0, 1.0, 3), rng.normal(0, 3.0, 3) + [0, 0, 9.81]), dt)
            for k in range(count)]


class NoiseModelTests(SimpleTestCase):
    def test_non_positive_density_rejected(self):
        with self.assertRaises(InvalidInputError):
            ImuNoiseModel(0.0, 0.019, 0.0004, 0.012)

    def test_discrete_covariance_scales_with_dt(self):
        cov = NOISE.measurement_covariance(0.01)
        assert_allclose(np.diag(cov)[:3], 0.0007 ** 2 / 0.01)
        assert_allclose(np.diag(NOISE.bias_walk_covariance(2.0))[3:], 0.012 ** 2 * 2.0)


class IntegrationTests(SimpleTestCase):
    def test_empty_interval(self):
        pre = preintegrate([], ImuBias(), NOISE)
        assert_allclose(pre.delta_R, np.eye(3))
        assert_allclose(pre.cov, np.zeros((9, 9)))
        self.assertEqual(pre.dt_total, 0.0)

    def test_constant_rate(self):
        w = np.array([0.1, -0.4, 0.7])
        stream = [(ImuSample(0.01 * k, w, np.zeros(3)), 0.01) for k in range(100)]
        pre = preintegrate(stream, ImuBias(), NOISE)
        assert_allclose(pre.delta_R, exp_so3(w * 1.0), atol=1e-10)
        self.assertAlmostEqual(pre.dt_total, 1.0)
        self.assertEqual(pre.num_samples, 100)

    def test_constant_acceleration(self):
        a = np.array([0.5, -1.0, 2.0])
        stream = [(ImuSample(0.01 * k, np.zeros(3), a), 0.01) for k in range(100)]
        pre = preintegrate(stream, ImuBias(), NOISE)
        assert_allclose(pre.delta_v, a * 1.0, atol=1e-12)
        assert_allclose(pre.delta_p, 0.5 * a * 1.0, atol=1e-12)

    def test_bias_is_subtracted(self):
        bias = ImuBias([0.1, 0.0, 0.0], [0.0, 0.0, 1.0])
        stream = [(ImuSample(0.01 * k, bias.gyro, bias.accel), 0.01) for k in range(10)]
        pre = preintegrate(stream, bias, NOISE)
        assert_allclose(pre.delta_R, np.eye(3), atol=1e-15)
        assert_allclose(pre.delta_v, np.zeros(3), atol=1e-15)

    def test_non_positive_dt_rejected(self):
        with self.assertRaises(InvalidInputError):
            PreintegratedImu().integrate_measurement(np.zeros(3), np.zeros(3), 0.0, NOISE)

    def test_sample_intervals(self):
        samples = [ImuSample(t, np.zeros(3), np.zeros(3)) for t in (0.0, 0.1, 0.3)]
        pairs = sample_intervals(samples, end_time=0.4)
        assert_allclose([dt for _, dt in pairs], [0.1, 0.2, 0.1])
        self.assertEqual(len(sample_intervals(samples)), 2)

    def test_sample_intervals_rejects_unordered_timestamps(self):
        samples = [ImuSample(t, np.zeros(3), np.zeros(3)) for t in (0.0, 0.2, 0.1)]
        with self.assertRaises(InvalidInputError):
            sample_intervals(samples)

    def test_batch_matches_recursive(self):
        rng = np.random.default_rng(1)
        stream = random_stream(rng)
        bias = ImuBias([0.01, 0.02, -0.01], [0.1, -0.1, 0.05])
        pre = preintegrate(stream, bias, NOISE)
        gyro = np.array([s.gyro for s, _ in stream])
        accel = np.array([s.accel for s, _ in stream])
        dR, dv, dp = integrate_batch(gyro, accel, [dt for _, dt in stream], bias)
        assert_allclose(dR[0], pre.delta_R, atol=1e-12)
        assert_allclose(dv[0], pre.delta_v, atol=1e-12)
        assert_allclose(dp[0], pre.delta_p, atol=1e-12)


class CovarianceTests(SimpleTestCase):
    def test_recursive_matches_batch_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            stream = random_stream(rng, count=40)
            bias = ImuBias(rng.normal(0, 0.01, 3), rng.normal(0, 0.1, 3))
            pre = preintegrate(stream, bias, NOISE)
            oracle = covariance_batch_oracle(stream, bias, NOISE)
            assert_allclose(pre.cov, oracle, rtol=1e-9, atol=1e-15)

    def test_covariance_is_symmetric_positive_definite(self):
        pre = preintegrate(random_stream(np.random.default_rng(2)), ImuBias(), NOISE)
        assert_allclose(pre.cov, pre.cov.T)
        self.assertGreater(np.linalg.eigvalsh(pre.cov).min(), 0.0)


class BiasCorrectionTests(SimpleTestCase):
    def test_first_order_update_matches_reintegration(self):
        rng = np.random.default_rng(11)
        stream = random_stream(rng, count=100)
        bias = ImuBias()
        pre = preintegrate(stream, bias, NOISE)
        for scale in (1e-3, 1e-4):
            new_bias = ImuBias(np.full(3, scale), np.full(3, 10 * scale))
            dR, dv, dp = bias_corrected_delta(pre, new_bias)
            exact = preintegrate(stream, new_bias, NOISE)
            self.assertLess(np.linalg.norm(log_so3(dR.T @ exact.delta_R)), 50 * scale ** 2)
            self.assertLess(np.linalg.norm(dv - exact.delta_v), 500 * scale ** 2)
            self.assertLess(np.linalg.norm(dp - exact.delta_p), 500 * scale ** 2)

    def test_zero_bias_change_is_identity(self):
        pre = preintegrate(random_stream(np.random.default_rng(4)), ImuBias(), NOISE)
        dR, dv, dp = bias_corrected_delta(pre, ImuBias())
        assert_allclose(dR, pre.delta_R)
        assert_allclose(dv, pre.delta_v)
        assert_allclose(dp, pre.delta_p)


class PredictTests(SimpleTestCase):
    def test_noise_free_prediction_follows_ground_truth(self):
        params = TrajectoryParams(duration=4.0, path_length=4.0)
        config = SimConfig(landmark_count=40, noise_free=True)
        dataset = simulate(params, config)
        for k, stream in enumerate(dataset.streams()):
            pre = preintegrate(stream, ImuBias(), NOISE)
            pred = predict(dataset.states[k], pre)
            truth = dataset.states[k + 1]
            self.assertLess(np.linalg.norm(log_so3(pred.rotation.T @ truth.rotation)), 1e-9)
            assert_allclose(pred.velocity, truth.velocity, atol=1e-9)
            assert_allclose(pred.position, truth.position, atol=1e-9)

    def test_matches_per_sample_integration(self):
        rng = np.random.default_rng(21)
        stream = random_stream(rng, count=80)
        bias = ImuBias(rng.normal(0, 0.01, 3), rng.normal(0, 0.05, 3))
        state = NavState(exp_so3(rng.normal(0, 1.0, 3)), rng.normal(0, 2.0, 3),
                         rng.normal(0, 1.0, 3), bias)
        R, p, v = state.rotation, state.position, state.velocity
        for sample, dt in stream:
            a = R @ (sample.accel - bias.accel) + GRAVITY
            p = p + v * dt + 0.5 * a * dt * dt
            v = v + a * dt
            R = R @ exp_so3((sample.gyro - bias.gyro) * dt)
        pred = predict(state, preintegrate(stream, bias, NOISE))
        self.assertLess(np.linalg.norm(log_so3(pred.rotation.T @ R)), 1e-9)
        assert_allclose(pred.velocity, v, atol=1e-9)
        assert_allclose(pred.position, p, atol=1e-9)

    def test_free_fall(self):
        stream = [(ImuSample(k * 0.01, np.zeros(3), np.zeros(3)), 0.01) for k in range(50)]
        state = NavState(np.eye(3), np.zeros(3), np.array([1.0, 0.0, 0.0]))
        pred = predict(state, preintegrate(stream, ImuBias(), NOISE))
        assert_allclose(pred.velocity, state.velocity + GRAVITY * 0.5, atol=1e-12)
        assert_allclose(pred.position, state.velocity * 0.5 + 0.5 * GRAVITY * 0.25, atol=1e-12)
