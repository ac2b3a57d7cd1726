import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from vio.exceptions import GimbalLockError, InvalidInputError, SingularCovarianceError
from vio.services.evaluation import (
    NeesSeries, average_nees, bias_correction_study, bias_tracking, covariance_fidelity_study,
    euler_covariance_step, euler_integrate, euler_kl_study, euler_to_rotation, fairness_check,
    integration_error_study, kl_gaussian, nees, nees_bounds, nees_series, pose_error,
    pose_errors, rate_matrix, rate_matrix_inv, relative_drift, rmse, rotation_to_euler,
)
from vio.services.liealg import exp_so3
from vio.services.preintegration import ImuNoiseModel
from vio.services.state import STATE_DIM, ImuBias, NavState

NOISE = ImuNoiseModel(0.0007, 0.019, 0.0004, 0.012)


def line_trajectory(count, scale=1.0):
    return [NavState(np.eye(3), [scale * k, 0.0, 0.0], [scale, 0.0, 0.0]) for k in range(count)]


class PoseErrorTests(SimpleTestCase):
    def test_identical_states(self):
        state = NavState(exp_so3([0.1, 0.2, 0.3]), [1.0, 2.0, 3.0], np.zeros(3))
        assert_allclose(pose_error(state, state), np.zeros(6), atol=1e-15)

    def test_error_is_local_coordinate_of_truth(self):
        est = NavState(exp_so3([0.1, 0.2, 0.3]), [1.0, 2.0, 3.0], np.zeros(3))
        delta = np.r_[0.01, -0.02, 0.03, 0.1, 0.2, -0.1, np.zeros(9)]
        assert_allclose(pose_error(est, est.retract(delta)), delta[:6], atol=1e-12)

    def test_length_mismatch(self):
        with self.assertRaises(InvalidInputError):
            pose_errors(line_trajectory(3), line_trajectory(2))


class NeesTests(SimpleTestCase):
    def test_identity_covariance(self):
        err = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 2.0])
        self.assertAlmostEqual(nees(err, np.eye(6)), 9.0)

    def test_invariant_under_linear_transform(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(6, 6))
        cov = A @ A.T + np.eye(6)
        err = rng.normal(size=6)
        T = rng.normal(size=(6, 6)) + 3 * np.eye(6)
        self.assertAlmostEqual(nees(T @ err, T @ cov @ T.T), nees(err, cov), delta=1e-10 * nees(err, cov) + 1e-10)

    def test_gaussian_samples_average_dof(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(6, 6))
        cov = A @ A.T + 0.1 * np.eye(6)
        samples = rng.multivariate_normal(np.zeros(6), cov, 10000)
        mean = np.mean([nees(e, cov) for e in samples])
        self.assertAlmostEqual(mean, 6.0, delta=0.2)

    def test_singular_covariance(self):
        with self.assertRaises(SingularCovarianceError):
            nees(np.ones(6), np.zeros((6, 6)))

    def test_shape_mismatch(self):
        with self.assertRaises(InvalidInputError):
            nees(np.ones(6), np.eye(3))

    def test_series_blocks(self):
        errors = pose_errors(line_trajectory(3), line_trajectory(3, 1.1))
        marginals = np.array([np.eye(STATE_DIM) * 0.01] * 3)
        pose = nees_series(errors, marginals, 'pose')
        rotation = nees_series(errors, marginals, 'rotation')
        position = nees_series(errors, marginals, 'position')
        assert_allclose(pose, rotation + position)
        assert_allclose(position, [0.0, 1.0, 4.0])


class AverageNeesTests(SimpleTestCase):
    def test_bounds_at_fifty_runs(self):
        lower, upper = nees_bounds(50, 6, 0.025)
        self.assertAlmostEqual(lower, 5.0, delta=0.1)
        self.assertAlmostEqual(upper, 7.0, delta=0.1)

    def test_overconfident_runs_flagged(self):
        runs = [NeesSeries(k, np.full(20, 12.0)) for k in range(50)]
        summary = average_nees(runs, dof=6)
        self.assertTrue(summary.overconfident.all())
        self.assertFalse(summary.accepted)

    def test_consistent_runs_accepted(self):
        rng = np.random.default_rng(2)
        runs = [NeesSeries(k, rng.chisquare(6, 200)) for k in range(50)]
        summary = average_nees(runs, dof=6)
        self.assertLessEqual(summary.overconfident_fraction, 0.05)
        self.assertTrue(summary.accepted)

    def test_order_independent(self):
        rng = np.random.default_rng(3)
        runs = [NeesSeries(k, rng.chisquare(6, 10)) for k in range(5)]
        assert_allclose(average_nees(runs).mean, average_nees(runs[::-1]).mean, rtol=0, atol=0)

    def test_mismatched_lengths(self):
        with self.assertRaises(InvalidInputError):
            average_nees([NeesSeries(0, np.ones(3)), NeesSeries(1, np.ones(4))])

    def test_empty(self):
        with self.assertRaises(InvalidInputError):
            average_nees([])


class RmseAndDriftTests(SimpleTestCase):
    def test_rmse_of_single_run(self):
        errors = np.zeros((1, 2, 6))
        errors[0, 1] = [0.0, 0.0, np.radians(2.0), 3.0, 4.0, 0.0]
        rot, pos = rmse(errors)
        assert_allclose(rot, [0.0, 2.0])
        assert_allclose(pos, [0.0, 5.0])

    def test_identical_trajectories_have_no_drift(self):
        gt = line_trajectory(50)
        result = relative_drift(gt, gt, [10.0, 20.0])
        for bucket in result.buckets:
            assert_allclose(bucket.translation, 0.0, atol=1e-12)
            assert_allclose(bucket.rotation_deg, 0.0, atol=1e-12)

    def test_drift_linear_in_segment_length(self):
        gt = line_trajectory(100)
        est = line_trajectory(100, 1.1)
        result = relative_drift(est, gt, [10.0, 40.0, 90.0, 160.0])
        self.assertEqual(result.skipped, [160.0])
        means = [b.summary()['translation_mean'] for b in result.buckets]
        assert_allclose(means, [1.0, 4.0, 9.0], rtol=1e-9)

    def test_bias_tracking(self):
        gt = line_trajectory(3)
        est = [s.with_bias(ImuBias([0.01, 0.0, 0.0], np.zeros(3))) for s in gt]
        marginals = np.array([np.eye(STATE_DIM) * 1e-4] * 3)
        err, std, within = bias_tracking(est, gt, marginals)
        assert_allclose(err[:, 0], 0.01)
        assert_allclose(std, 0.01)
        self.assertTrue(within)
        _, _, within = bias_tracking(est, gt, marginals * 0.01)
        self.assertFalse(within)


class KlTests(SimpleTestCase):
    def test_equal_covariances(self):
        self.assertAlmostEqual(kl_gaussian(np.eye(3), np.eye(3)), 0.0)

    def test_closed_form(self):
        self.assertAlmostEqual(kl_gaussian(2 * np.eye(3), np.eye(3)), 0.5 * (6 - 3 - 3 * np.log(2)), places=10)
        self.assertAlmostEqual(kl_gaussian(2 * np.eye(3), np.eye(3)), 0.4603, places=4)

    def test_asymmetric_and_non_negative(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            A, B = rng.normal(size=(2, 4, 4))
            P, Q = A @ A.T + 0.1 * np.eye(4), B @ B.T + 0.1 * np.eye(4)
            self.assertGreater(kl_gaussian(P, Q), 0.0)
            self.assertNotAlmostEqual(kl_gaussian(P, Q), kl_gaussian(Q, P))

    def test_singular_reference(self):
        with self.assertRaises(SingularCovarianceError):
            kl_gaussian(np.eye(3), np.zeros((3, 3)))


class EulerTests(SimpleTestCase):
    def test_yaw_only_step(self):
        assert_allclose(euler_integrate(np.zeros(3), [0.0, 0.0, 0.5], 0.01), [0.0, 0.0, 0.005])

    def test_gimbal_lock(self):
        with self.assertRaises(GimbalLockError):
            euler_integrate([0.0, np.pi / 2, 0.0], [0.1, 0.0, 0.0], 0.01)

    def test_angles_round_trip(self):
        theta = np.array([0.3, -0.4, 1.2])
        assert_allclose(rotation_to_euler(euler_to_rotation(theta)), theta, atol=1e-12)

    def test_rate_matrix_inverse(self):
        theta = np.array([0.3, 0.7, -1.0])
        assert_allclose(rate_matrix(theta) @ rate_matrix_inv(theta), np.eye(3), atol=1e-12)

    def test_zero_noise_covariance_step(self):
        cov = np.diag([1e-4, 2e-4, 3e-4])
        _, cov_next = euler_covariance_step(np.zeros(3), cov, [0.0, 0.0, 0.0], 0.01, 0.0)
        assert_allclose(cov_next, cov, atol=1e-15)

    def test_integration_error_study(self):
        rows = integration_error_study([1.0, 3.0], [0.001, 0.01, 0.05])
        for rate in (1.0, 3.0):
            mine = [r for r in rows if r['rate'] == rate]
            self.assertTrue(all(r['so3_error'] < 1e-9 for r in mine))
            euler = [r['euler_error'] for r in mine]
            self.assertTrue(euler[0] < euler[1] < euler[2])

    def test_kl_degrades_near_singularity(self):
        rows = euler_kl_study([0.0, 80.0, 89.0], samples=10000, seed=0)
        level, high, steep = rows
        for row in rows:
            self.assertLess(row['kl_so3'], 0.01, row)
        self.assertLess(level['kl_euler'], 0.01)
        self.assertGreater(steep['kl_euler'], high['kl_euler'])
        self.assertGreaterEqual(steep['kl_euler'], 10.0 * steep['kl_so3'])

    def test_trajectory_ends_at_requested_pitch(self):
        theta = np.array([0.0, np.radians(89.0) - 0.5, 0.0])
        for _ in range(50):
            theta = euler_integrate(theta, [0.0, 1.0, 0.0], 0.01)
        assert_allclose(theta, [0.0, np.radians(89.0), 0.0], atol=1e-12)

    def test_fairness(self):
        so3, euler = fairness_check(np.diag([0.05, 0.05, 0.05]) ** 2, num_transforms=50, seed=1)
        self.assertLess(np.std(so3), 1e-9)
        self.assertGreater(np.std(euler), 1e-6)


class PreintegrationStudyTests(SimpleTestCase):
    def test_propagated_covariance_matches_sampling(self):
        rng = np.random.default_rng(5)
        # one second at 100 Hz
        gyro = rng.normal(0.0, 1.0, (100, 3))
        accel = rng.normal(0.0, 1.0, (100, 3)) + [0.0, 0.0, 9.81]
        result = covariance_fidelity_study(NOISE, gyro, accel, 0.01, samples=10000, seed=6)
        self.assertLess(result['max_diag_relative_error'], 0.08)
        self.assertLess(result['symmetric_kl'], 0.05)

    def test_bias_correction_is_second_order(self):
        rows = bias_correction_study(NOISE, num_streams=200, magnitudes=(0.04, 0.2), seed=7)
        self.assertEqual([r['magnitude'] for r in rows], [0.04, 0.2])
        for row in rows:
            for name in ('rotation', 'velocity', 'position'):
                self.assertGreaterEqual(row[f'{name}_decay'], 3.5, (row['magnitude'], name))
            self.assertLess(row['rotation_decay'], 5.0)
        self.assertLess(rows[-1]['rotation_max'], 5e-3)
        self.assertLess(rows[0]['position_mean'], rows[1]['position_mean'])
