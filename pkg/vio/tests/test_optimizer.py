import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse
from scipy.sparse.linalg import norm as sparse_norm

from vio.exceptions import InvalidInputError, SingularSystemError
from vio.services.factors import LandmarkTrack, Observation, prior_factor
from vio.services.liealg import exp_so3, log_so3
from vio.services.optimizer import (
    FactorGraph, _lu_solver, assemble, factorize, gauss_newton, incremental_solve, linearize,
    marginal_covariance, pose_marginals, retract_all, total_cost, tracks_until,
)
from vio.services.preintegration import preintegrate
from vio.services.simulator import SimConfig, TrajectoryParams, simulate
from vio.services.state import STATE_DIM, ImuBias, NavState

PRIOR_COV = np.diag(np.r_[np.full(3, 0.01), np.full(3, 0.001), np.full(3, 0.01),
                          np.full(6, 0.02)] ** 2)


def noise_free_dataset():
    params = TrajectoryParams(duration=4.0, path_length=4.0)
    config = SimConfig(landmark_count=200, noise_free=True)
    return simulate(params, config)


def graph_for(dataset, prior=True, tracks=True):
    pres = [preintegrate(stream, ImuBias(), dataset.config.noise) for stream in dataset.streams()]
    return FactorGraph(
        num_states=dataset.num_keyframes,
        imu_factors=[(k, k + 1, pre) for k, pre in enumerate(pres)],
        tracks=dataset.usable_tracks if tracks else [],
        camera=dataset.camera,
        noise=dataset.config.noise,
        prior_mean=dataset.states[0] if prior else None,
        prior_cov=PRIOR_COV if prior else None,
    )


class FactorGraphTests(SimpleTestCase):
    def test_non_consecutive_imu_factor_rejected(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset, tracks=False)
        graph.imu_factors[0] = (0, 2, graph.imu_factors[0][2])
        with self.assertRaises(InvalidInputError):
            graph.validate()

    def test_track_outside_graph_rejected(self):
        graph = FactorGraph(num_states=2, camera=noise_free_dataset().camera,
                            tracks=[LandmarkTrack(0, [Observation(0, np.zeros(2)),
                                                      Observation(5, np.zeros(2))])])
        with self.assertRaises(InvalidInputError):
            graph.validate()

    def test_tracks_until(self):
        track = LandmarkTrack(0, [Observation(k, np.zeros(2)) for k in (0, 3, 6)])
        self.assertEqual(tracks_until([track], 4)[0].keyframe_ids, [0, 3])
        self.assertEqual(tracks_until([track], 3), [])


class AssemblyTests(SimpleTestCase):
    def test_assembled_system_matches_dense_stack(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset)
        factors, _ = linearize(graph, dataset.states)
        H, g = assemble(factors, graph.num_states)
        n = STATE_DIM * graph.num_states
        J = np.zeros((sum(len(f.residual) for f in factors), n))
        r = np.zeros(J.shape[0])
        row = 0
        for f in factors:
            m = len(f.residual)
            for pos, key in enumerate(f.keys):
                J[row:row + m, STATE_DIM * key:STATE_DIM * (key + 1)] = f.block(pos)
            r[row:row + m] = f.residual
            row += m
        self.assertTrue(sparse.isspmatrix_csc(H))
        assert_allclose(H.toarray(), J.T @ J, rtol=1e-10, atol=1e-6)
        assert_allclose(g, J.T @ r, rtol=1e-10, atol=1e-8)

    def test_parallel_linearization_matches_serial(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset)
        self.assertAlmostEqual(total_cost(graph, dataset.states, jobs=1),
                               total_cost(graph, dataset.states, jobs=4))

    def test_odometry_chain_stays_block_banded(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset, tracks=False)
        factors, _ = linearize(graph, dataset.states)
        H, _ = assemble(factors, graph.num_states)
        n = STATE_DIM * graph.num_states
        self.assertLessEqual(H.nnz, 3 * STATE_DIM * n)
        self.assertEqual(H[:STATE_DIM, 2 * STATE_DIM:].nnz, 0)

    def assert_solves(self, H, solve, rhs):
        x = solve(rhs)
        scale = sparse_norm(H) * np.linalg.norm(x)
        self.assertLess(np.linalg.norm(H @ x - rhs), 1e-10 * scale)

    def test_sparse_factor_solves_vector_and_block(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset)
        factors, _ = linearize(graph, dataset.states)
        H, _ = assemble(factors, graph.num_states)
        rng = np.random.default_rng(2)
        solve = factorize(H)
        self.assert_solves(H, solve, rng.normal(size=H.shape[0]))
        self.assert_solves(H, solve, rng.normal(size=(H.shape[0], STATE_DIM)))

    def test_lu_fallback_solves(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset, tracks=False)
        factors, _ = linearize(graph, dataset.states)
        H, _ = assemble(factors, graph.num_states)
        rhs = np.random.default_rng(3).normal(size=H.shape[0])
        self.assert_solves(H, _lu_solver(H, H.diagonal().max()), rhs)

    def test_gauge_freedom_is_singular(self):
        dataset = noise_free_dataset()
        graph = graph_for(dataset, prior=False, tracks=False)
        factors, _ = linearize(graph, dataset.states)
        H, _ = assemble(factors, graph.num_states)
        with self.assertRaises(SingularSystemError) as ctx:
            factorize(H)
        self.assertGreaterEqual(ctx.exception.null_directions, 4)


class CostTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = noise_free_dataset()
        rng = np.random.default_rng(7)
        cls.perturbed = [s.retract(np.r_[rng.normal(0, 0.02, 9), rng.normal(0, 0.005, 6)])
                         for s in cls.dataset.states]

    def test_zero_at_ground_truth(self):
        self.assertLess(total_cost(graph_for(self.dataset), self.dataset.states), 1e-9)

    def test_invariant_to_yaw_and_translation_without_prior(self):
        graph = graph_for(self.dataset, prior=False)
        Rz = exp_so3(np.array([0.0, 0.0, 0.7]))
        shift = np.array([1.5, -0.4, 0.3])
        moved = [NavState(Rz @ s.rotation, Rz @ s.position + shift, Rz @ s.velocity, s.bias)
                 for s in self.perturbed]
        before = total_cost(graph, self.perturbed)
        self.assertGreater(before, 0.0)
        self.assertAlmostEqual(total_cost(graph, moved) / before, 1.0, delta=1e-6)

    def test_extra_observation_cannot_lower_cost(self):
        graph = graph_for(self.dataset, prior=False, tracks=False)
        base = total_cost(graph, self.perturbed)
        graph.tracks = self.dataset.usable_tracks[:1]
        self.assertGreaterEqual(total_cost(graph, self.perturbed), base)

    def test_zero_step_keeps_states(self):
        states = retract_all(self.perturbed, np.zeros(STATE_DIM * len(self.perturbed)))
        for a, b in zip(states, self.perturbed):
            assert_array_equal(a.position, b.position)
            assert_array_equal(a.velocity, b.velocity)
            assert_allclose(a.rotation, b.rotation, rtol=0, atol=1e-14)

    def test_gradient_matches_finite_differences(self):
        graph = graph_for(self.dataset, tracks=False)
        factors, _ = linearize(graph, self.perturbed)
        _, g = assemble(factors, graph.num_states)
        n = STATE_DIM * graph.num_states
        h = 1e-6
        indices = [0, 4, 8, 11, STATE_DIM + 2, 2 * STATE_DIM + 13, n - 1]
        numeric = []
        for index in indices:
            step = np.zeros(n)
            step[index] = h
            plus = total_cost(graph, retract_all(self.perturbed, step))
            minus = total_cost(graph, retract_all(self.perturbed, -step))
            numeric.append((plus - minus) / (2 * h))
        assert_allclose(numeric, 2 * g[indices], rtol=1e-5, atol=1e-5 * np.linalg.norm(2 * g))


class GaussNewtonTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = noise_free_dataset()

    def test_wrong_number_of_states(self):
        with self.assertRaises(InvalidInputError):
            gauss_newton(graph_for(self.dataset), self.dataset.states[:-1])

    def test_recovers_truth_from_perturbed_start(self):
        graph = graph_for(self.dataset)
        rng = np.random.default_rng(0)

        def within(radius):
            step = rng.normal(size=3)
            return step / np.linalg.norm(step) * rng.uniform(0.5, 1.0) * radius

        init = [s.retract(np.r_[within(0.1), within(0.2), np.zeros(9)]) if k else s
                for k, s in enumerate(self.dataset.states)]
        states, report = gauss_newton(graph, init, max_iters=10)
        self.assertTrue(report.converged, report.message)
        self.assertLessEqual(report.iterations, 10)
        self.assertLess(report.final_cost, report.initial_cost)
        self.assertTrue(all(b >= a for a, b in zip(report.costs[1:], report.costs)))
        for est, gt in zip(states, self.dataset.states):
            self.assertLess(np.linalg.norm(log_so3(est.rotation.T @ gt.rotation)), 1e-6)
            assert_allclose(est.position, gt.position, atol=1e-6)
            assert_allclose(est.velocity, gt.velocity, atol=1e-6)
        self.assertEqual(report.last_marginal.shape, (STATE_DIM, STATE_DIM))

    def test_marginals_are_positive_definite(self):
        graph = graph_for(self.dataset)
        marginals = pose_marginals(graph, self.dataset.states)
        self.assertEqual(marginals.shape, (self.dataset.num_keyframes, STATE_DIM, STATE_DIM))
        for block in marginals:
            self.assertGreater(np.linalg.eigvalsh(block).min(), 0.0)
        last = marginal_covariance(graph, self.dataset.states, self.dataset.num_keyframes - 1)
        assert_allclose(last, marginals[-1], rtol=1e-6, atol=1e-14)

    def test_uncertainty_grows_away_from_prior(self):
        graph = graph_for(self.dataset, tracks=False)
        marginals = pose_marginals(graph, self.dataset.states)
        self.assertGreater(np.trace(marginals[-1][3:6, 3:6]), np.trace(marginals[0][3:6, 3:6]))

    def test_prior_only_graph_converges_to_prior_mean(self):
        mean = self.dataset.states[0]
        graph = FactorGraph(num_states=1, prior_mean=mean, prior_cov=PRIOR_COV)
        init = [mean.retract(np.r_[0.05, -0.03, 0.02, 0.1, 0.2, -0.1, np.zeros(9)])]
        states, report = gauss_newton(graph, init)
        self.assertTrue(report.converged, report.message)
        self.assertEqual(report.iterations, 1)
        assert_allclose(mean.local(states[0]), np.zeros(STATE_DIM), atol=1e-9)

    def test_prior_only_marginal_is_prior_covariance(self):
        mean = NavState(np.eye(3), np.zeros(3), np.zeros(3))
        graph = FactorGraph(num_states=1, prior_mean=mean, prior_cov=PRIOR_COV)
        assert_allclose(marginal_covariance(graph, [mean], 0), PRIOR_COV, rtol=1e-9)
        self.assertEqual(prior_factor(0, mean, mean, PRIOR_COV).cost, 0.0)


class IncrementalSolveTests(SimpleTestCase):
    def test_noise_free_incremental_solve(self):
        dataset = noise_free_dataset()
        graph, states, report = incremental_solve(
            dataset.states[0], PRIOR_COV, dataset.streams(), dataset.usable_tracks,
            dataset.camera, dataset.config.noise, init_chunk=4,
        )
        self.assertTrue(report.converged, report.message)
        self.assertEqual(len(states), dataset.num_keyframes)
        self.assertEqual(graph.num_states, dataset.num_keyframes)
        for est, gt in zip(states, dataset.states):
            assert_allclose(est.position, gt.position, atol=5e-3)
            assert_allclose(est.velocity, gt.velocity, atol=1e-2)

    def test_invalid_chunk(self):
        dataset = noise_free_dataset()
        with self.assertRaises(InvalidInputError):
            incremental_solve(dataset.states[0], PRIOR_COV, dataset.streams(), [],
                              dataset.camera, dataset.config.noise, init_chunk=0)
