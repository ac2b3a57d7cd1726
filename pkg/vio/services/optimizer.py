"""
Batch on-manifold Gauss-Newton smoother over keyframe states.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky
except ImportError:  # SuiteSparse missing: fall back to a symmetric-ordering sparse LU
    CholmodNotPositiveDefiniteError, cholesky = None, None

from vio.exceptions import DegenerateFactorError, InvalidInputError, SingularSystemError
from vio.services.factors import (
    LandmarkTrack, bias_factor, imu_factor, prior_factor, structureless_factor,
)
from vio.services.preintegration import GRAVITY, predict, preintegrate
from vio.services.state import STATE_DIM

logger = logging.getLogger(__name__)

DAMPING_START = 1e-4
DAMPING_FACTOR = 10.0
DAMPING_MAX = 1e4
# Relative eigenvalue threshold for counting null directions.
NULL_EIG_TOL = 1e-9
# Cholesky pivots below this (relative to the largest diagonal entry) mean rank loss.
PIVOT_TOL = 1e-13


@dataclass
class FactorGraph:
    """Prior, IMU, bias random-walk and structureless vision factors over N keyframes."""
    num_states: int
    imu_factors: list = field(default_factory=list)
    tracks: list = field(default_factory=list)
    camera: object = None
    noise: object = None
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    prior_mean: object = None
    prior_cov: np.ndarray = None
    use_bias_factors: bool = True
    refine_iters: int = 3

    def validate(self):
        for i, j, _ in self.imu_factors:
            if j != i + 1 or not 0 <= i < self.num_states - 1:
                raise InvalidInputError(f'IMU factor ({i}, {j}) does not chain consecutive keyframes')
        if self.tracks and self.camera is None:
            raise InvalidInputError('vision factors need a camera model')
        for track in self.tracks:
            for key in track.keyframe_ids:
                if not 0 <= key < self.num_states:
                    raise InvalidInputError(
                        f'track {track.landmark_id} references unknown keyframe {key}')
        if self.prior_mean is not None and self.prior_cov is None:
            raise InvalidInputError('prior mean given without a covariance')
        return self

    def factor_builders(self, states):
        """Callables producing one LinearizedFactor each at the given states."""
        builders = []
        if self.prior_mean is not None:
            builders.append(lambda: prior_factor(0, states[0], self.prior_mean, self.prior_cov))
        for i, j, pre in self.imu_factors:
            builders.append(lambda i=i, j=j, pre=pre:
                            imu_factor(i, j, states[i], states[j], pre, self.gravity))
            if self.use_bias_factors:
                builders.append(lambda i=i, j=j, pre=pre:
                                bias_factor(i, j, states[i], states[j], self.noise, pre.dt_total))
        if self.tracks:
            by_id = dict(enumerate(states))
            for track in self.tracks:
                builders.append(lambda track=track: structureless_factor(
                    track, by_id, self.camera, refine_iters=self.refine_iters))
        return builders


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    costs: list = field(default_factory=list)
    converged: bool = False
    last_marginal: np.ndarray = None
    skipped_factors: int = 0
    message: str = ''


def linearize(graph, states, jobs=1):
    """Linearize every factor; degenerate vision factors are skipped and counted."""
    builders = graph.factor_builders(states)

    def build(builder):
        try:
            return builder()
        except DegenerateFactorError as exc:
            logger.debug('skipping factor: %s', exc)
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(build, builders))
    else:
        results = [build(b) for b in builders]
    factors = [f for f in results if f is not None]
    return factors, len(results) - len(factors)


def total_cost(graph, states, jobs=1):
    """Sum of whitened squared residuals of all factors at the given states."""
    factors, _ = linearize(graph, states, jobs)
    return float(sum(f.cost for f in factors))


def assemble(factors, num_states):
    """Sparse normal equations H = sum J^T J (CSC), g = sum J^T r over the 15N state vector."""
    n = STATE_DIM * num_states
    rows, cols, vals = [], [], []
    g = np.zeros(n)
    for f in factors:
        index = np.concatenate([np.arange(STATE_DIM * k, STATE_DIM * (k + 1)) for k in f.keys])
        JtJ = f.jacobian.T @ f.jacobian
        rr, cc = np.meshgrid(index, index, indexing='ij')
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(JtJ.ravel())
        np.add.at(g, index, f.jacobian.T @ f.residual)
    if not rows:
        return sparse.csc_matrix((n, n)), g
    H = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n),
    ).tocsc()
    return H, g


def _null_directions(H):
    dense = H.toarray()
    eig = np.linalg.eigvalsh(0.5 * (dense + dense.T))
    top = max(eig.max(), 0.0)
    return int(np.sum(eig <= NULL_EIG_TOL * top)) if top > 0 else H.shape[0]


def _lu_solver(H, scale):
    try:
        lu = splu(H, permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0)
    except RuntimeError:
        raise SingularSystemError(max(_null_directions(H), 1))
    if np.abs(lu.U.diagonal()).min() < PIVOT_TOL * scale:
        raise SingularSystemError(max(_null_directions(H), 1))
    return lu.solve


def factorize(H):
    """
    Sparse Cholesky factorization of H, returned as a solve callable accepting
    a vector or a dense block of right-hand sides. Rank loss is reported with
    the number of null directions.
    """
    H = sparse.csc_matrix(H)
    diag = H.diagonal()
    scale = diag.max() if diag.size else 0.0
    if scale <= 0:
        raise SingularSystemError(H.shape[0])
    if cholesky is None:
        return _lu_solver(H, scale)
    try:
        factor = cholesky(H)
    except CholmodNotPositiveDefiniteError:
        raise SingularSystemError(max(_null_directions(H), 1))
    _, D = factor.L_D()
    if D.diagonal().min() < PIVOT_TOL * scale:
        raise SingularSystemError(max(_null_directions(H), 1))
    return factor.solve_A


def retract_all(states, delta):
    return [s.retract(delta[STATE_DIM * k:STATE_DIM * (k + 1)]) for k, s in enumerate(states)]


def gauss_newton(graph, init, max_iters=50, rel_tol=1e-8, abs_tol=1e-18, jobs=1,
                 compute_marginal=True):
    """Lift-solve-retract iterations with a damped fallback; returns (states, SolveReport)."""
    graph.validate()
    if len(init) != graph.num_states:
        raise InvalidInputError(f'expected {graph.num_states} initial states, got {len(init)}')
    states = list(init)
    factors, skipped = linearize(graph, states, jobs)
    cost = sum(f.cost for f in factors)
    report = SolveReport(initial_cost=cost, costs=[cost], skipped_factors=skipped)

    for _ in range(max_iters):
        if cost < abs_tol:
            report.converged = True
            report.message = 'cost below absolute tolerance'
            break
        H, g = assemble(factors, graph.num_states)
        delta = factorize(H)(-g)

        candidate = retract_all(states, delta)
        new_factors, new_skipped = linearize(graph, candidate, jobs)
        new_cost = sum(f.cost for f in new_factors)
        damping = DAMPING_START
        while new_cost > cost and damping <= DAMPING_MAX:
            logger.debug('cost increased to %.6g, damping %.0e', new_cost, damping)
            delta = factorize(H + damping * sparse.diags(H.diagonal()))(-g)
            candidate = retract_all(states, delta)
            new_factors, new_skipped = linearize(graph, candidate, jobs)
            new_cost = sum(f.cost for f in new_factors)
            damping *= DAMPING_FACTOR

        if new_cost > cost:
            predicted = -(g @ delta + 0.5 * delta @ (H @ delta))
            report.converged = predicted <= rel_tol * cost
            report.message = 'no decreasing step found'
            break

        decrease = (cost - new_cost) / cost if cost > 0 else 0.0
        states, factors, skipped, cost = candidate, new_factors, new_skipped, new_cost
        report.iterations += 1
        report.costs.append(cost)
        logger.debug('iteration %d: cost %.9g, step %.3g', report.iterations, cost,
                     np.linalg.norm(delta))
        if decrease < rel_tol:
            report.converged = True
            report.message = 'relative decrease below tolerance'
            break
    else:
        report.message = 'maximum iterations reached'

    report.final_cost = cost
    report.skipped_factors = skipped
    if compute_marginal:
        report.last_marginal = marginal_covariance(graph, states, graph.num_states - 1, jobs=jobs)
    logger.info('Gauss-Newton: %d iterations, cost %.6g -> %.6g (%s)', report.iterations,
                report.initial_cost, report.final_cost, report.message)
    return states, report


def _information(graph, states, jobs=1):
    factors, _ = linearize(graph, states, jobs)
    H, _ = assemble(factors, graph.num_states)
    return H


def marginal_covariance(graph, states, keyframe, jobs=1):
    """15x15 covariance block of one keyframe from the inverse normal matrix."""
    if not 0 <= keyframe < graph.num_states:
        raise InvalidInputError(f'keyframe {keyframe} out of range')
    H = _information(graph, states, jobs)
    solve = factorize(H)
    cols = np.zeros((H.shape[0], STATE_DIM))
    cols[STATE_DIM * keyframe:STATE_DIM * (keyframe + 1)] = np.eye(STATE_DIM)
    block = solve(cols)[STATE_DIM * keyframe:STATE_DIM * (keyframe + 1)]
    return 0.5 * (block + block.T)


def pose_marginals(graph, states, jobs=1):
    """Marginal covariance blocks of every keyframe, shape (N, 15, 15)."""
    H = _information(graph, states, jobs)
    solve = factorize(H)
    blocks = np.empty((graph.num_states, STATE_DIM, STATE_DIM))
    for k in range(graph.num_states):
        span = slice(STATE_DIM * k, STATE_DIM * (k + 1))
        cols = np.zeros((H.shape[0], STATE_DIM))
        cols[span] = np.eye(STATE_DIM)
        blocks[k] = solve(cols)[span]
    return 0.5 * (blocks + np.transpose(blocks, (0, 2, 1)))


def tracks_until(tracks, num_states):
    """Copies of the tracks restricted to keyframes below num_states."""
    out = []
    for track in tracks:
        obs = [o for o in track.observations if o.keyframe_id < num_states]
        if len(obs) >= 2:
            out.append(LandmarkTrack(track.landmark_id, obs))
    return out


def incremental_solve(prior_mean, prior_cov, streams, tracks, camera, noise,
                      gravity=GRAVITY, init_chunk=10, max_iters=50, rel_tol=1e-8,
                      abs_tol=1e-18, refine_iters=3, jobs=1):
    """
    Grow the graph keyframe by keyframe from the prior, predicting every new
    state from the current estimate, then run the full solve.

    streams[k] is the list of (ImuSample, dt) between keyframes k and k+1.
    """
    if init_chunk < 1:
        raise InvalidInputError('init_chunk must be at least 1')
    gravity = np.asarray(gravity, dtype=float)
    num_states = len(streams) + 1
    states = [prior_mean]
    pres = []

    def build(n):
        return FactorGraph(
            num_states=n, imu_factors=[(k, k + 1, pres[k]) for k in range(n - 1)],
            tracks=tracks_until(tracks, n), camera=camera, noise=noise, gravity=gravity,
            prior_mean=prior_mean, prior_cov=prior_cov, refine_iters=refine_iters,
        )

    while len(states) < num_states:
        stop = min(len(states) + init_chunk, num_states)
        while len(states) < stop:
            k = len(states) - 1
            pre = preintegrate(streams[k], states[k].bias, noise)
            pres.append(pre)
            states.append(predict(states[k], pre, gravity))
        states, report = gauss_newton(build(len(states)), states, max_iters=max_iters,
                                      rel_tol=rel_tol, abs_tol=abs_tol, jobs=jobs,
                                      compute_marginal=False)
        logger.debug('initialized %d/%d keyframes, cost %.6g', len(states), num_states,
                     report.final_cost)

    # Relinearize every interval at its estimated bias before the final solve.
    pres[:] = [preintegrate(streams[k], states[k].bias, noise) for k in range(num_states - 1)]
    graph = build(num_states)
    states, report = gauss_newton(graph, states, max_iters=max_iters, rel_tol=rel_tol,
                                  abs_tol=abs_tol, jobs=jobs)
    return graph, states, report
