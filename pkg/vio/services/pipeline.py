"""
Simulate -> estimate -> evaluate orchestration used by the management commands.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vio.exceptions import VioError
from vio.services import evaluation
from vio.services.dataset import write_csv, write_dataset, write_states
from vio.services.optimizer import incremental_solve, pose_marginals
from vio.services.simulator import simulate
from vio.services.state import BA, BG, STATE_DIM

logger = logging.getLogger(__name__)


@dataclass
class EstimateResult:
    states: list
    report: object
    marginals: np.ndarray
    graph: object
    prior_mean: object
    prior_cov: np.ndarray


@dataclass
class RunOutcome:
    seed: int
    status: str
    message: str = ''
    iterations: int = None
    final_cost: float = None
    output_dir: str = ''
    metrics: dict = field(default_factory=dict)


@dataclass
class CampaignResult:
    outcomes: list
    nees: object = None
    nees_rotation: object = None
    nees_position: object = None
    rmse_rotation: np.ndarray = None
    rmse_position: np.ndarray = None
    bias_within_fraction: float = None

    @property
    def failed(self):
        return [o for o in self.outcomes if o.status == 'failed']

    @property
    def succeeded(self):
        return [o for o in self.outcomes if o.status == 'succeeded']


def _prior_rng(seed):
    # children 0-3 belong to the simulator
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])


def make_prior(dataset, config):
    """Prior on the first keyframe, drawn around ground truth from its own covariance."""
    gt = dataset.states[0]
    cov = config.solver.prior_covariance(config.sim.initial_bias_sigma)
    if config.sim.noise_free:
        return gt, cov
    delta = _prior_rng(config.seed).multivariate_normal(np.zeros(STATE_DIM), cov)
    # bias prior is centred on zero: the true initial bias is the draw
    delta[BG] = -gt.bias.gyro
    delta[BA] = -gt.bias.accel
    return gt.retract(delta), cov


def estimate(dataset, config, jobs=1):
    """Smooth the whole dataset starting from the prior only."""
    prior_mean, prior_cov = make_prior(dataset, config)
    solver = config.solver
    graph, states, report = incremental_solve(
        prior_mean, prior_cov, dataset.streams(), dataset.usable_tracks, dataset.camera,
        config.noise, gravity=np.asarray(config.sim.gravity), init_chunk=solver.init_chunk,
        max_iters=solver.max_iters, rel_tol=solver.rel_tol, abs_tol=solver.abs_tol,
        refine_iters=solver.refine_iters, jobs=jobs,
    )
    marginals = pose_marginals(graph, states, jobs=jobs)
    return EstimateResult(states, report, marginals, graph, prior_mean, prior_cov)


def compute_metrics(dataset, result, config):
    errors = evaluation.pose_errors(result.states, dataset.states, dataset.keyframe_times)
    bias_err, bias_std, within = evaluation.bias_tracking(result.states, dataset.states,
                                                          result.marginals)
    drift = evaluation.relative_drift(result.states, dataset.states,
                                      config.evaluation.segment_lengths)
    return {
        'errors': errors,
        'nees': evaluation.nees_series(errors, result.marginals, 'pose'),
        'nees_rotation': evaluation.nees_series(errors, result.marginals, 'rotation'),
        'nees_position': evaluation.nees_series(errors, result.marginals, 'position'),
        'bias_error': bias_err,
        'bias_std': bias_std,
        'bias_within': within,
        'drift': drift,
    }


def write_estimate(result, dataset, out_dir):
    """estimate.csv, report.csv, marginals.csv and solve.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_states(out / 'estimate.csv', dataset.keyframe_times, result.states)
    write_csv(out / 'report.csv', ['iteration', 'cost'], enumerate(result.report.costs))
    header = ['keyframe'] + [f'c{i}_{j}' for i in range(STATE_DIM) for j in range(STATE_DIM)]
    write_csv(out / 'marginals.csv', header,
              ([k, *m.ravel()] for k, m in enumerate(result.marginals)))
    summary = {
        'iterations': result.report.iterations,
        'initial_cost': result.report.initial_cost,
        'final_cost': result.report.final_cost,
        'converged': result.report.converged,
        'skipped_factors': result.report.skipped_factors,
        'message': result.report.message,
    }
    (out / 'solve.json').write_text(json.dumps(summary, indent=2) + '\n', encoding='utf-8')
    return summary


def write_metrics(metrics, dataset, out_dir):
    out = Path(out_dir)
    times = dataset.keyframe_times
    write_csv(out / 'errors.csv', ['t', 'ephi_x', 'ephi_y', 'ephi_z', 'ep_x', 'ep_y', 'ep_z', 'nees',
                                   'nees_rotation', 'nees_position'],
              ([t, *s.error, n, nr, npos] for t, s, n, nr, npos in zip(
                  times, metrics['errors'], metrics['nees'], metrics['nees_rotation'],
                  metrics['nees_position'])))
    write_drift(metrics['drift'], out / 'drift.csv')


def write_drift(drift, path):
    rows = [b.summary() for b in drift.buckets]
    write_csv(path, ['length', 'count', 'translation_mean', 'translation_median',
                     'translation_max', 'rotation_mean_deg', 'rotation_max_deg'],
              ([r.get(k, 0.0) for k in ('length', 'count', 'translation_mean', 'translation_median',
                                         'translation_max', 'rotation_mean_deg', 'rotation_max_deg')]
               for r in rows))


def run_single(config, out_dir, jobs=1):
    """Simulate, estimate and evaluate one seed into out_dir."""
    out = Path(out_dir)
    dataset = simulate(config.trajectory, config.sim)
    write_dataset(dataset, config, out / 'dataset')
    result = estimate(dataset, config, jobs=jobs)
    write_estimate(result, dataset, out)
    metrics = compute_metrics(dataset, result, config)
    write_metrics(metrics, dataset, out)
    return dataset, result, metrics


def _run_seed(config, seed, out_dir, jobs):
    run_dir = Path(out_dir) / f'run_{seed:04d}'
    try:
        _, result, metrics = run_single(config.with_seed(seed), run_dir, jobs=jobs)
    except (VioError, np.linalg.LinAlgError) as exc:
        logger.warning('run with seed %d failed: %s', seed, exc)
        return RunOutcome(seed, 'failed', message=str(exc), output_dir=str(run_dir))
    if not result.report.converged:
        logger.warning('run with seed %d did not converge: %s', seed, result.report.message)
        return RunOutcome(seed, 'failed', message=result.report.message,
                          iterations=result.report.iterations,
                          final_cost=result.report.final_cost, output_dir=str(run_dir))
    return RunOutcome(seed, 'succeeded', iterations=result.report.iterations,
                      final_cost=result.report.final_cost, output_dir=str(run_dir),
                      metrics=metrics)


def run_campaign(config, seeds, out_dir, jobs=1):
    """Independent runs fanned out over worker threads, then the aggregate metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda s: _run_seed(config, s, out, 1), seeds))
    else:
        outcomes = [_run_seed(config, s, out, 1) for s in seeds]
    outcomes.sort(key=lambda o: o.seed)
    campaign = CampaignResult(outcomes)
    ok = campaign.succeeded
    if not ok:
        return campaign

    ev = config.evaluation
    series = {key: [evaluation.NeesSeries(o.seed, o.metrics[key]) for o in ok]
              for key in ('nees', 'nees_rotation', 'nees_position')}
    campaign.nees = evaluation.average_nees(series['nees'], 6, ev.nees_tail,
                                            ev.max_overconfident_fraction)
    campaign.nees_rotation = evaluation.average_nees(series['nees_rotation'], 3, ev.nees_tail,
                                                     ev.max_overconfident_fraction)
    campaign.nees_position = evaluation.average_nees(series['nees_position'], 3, ev.nees_tail,
                                                     ev.max_overconfident_fraction)
    campaign.rmse_rotation, campaign.rmse_position = evaluation.rmse(
        [o.metrics['errors'] for o in ok])
    campaign.bias_within_fraction = float(np.mean([o.metrics['bias_within'] for o in ok]))
    write_campaign(campaign, config, out)
    return campaign


def write_campaign(campaign, config, out_dir):
    out = Path(out_dir)
    ok = campaign.succeeded
    times = ok[0].metrics['errors']
    n, nr, npos = campaign.nees, campaign.nees_rotation, campaign.nees_position
    write_csv(out / 'nees.csv',
              ['t', 'nees', 'lower', 'upper', 'nees_rotation', 'rotation_upper',
               'nees_position', 'position_upper'],
              ([s.time, n.mean[k], n.lower, n.upper, nr.mean[k], nr.upper, npos.mean[k], npos.upper]
               for k, s in enumerate(times)))
    write_csv(out / 'rmse.csv', ['t', 'rotation_deg', 'position_m'],
              ([s.time, r, p] for s, r, p in zip(times, campaign.rmse_rotation,
                                                  campaign.rmse_position)))
    rows = []
    for o in ok:
        err, std = o.metrics['bias_error'][-1], o.metrics['bias_std'][-1]
        rows.append([o.seed, *err, *std, int(o.metrics['bias_within'])])
    axes = ('bgx', 'bgy', 'bgz', 'bax', 'bay', 'baz')
    write_csv(out / 'bias_tracking.csv',
              ['seed'] + [f'err_{a}' for a in axes] + [f'std_{a}' for a in axes] + ['within_3sigma'],
              rows)
    verdict = campaign_verdict(campaign, config)
    (out / 'summary.json').write_text(json.dumps(verdict, indent=2) + '\n', encoding='utf-8')


def campaign_verdict(campaign, config):
    total = len(campaign.outcomes)
    failed = len(campaign.failed)
    verdict = {
        'runs': total,
        'failed': failed,
        'failed_fraction': failed / total if total else 0.0,
        'failure_limit_exceeded': total > 0 and failed / total > config.evaluation.max_failed_fraction,
    }
    if campaign.nees is not None:
        verdict.update({
            'nees_lower': campaign.nees.lower,
            'nees_upper': campaign.nees.upper,
            'nees_overconfident_fraction': campaign.nees.overconfident_fraction,
            'nees_accepted': campaign.nees.accepted,
            'bias_within_3sigma_fraction': campaign.bias_within_fraction,
            'final_rmse_rotation_deg': float(campaign.rmse_rotation[-1]),
            'final_rmse_position_m': float(campaign.rmse_position[-1]),
        })
    return verdict

