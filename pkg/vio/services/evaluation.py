"""
Accuracy and consistency metrics, plus the Monte-Carlo studies built on them.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import chi2

from vio.exceptions import GimbalLockError, InvalidInputError, SingularCovarianceError
from vio.services.liealg import (
    exp_so3, exp_so3_many, log_so3, log_so3_many, right_jacobian,
)
from vio.services.preintegration import (
    PreintegratedImu, bias_corrected_delta, integrate_batch,
)
from vio.services.state import BA, BG, ImuBias, PHI, POS

logger = logging.getLogger(__name__)

GIMBAL_TOL = 1e-6
EULER_DIFF_STEP = 1e-6


@dataclass(frozen=True)
class ErrorSample:
    time: float
    error: np.ndarray


@dataclass
class NeesSeries:
    run_id: int
    values: np.ndarray


@dataclass
class NeesSummary:
    mean: np.ndarray
    lower: float
    upper: float
    overconfident: np.ndarray
    underconfident: np.ndarray
    max_overconfident_fraction: float

    @property
    def overconfident_fraction(self):
        return float(np.mean(self.overconfident)) if len(self.overconfident) else 0.0

    @property
    def accepted(self):
        return self.overconfident_fraction <= self.max_overconfident_fraction


# Errors and NEES

def pose_error(est, gt):
    """Body-frame error [Log(R_est^T R_gt); R_est^T (p_gt - p_est)] of the retraction at est."""
    e = np.zeros(6)
    e[PHI] = log_so3(est.rotation.T @ gt.rotation)
    e[POS] = est.rotation.T @ (gt.position - est.position)
    return e


def pose_errors(est_states, gt_states, times=None):
    if len(est_states) != len(gt_states):
        raise InvalidInputError('estimate and ground truth have different lengths')
    times = np.arange(len(gt_states)) if times is None else times
    return [ErrorSample(float(t), pose_error(e, g)) for t, e, g in zip(times, est_states, gt_states)]


def nees(err, cov):
    """Mahalanobis square err^T cov^-1 err."""
    err = np.asarray(getattr(err, 'error', err), dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (len(err), len(err)):
        raise InvalidInputError(f'covariance shape {cov.shape} does not match error of size {len(err)}')
    try:
        factor = cho_factor(0.5 * (cov + cov.T))
    except LinAlgError as exc:
        raise SingularCovarianceError('NEES covariance is not positive definite') from exc
    return float(err @ cho_solve(factor, err))


def nees_series(errors, marginals, block='pose'):
    """Per-keyframe NEES for the pose (6 dof), rotation or position block."""
    index = {'pose': np.r_[PHI, POS], 'rotation': np.r_[PHI], 'position': np.r_[POS]}[block]
    sub = {'pose': slice(0, 6), 'rotation': slice(0, 3), 'position': slice(3, 6)}[block]
    values = []
    for sample, cov in zip(errors, marginals):
        err = np.asarray(getattr(sample, 'error', sample))[sub]
        values.append(nees(err, cov[np.ix_(index, index)]))
    return np.array(values)


def nees_bounds(num_runs, dof, tail=0.025):
    """Two-sided chi-square acceptance region of the average NEES."""
    n = num_runs * dof
    return chi2.ppf(tail, n) / num_runs, chi2.ppf(1.0 - tail, n) / num_runs


def average_nees(runs, dof=6, tail=0.025, max_overconfident_fraction=0.05):
    """Average NEES over aligned runs with the chi-square verdict."""
    if not runs:
        raise InvalidInputError('average_nees needs at least one run')
    runs = sorted(runs, key=lambda r: r.run_id)
    lengths = {len(r.values) for r in runs}
    if len(lengths) != 1:
        raise InvalidInputError(f'NEES series have mismatched lengths {sorted(lengths)}')
    mean = np.mean([r.values for r in runs], axis=0)
    lower, upper = nees_bounds(len(runs), dof, tail)
    return NeesSummary(
        mean=mean, lower=lower, upper=upper,
        overconfident=mean > upper, underconfident=mean < lower,
        max_overconfident_fraction=max_overconfident_fraction,
    )


def rmse(errors):
    """
    Per-time RMSE over runs.

    errors: array (runs, T, 6) or list of per-run ErrorSample lists.
    Returns (rotation in degrees, position in metres), each of length T.
    """
    arr = np.array([[getattr(s, 'error', s) for s in run] for run in errors], dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 6:
        raise InvalidInputError(f'expected errors of shape (runs, T, 6), got {arr.shape}')
    rot = np.sqrt(np.mean(np.sum(arr[:, :, 0:3] ** 2, axis=2), axis=0))
    pos = np.sqrt(np.mean(np.sum(arr[:, :, 3:6] ** 2, axis=2), axis=0))
    return np.degrees(rot), pos


@dataclass
class DriftBucket:
    length: float
    translation: np.ndarray
    rotation_deg: np.ndarray

    @property
    def count(self):
        return len(self.translation)

    def summary(self):
        if not self.count:
            return {'length': self.length, 'count': 0}
        return {
            'length': self.length,
            'count': self.count,
            'translation_mean': float(np.mean(self.translation)),
            'translation_median': float(np.median(self.translation)),
            'translation_max': float(np.max(self.translation)),
            'rotation_mean_deg': float(np.mean(self.rotation_deg)),
            'rotation_max_deg': float(np.max(self.rotation_deg)),
        }


@dataclass
class DriftResult:
    buckets: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def relative_drift(est_states, gt_states, segment_lengths):
    """End-of-segment error over ground-truth segments of the given lengths, starts aligned."""
    if len(est_states) != len(gt_states):
        raise InvalidInputError('estimate and ground truth have different lengths')
    positions = np.array([s.position for s in gt_states])
    travelled = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(positions, axis=0), axis=1))])
    result = DriftResult()
    for length in segment_lengths:
        if length > travelled[-1]:
            result.skipped.append(length)
            logger.info('segment length %.1f m exceeds trajectory length %.1f m, skipped',
                        length, travelled[-1])
            continue
        trans, rot = [], []
        for s in range(len(gt_states)):
            e = np.searchsorted(travelled, travelled[s] + length)
            if e >= len(gt_states):
                break
            g0, g1, e0, e1 = gt_states[s], gt_states[e], est_states[s], est_states[e]
            R_gt = g0.rotation.T @ g1.rotation
            t_gt = g0.rotation.T @ (g1.position - g0.position)
            R_est = e0.rotation.T @ e1.rotation
            t_est = e0.rotation.T @ (e1.position - e0.position)
            trans.append(np.linalg.norm(t_est - t_gt))
            rot.append(np.degrees(np.linalg.norm(log_so3(R_est.T @ R_gt))))
        result.buckets.append(DriftBucket(length, np.array(trans), np.array(rot)))
    return result


# Gaussian divergence

def kl_gaussian(cov_est, cov_ref):
    """KL divergence between zero-mean Gaussians N(0, cov_est) || N(0, cov_ref)."""
    cov_est = np.asarray(cov_est, dtype=float)
    cov_ref = np.asarray(cov_ref, dtype=float)
    if cov_est.shape != cov_ref.shape:
        raise InvalidInputError('covariances must have the same shape')
    n = cov_ref.shape[0]
    try:
        factor = cho_factor(0.5 * (cov_ref + cov_ref.T))
    except LinAlgError as exc:
        raise SingularCovarianceError('reference covariance is singular') from exc
    sign_est, logdet_est = np.linalg.slogdet(cov_est)
    if sign_est <= 0:
        raise SingularCovarianceError('estimated covariance is singular')
    logdet_ref = 2.0 * np.sum(np.log(np.diag(factor[0])))
    trace = np.trace(cho_solve(factor, cov_est))
    return 0.5 * (trace - n + logdet_ref - logdet_est)


def symmetric_kl(a, b):
    return kl_gaussian(a, b) + kl_gaussian(b, a)


# Euler angles (zyx: theta = [roll, pitch, yaw])

def euler_to_rotation(theta):
    roll, pitch, yaw = theta
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def rotation_to_euler(R):
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def rate_matrix(theta):
    """E' with body rate omega = E'(theta) d(theta)/dt."""
    roll, pitch, _ = theta
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    return np.array([
        [1.0, 0.0, -sp],
        [0.0, cr, sr * cp],
        [0.0, -sr, cr * cp],
    ])


def rate_matrix_inv(theta):
    roll, pitch, _ = theta
    cp = np.cos(pitch)
    if abs(cp) <= np.sin(GIMBAL_TOL):
        raise GimbalLockError(f'pitch {np.degrees(pitch):.6f} deg is at the gimbal singularity')
    cr, sr = np.cos(roll), np.sin(roll)
    tp = np.sin(pitch) / cp
    return np.array([
        [1.0, sr * tp, cr * tp],
        [0.0, cr, -sr],
        [0.0, sr / cp, cr / cp],
    ])


def euler_integrate(theta, omega, dt):
    """One forward-Euler step of the Euler-angle kinematics."""
    theta = np.asarray(theta, dtype=float)
    return theta + rate_matrix_inv(theta) @ np.asarray(omega, dtype=float) * dt


def _euler_rate_jacobian(theta, omega):
    J = np.zeros((3, 3))
    for k in range(3):
        step = np.zeros(3)
        step[k] = EULER_DIFF_STEP
        J[:, k] = (rate_matrix_inv(theta + step) @ omega
                   - rate_matrix_inv(theta - step) @ omega) / (2.0 * EULER_DIFF_STEP)
    return J


def _gyro_variance(noise, dt):
    density = getattr(noise, 'gyro_noise_density', noise)
    return density ** 2 / dt


def euler_covariance_step(theta, cov3, omega, dt, noise):
    """Propagate Euler-angle mean and covariance through one noisy gyro sample."""
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    A = np.eye(3) + _euler_rate_jacobian(theta, omega) * dt
    B = -rate_matrix_inv(theta) * dt
    cov = A @ cov3 @ A.T + _gyro_variance(noise, dt) * (B @ B.T)
    return euler_integrate(theta, omega, dt), 0.5 * (cov + cov.T)


def so3_covariance_step(R, cov3, omega, dt, noise):
    """Rotation-only counterpart of the preintegration covariance step."""
    step = exp_so3(np.asarray(omega, dtype=float) * dt)
    Jr = right_jacobian(np.asarray(omega, dtype=float) * dt) * dt
    cov = step.T @ cov3 @ step + _gyro_variance(noise, dt) * (Jr @ Jr.T)
    return R @ step, 0.5 * (cov + cov.T)


def euler_to_tangent_covariance(theta, cov_euler):
    E = rate_matrix(theta)
    return E @ cov_euler @ E.T


# Studies

def integration_error_study(rates, dts, duration=1.0, axis=(0.5, 0.0, 0.866)):
    """Rotation error of Euler vs SO(3) integration of a constant rate."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    rows = []
    for rate in rates:
        omega = rate * axis
        truth = exp_so3(omega * duration)
        for dt in dts:
            steps = int(round(duration / dt))
            if abs(steps * dt - duration) > 1e-9:
                raise InvalidInputError(f'dt {dt} does not divide the duration {duration}')
            theta = np.zeros(3)
            R = np.eye(3)
            step = exp_so3(omega * dt)
            for _ in range(steps):
                theta = euler_integrate(theta, omega, dt)
                R = R @ step
            rows.append({
                'rate': float(rate),
                'dt': float(dt),
                'euler_error': float(np.linalg.norm(log_so3(euler_to_rotation(theta).T @ truth))),
                'so3_error': float(np.linalg.norm(log_so3(R.T @ truth))),
            })
    return rows


def euler_kl_study(pitches_deg, rate=1.0, dt=0.01, duration=0.5, gyro_noise_density=0.01,
                   samples=10000, seed=0):
    """
    KL of Euler and SO(3) propagated rotation covariances against sampled ones.

    Each trajectory pitches up at a constant body rate and ends at the given
    maximum pitch, so the Euler-angle rate matrix is at its worst on the last steps.
    """
    rng = np.random.default_rng(seed)
    omega = np.array([0.0, rate, 0.0])
    steps = int(round(duration / dt))
    rows = []
    for pitch_deg in pitches_deg:
        theta0 = np.array([0.0, np.radians(pitch_deg) - rate * steps * dt, 0.0])
        R0 = euler_to_rotation(theta0)

        theta, cov_euler = theta0.copy(), np.zeros((3, 3))
        R, cov_so3 = R0.copy(), np.zeros((3, 3))
        for _ in range(steps):
            theta, cov_euler = euler_covariance_step(theta, cov_euler, omega, dt, gyro_noise_density)
            R, cov_so3 = so3_covariance_step(R, cov_so3, omega, dt, gyro_noise_density)

        sigma = gyro_noise_density / np.sqrt(dt)
        R_noisy = np.broadcast_to(R0, (samples, 3, 3)).copy()
        for _ in range(steps):
            R_noisy = R_noisy @ exp_so3_many((omega + rng.normal(0.0, sigma, (samples, 3))) * dt)
        err = log_so3_many(np.einsum('ji,sjk->sik', R, R_noisy))
        cov_ref = np.cov(err, rowvar=False)

        rows.append({
            'pitch_deg': float(pitch_deg),
            'kl_euler': float(kl_gaussian(euler_to_tangent_covariance(theta, cov_euler), cov_ref)),
            'kl_so3': float(kl_gaussian(cov_so3, cov_ref)),
        })
    return rows


def fairness_check(cov3, num_transforms=100, seed=0, measurement=None):
    """
    Negative log-likelihood of one rotation measurement under random world-frame
    changes, for the SO(3) parametrization and for Euler angles.
    """
    rng = np.random.default_rng(seed)
    cov3 = np.asarray(cov3, dtype=float)
    if measurement is None:
        measurement = exp_so3(rng.multivariate_normal(np.zeros(3), cov3))
    estimate = np.eye(3)
    factor = cho_factor(cov3)
    so3, euler = [], []
    for _ in range(num_transforms):
        R_w = exp_so3(rng.uniform(-np.pi, np.pi, 3) * 0.5)
        R_est, R_meas = R_w @ estimate, R_w @ measurement
        r = log_so3(R_est.T @ R_meas)
        so3.append(0.5 * r @ cho_solve(factor, r))
        theta_est = rotation_to_euler(R_est)
        d = rotation_to_euler(R_meas) - theta_est
        d = (d + np.pi) % (2.0 * np.pi) - np.pi
        try:
            E_inv = rate_matrix_inv(theta_est)
        except GimbalLockError:
            so3.pop()
            continue
        cov_theta = E_inv @ cov3 @ E_inv.T
        euler.append(0.5 * d @ np.linalg.solve(cov_theta, d))
    return np.array(so3), np.array(euler)


def covariance_fidelity_study(noise, gyro, accel, dt, samples=10000, seed=0, bias=None):
    """
    Empirical covariance of preintegration errors over noisy realizations of one
    stream, compared with the propagated covariance.
    """
    rng = np.random.default_rng(seed)
    bias = bias or ImuBias()
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    K = len(gyro)
    pre = PreintegratedImu(bias_lin=bias)
    for k in range(K):
        pre.integrate_measurement(gyro[k], accel[k], dt, noise)

    dts = np.full(K, dt)
    dR0, dv0, dp0 = integrate_batch(gyro, accel, dts, bias)
    g_noise = rng.normal(0.0, noise.gyro_noise_density / np.sqrt(dt), (samples, K, 3))
    a_noise = rng.normal(0.0, noise.accel_noise_density / np.sqrt(dt), (samples, K, 3))
    dR, dv, dp = integrate_batch(gyro, accel, dts, bias, g_noise, a_noise)
    err = np.hstack([
        log_so3_many(np.einsum('ji,sjk->sik', dR0[0], dR)),
        dv - dv0[0],
        dp - dp0[0],
    ])
    empirical = np.cov(err, rowvar=False)
    diag_rel = np.abs(np.diag(empirical) - np.diag(pre.cov)) / np.diag(pre.cov)
    return {
        'propagated': pre.cov,
        'empirical': empirical,
        'symmetric_kl': float(symmetric_kl(pre.cov, empirical)),
        'max_diag_relative_error': float(np.max(diag_rel)),
    }


def bias_correction_study(noise, num_streams=1000, magnitudes=(0.04, 0.08, 0.12, 0.16, 0.2),
                          samples_per_stream=100, dt=0.005, max_rate=1.0, seed=0):
    """
    First-order bias correction against re-integration, per perturbation
    magnitude; every perturbation is also evaluated at half its size to expose
    the order of the remainder.
    """
    rng = np.random.default_rng(seed)
    magnitudes = np.asarray(magnitudes, dtype=float)
    # errors[m, s, c, h]: magnitude, stream, component (R, v, p), full/half size
    errors = np.zeros((len(magnitudes), num_streams, 3, 2))
    dts = np.full(samples_per_stream, dt)
    for s in range(num_streams):
        gyro = rng.uniform(-max_rate, max_rate, (samples_per_stream, 3)) / np.sqrt(3.0)
        accel = rng.normal(0.0, 1.0, (samples_per_stream, 3)) + np.array([0.0, 0.0, 9.81])
        pre = PreintegratedImu()
        for k in range(samples_per_stream):
            pre.integrate_measurement(gyro[k], accel[k], dt, noise)
        direction = rng.normal(size=6)
        direction /= np.linalg.norm(direction)
        for m, magnitude in enumerate(magnitudes):
            for h, scale in enumerate((1.0, 0.5)):
                new_bias = ImuBias.from_vector(direction * magnitude * scale)
                dR, dv, dp = bias_corrected_delta(pre, new_bias)
                tR, tv, tp = integrate_batch(gyro, accel, dts, new_bias)
                errors[m, s, 0, h] = np.linalg.norm(log_so3(dR.T @ tR[0]))
                errors[m, s, 1, h] = np.linalg.norm(dv - tv[0])
                errors[m, s, 2, h] = np.linalg.norm(dp - tp[0])

    rows = []
    names = ('rotation', 'velocity', 'position')
    for m, magnitude in enumerate(magnitudes):
        row = {'magnitude': float(magnitude)}
        for c, name in enumerate(names):
            full, half = errors[m, :, c, 0], errors[m, :, c, 1]
            row[f'{name}_mean'] = float(np.mean(full))
            row[f'{name}_max'] = float(np.max(full))
            row[f'{name}_decay'] = float(np.median(full / np.maximum(half, 1e-300)))
        rows.append(row)
    return rows


def bias_tracking(est_states, gt_states, marginals, sigmas=3.0):
    """Bias error at every keyframe with the estimator's standard deviations."""
    err = np.array([np.concatenate([e.bias.gyro - g.bias.gyro, e.bias.accel - g.bias.accel])
                    for e, g in zip(est_states, gt_states)])
    std = np.sqrt(np.array([np.concatenate([np.diag(c)[BG], np.diag(c)[BA]]) for c in marginals]))
    within = np.all(np.abs(err[-1]) <= sigmas * std[-1])
    return err, std, bool(within)
