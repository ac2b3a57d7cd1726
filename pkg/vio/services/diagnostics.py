"""
Finite-difference checks of every analytic Jacobian, perturbing through the
same retractions the optimizer uses.
"""
import logging
from dataclasses import dataclass

import numpy as np

from vio.services.factors import (
    CameraModel, imu_residual, imu_residual_jacobians, prior_residual, projection_jacobians,
)
from vio.services.liealg import Pose, exp_so3, log_so3, right_jacobian_inv
from vio.services.preintegration import (
    GRAVITY, ImuNoiseModel, PreintegratedImu, integrate_batch, predict,
)
from vio.services.state import BA, BG, ImuBias, NavState, PHI, POS, STATE_DIM, VEL

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
DEFAULT_TOL = 1e-5

CHECK_NOISE = ImuNoiseModel(0.0007, 0.019, 0.0004, 0.012)

# Which state and tangent slice each IMU Jacobian block perturbs.
IMU_BLOCKS = {
    'phi_i': ('i', PHI), 'p_i': ('i', POS), 'v_i': ('i', VEL),
    'phi_j': ('j', PHI), 'p_j': ('j', POS), 'v_j': ('j', VEL),
    'bg_i': ('i', BG), 'ba_i': ('i', BA),
}


@dataclass
class JacobianCheck:
    block: str
    max_error: float
    tol: float

    @property
    def passed(self):
        return bool(self.max_error <= self.tol)


def relative_error(numeric, analytic):
    scale = max(np.linalg.norm(analytic), 1e-12)
    return float(np.linalg.norm(numeric - analytic) / scale)


def numeric_jacobian(fn, dim, step=FD_STEP):
    """Central differences of fn(delta) around delta = 0."""
    cols = []
    for k in range(dim):
        d = np.zeros(dim)
        d[k] = step
        cols.append((fn(d) - fn(-d)) / (2.0 * step))
    return np.column_stack(cols)


def random_state(rng, bias=None):
    return NavState(
        exp_so3(rng.uniform(-1.0, 1.0, 3)),
        rng.normal(0.0, 2.0, 3),
        rng.normal(0.0, 1.0, 3),
        bias if bias is not None else ImuBias(rng.normal(0.0, 0.01, 3), rng.normal(0.0, 0.05, 3)),
    )


def random_configuration(rng, samples=100, dt=0.005):
    """Random IMU stream, its preintegration and two states around the predicted one."""
    gyro = rng.uniform(-1.0, 1.0, (samples, 3))
    accel = rng.normal(0.0, 2.0, (samples, 3)) + np.array([0.0, 0.0, 9.81])
    bias_lin = ImuBias(rng.normal(0.0, 0.01, 3), rng.normal(0.0, 0.05, 3))
    pre = PreintegratedImu(bias_lin=bias_lin)
    for k in range(samples):
        pre.integrate_measurement(gyro[k], accel[k], dt, CHECK_NOISE)
    bias_i = bias_lin + ImuBias(rng.normal(0.0, 0.01, 3), rng.normal(0.0, 0.02, 3))
    state_i = random_state(rng, bias_i)
    state_j = predict(state_i, pre, GRAVITY).retract(rng.normal(0.0, 0.05, STATE_DIM))
    return gyro, accel, np.full(samples, dt), pre, state_i, state_j


def check_imu_blocks(state_i, state_j, pre, jacobian_fn=imu_residual_jacobians, step=FD_STEP):
    """Relative error of every IMU residual block against central differences."""
    analytic = jacobian_fn(state_i, state_j, pre, GRAVITY)
    errors = {}
    for name, (which, part) in IMU_BLOCKS.items():
        def residual(d, which=which, part=part):
            delta = np.zeros(STATE_DIM)
            delta[part] = d
            si = state_i.retract(delta) if which == 'i' else state_i
            sj = state_j.retract(delta) if which == 'j' else state_j
            return imu_residual(si, sj, pre, GRAVITY)
        errors[name] = relative_error(numeric_jacobian(residual, 3, step), analytic[name])
    return errors


def check_bias_jacobians(gyro, accel, dts, pre, step=FD_STEP):
    """Absolute error of the five bias-correction Jacobians against re-integration."""
    # A bias offset is the negative of an additive measurement offset.
    offsets = []
    for sign in (1.0, -1.0):
        for k in range(6):
            offsets.append(np.eye(6)[k] * sign * step)
    offsets = np.array(offsets)
    K = len(gyro)
    g_off = np.broadcast_to(-offsets[:, None, 0:3], (len(offsets), K, 3))
    a_off = np.broadcast_to(-offsets[:, None, 3:6], (len(offsets), K, 3))
    dR, dv, dp = integrate_batch(gyro, accel, dts, pre.bias_lin, g_off, a_off)
    plus, minus = slice(0, 6), slice(6, 12)

    R0 = pre.delta_R
    rot = np.array([log_so3(R0.T @ R) for R in dR])
    num = {
        'J_dR_dbg': ((rot[plus] - rot[minus]) / (2 * step)).T[:, 0:3],
        'J_dv_dbg': ((dv[plus] - dv[minus]) / (2 * step)).T[:, 0:3],
        'J_dv_dba': ((dv[plus] - dv[minus]) / (2 * step)).T[:, 3:6],
        'J_dp_dbg': ((dp[plus] - dp[minus]) / (2 * step)).T[:, 0:3],
        'J_dp_dba': ((dp[plus] - dp[minus]) / (2 * step)).T[:, 3:6],
    }
    # ln(R0^T R(b)) ~ J_r^-1(0) J db: the log is taken from the linearization point.
    return {name: float(np.max(np.abs(value - getattr(pre, name)))) for name, value in num.items()}


def check_prior(rng, step=FD_STEP):
    mean = random_state(rng)
    state = mean.retract(rng.normal(0.0, 0.1, STATE_DIM))
    r = prior_residual(state, mean)
    analytic = np.eye(STATE_DIM)
    analytic[PHI, PHI] = right_jacobian_inv(r[PHI])
    analytic[POS, POS] = mean.rotation.T @ state.rotation
    numeric = numeric_jacobian(lambda d: prior_residual(state.retract(d), mean), STATE_DIM, step)
    return relative_error(numeric, analytic)


def check_projection(rng, step=FD_STEP):
    cam = CameraModel(315.0, (320.0, 240.0),
                      Pose(exp_so3(rng.uniform(-0.3, 0.3, 3)), rng.normal(0.0, 0.05, 3)))
    state = random_state(rng)
    # point in front of the camera
    T_wc = state.pose.compose(cam.body_from_camera)
    landmark = T_wc.transform(np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 6)]))
    _, J_pose, J_point = projection_jacobians(state, cam, landmark)

    def pixel_of_pose(d):
        delta = np.zeros(STATE_DIM)
        delta[0:6] = d
        return projection_jacobians(state.retract(delta), cam, landmark)[0]

    num_pose = numeric_jacobian(pixel_of_pose, 6, step)
    num_point = numeric_jacobian(
        lambda d: projection_jacobians(state, cam, landmark + d)[0], 3, step)
    return relative_error(num_pose, J_pose), relative_error(num_point, J_point)


def run_jacobian_suite(configurations=100, seed=0, tol=DEFAULT_TOL,
                       jacobian_fn=imu_residual_jacobians):
    """Worst error per Jacobian block over random configurations."""
    rng = np.random.default_rng(seed)
    worst = {}

    def record(name, value):
        worst[name] = max(worst.get(name, 0.0), value)

    for _ in range(configurations):
        gyro, accel, dts, pre, state_i, state_j = random_configuration(rng)
        for name, err in check_imu_blocks(state_i, state_j, pre, jacobian_fn).items():
            record(f'imu.{name}', err)
        for name, err in check_bias_jacobians(gyro, accel, dts, pre).items():
            record(f'preintegration.{name}', err)
        record('prior', check_prior(rng))
        pose_err, point_err = check_projection(rng)
        record('projection.pose', pose_err)
        record('projection.landmark', point_err)

    checks = [JacobianCheck(name, value, tol) for name, value in sorted(worst.items())]
    for check in checks:
        logger.debug('%s: %.3e (%s)', check.block, check.max_error,
                     'ok' if check.passed else 'FAIL')
    return checks
