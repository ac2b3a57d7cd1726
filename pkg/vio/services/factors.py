"""
Residuals and analytic Jacobians of the factor families.

Every factor is emitted as a LinearizedFactor whose Jacobian columns follow
the per-state tangent layout [dphi, dp, dv, dbg, dba].
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky, qr, svd

from vio.exceptions import (
    CheiralityError, DegenerateFactorError, InvalidInputError, SingularCovarianceError,
)
from vio.services.liealg import (
    Pose, as_vec3, exp_so3, hat, log_so3, right_jacobian, right_jacobian_inv,
)
from vio.services.preintegration import GRAVITY, bias_corrected_delta
from vio.services.state import BA, BG, PHI, POS, STATE_DIM, VEL

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-6
MAX_TRIANGULATION_COND = 1e8

# Rows of the 9-dim IMU residual.
R_ROT = slice(0, 3)
R_VEL = slice(3, 6)
R_POS = slice(6, 9)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera rigidly mounted on the body."""
    focal: float
    principal_point: tuple = (0.0, 0.0)
    body_from_camera: Pose = field(default_factory=Pose.identity)
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not np.isfinite(self.focal) or self.focal <= 0:
            raise InvalidInputError(f'focal length must be positive, got {self.focal}')

    def in_image(self, u, v):
        """Pixel coordinates inside the sensor; works elementwise on arrays."""
        return (u >= 0.0) & (u < self.width) & (v >= 0.0) & (v < self.height)


@dataclass(frozen=True)
class Observation:
    keyframe_id: int
    pixel: np.ndarray
    pixel_sigma: float = 1.0


@dataclass
class LandmarkTrack:
    """All observations of one landmark."""
    landmark_id: int
    observations: list = field(default_factory=list)

    def __post_init__(self):
        ids = [obs.keyframe_id for obs in self.observations]
        if len(ids) != len(set(ids)):
            raise InvalidInputError(f'track {self.landmark_id} observes a keyframe twice')
        for obs in self.observations:
            if obs.pixel_sigma <= 0:
                raise InvalidInputError(f'track {self.landmark_id}: pixel_sigma must be positive')

    def add(self, keyframe_id, pixel, pixel_sigma=1.0):
        if any(obs.keyframe_id == keyframe_id for obs in self.observations):
            raise InvalidInputError(f'track {self.landmark_id} already observes keyframe {keyframe_id}')
        if pixel_sigma <= 0:
            raise InvalidInputError(f'track {self.landmark_id}: pixel_sigma must be positive')
        self.observations.append(
            Observation(keyframe_id, np.asarray(pixel, dtype=float), pixel_sigma))

    @property
    def keyframe_ids(self):
        return [obs.keyframe_id for obs in self.observations]

    def __len__(self):
        return len(self.observations)


@dataclass
class LinearizedFactor:
    """Whitened residual and Jacobian over the listed keyframes."""
    keys: tuple
    jacobian: np.ndarray
    residual: np.ndarray
    kind: str = ''

    def __post_init__(self):
        if self.jacobian.shape[1] != STATE_DIM * len(self.keys):
            raise InvalidInputError(
                f'{self.kind} factor: {self.jacobian.shape[1]} Jacobian columns '
                f'for {len(self.keys)} states')

    @property
    def cost(self):
        return float(self.residual @ self.residual)

    def block(self, position):
        return self.jacobian[:, STATE_DIM * position:STATE_DIM * (position + 1)]


def whitening(cov):
    """Upper-triangular U with U^T U = cov^-1."""
    cov = np.asarray(cov, dtype=float)
    try:
        info = np.linalg.inv(cov)
        return cholesky(0.5 * (info + info.T), lower=False)
    except (LinAlgError, np.linalg.LinAlgError) as exc:
        raise SingularCovarianceError(f'covariance of shape {cov.shape} is not invertible') from exc


# IMU

def imu_residual(state_i, state_j, pre, gravity=GRAVITY):
    """[r_dR; r_dv; r_dp] of a preintegrated IMU factor (bias-corrected)."""
    g = as_vec3(gravity, 'gravity')
    T = pre.dt_total
    dR, dv, dp = bias_corrected_delta(pre, state_i.bias)
    R_i = state_i.rotation
    r = np.zeros(9)
    r[R_ROT] = log_so3(dR.T @ R_i.T @ state_j.rotation)
    r[R_VEL] = R_i.T @ (state_j.velocity - state_i.velocity - g * T) - dv
    r[R_POS] = R_i.T @ (state_j.position - state_i.position
                        - state_i.velocity * T - 0.5 * g * T * T) - dp
    return r


def imu_residual_jacobians(state_i, state_j, pre, gravity=GRAVITY):
    """
    Analytic 9x3 blocks of the IMU residual with respect to
    phi_i, p_i, v_i, phi_j, p_j, v_j, bg_i and ba_i.
    """
    g = as_vec3(gravity, 'gravity')
    T = pre.dt_total
    R_i, R_j = state_i.rotation, state_j.rotation
    r = imu_residual(state_i, state_j, pre, g)
    r_rot = r[R_ROT]
    Jr_inv = right_jacobian_inv(r_rot)
    dbg = state_i.bias.gyro - pre.bias_lin.gyro

    blocks = {name: np.zeros((9, 3)) for name in
              ('phi_i', 'p_i', 'v_i', 'phi_j', 'p_j', 'v_j', 'bg_i', 'ba_i')}

    blocks['phi_i'][R_ROT] = -Jr_inv @ R_j.T @ R_i
    blocks['phi_j'][R_ROT] = Jr_inv
    blocks['bg_i'][R_ROT] = (-Jr_inv @ exp_so3(r_rot).T
                             @ right_jacobian(pre.J_dR_dbg @ dbg) @ pre.J_dR_dbg)

    blocks['phi_i'][R_VEL] = hat(R_i.T @ (state_j.velocity - state_i.velocity - g * T))
    blocks['v_i'][R_VEL] = -R_i.T
    blocks['v_j'][R_VEL] = R_i.T
    blocks['bg_i'][R_VEL] = -pre.J_dv_dbg
    blocks['ba_i'][R_VEL] = -pre.J_dv_dba

    blocks['phi_i'][R_POS] = hat(R_i.T @ (state_j.position - state_i.position
                                          - state_i.velocity * T - 0.5 * g * T * T))
    blocks['p_i'][R_POS] = -np.eye(3)
    blocks['p_j'][R_POS] = R_i.T @ R_j
    blocks['v_i'][R_POS] = -R_i.T * T
    blocks['bg_i'][R_POS] = -pre.J_dp_dbg
    blocks['ba_i'][R_POS] = -pre.J_dp_dba
    return blocks


def imu_factor(i, j, state_i, state_j, pre, gravity=GRAVITY):
    """Whitened IMU factor between keyframes i and j."""
    blocks = imu_residual_jacobians(state_i, state_j, pre, gravity)
    J = np.zeros((9, 2 * STATE_DIM))
    J[:, PHI] = blocks['phi_i']
    J[:, POS] = blocks['p_i']
    J[:, VEL] = blocks['v_i']
    J[:, BG] = blocks['bg_i']
    J[:, BA] = blocks['ba_i']
    off = STATE_DIM
    J[:, off + PHI.start:off + PHI.stop] = blocks['phi_j']
    J[:, off + POS.start:off + POS.stop] = blocks['p_j']
    J[:, off + VEL.start:off + VEL.stop] = blocks['v_j']
    U = whitening(pre.cov)
    r = imu_residual(state_i, state_j, pre, gravity)
    return LinearizedFactor((i, j), U @ J, U @ r, kind='imu')


# Bias random walk

def bias_residual(state_i, state_j, noise=None, dt_ij=None):
    """[bg_j - bg_i; ba_j - ba_i]."""
    return np.concatenate([
        state_j.bias.gyro - state_i.bias.gyro,
        state_j.bias.accel - state_i.bias.accel,
    ])


def bias_factor(i, j, state_i, state_j, noise, dt_ij):
    if dt_ij <= 0:
        raise InvalidInputError(f'bias factor needs dt > 0, got {dt_ij}')
    J = np.zeros((6, 2 * STATE_DIM))
    J[0:3, BG] = -np.eye(3)
    J[3:6, BA] = -np.eye(3)
    J[0:3, STATE_DIM + BG.start:STATE_DIM + BG.stop] = np.eye(3)
    J[3:6, STATE_DIM + BA.start:STATE_DIM + BA.stop] = np.eye(3)
    U = whitening(noise.bias_walk_covariance(dt_ij))
    r = bias_residual(state_i, state_j, noise, dt_ij)
    return LinearizedFactor((i, j), U @ J, U @ r, kind='bias')


# Prior

def prior_residual(state, mean):
    """Tangent-space difference of state from the prior mean."""
    r = np.zeros(STATE_DIM)
    r[PHI] = log_so3(mean.rotation.T @ state.rotation)
    r[POS] = mean.rotation.T @ (state.position - mean.position)
    r[VEL] = state.velocity - mean.velocity
    r[BG] = state.bias.gyro - mean.bias.gyro
    r[BA] = state.bias.accel - mean.bias.accel
    return r


def prior_factor(key, state, mean, cov):
    r = prior_residual(state, mean)
    J = np.eye(STATE_DIM)
    J[PHI, PHI] = right_jacobian_inv(r[PHI])
    J[POS, POS] = mean.rotation.T @ state.rotation
    U = whitening(cov)
    return LinearizedFactor((key,), U @ J, U @ r, kind='prior')


# Vision

def _camera_point(state, cam, landmark):
    T_bc = cam.body_from_camera
    p_b = state.rotation.T @ (landmark - state.position)
    p_c = T_bc.rotation.T @ (p_b - T_bc.translation)
    return p_b, p_c


def project(state, cam, landmark):
    """Pixel coordinates of a world landmark seen from state."""
    landmark = as_vec3(landmark, 'landmark')
    _, p_c = _camera_point(state, cam, landmark)
    if p_c[2] <= MIN_DEPTH:
        raise CheiralityError(f'landmark depth {p_c[2]:.3g} m is not in front of the camera')
    cx, cy = cam.principal_point
    return np.array([cam.focal * p_c[0] / p_c[2] + cx, cam.focal * p_c[1] / p_c[2] + cy])


def projection_jacobians(state, cam, landmark):
    """Pixel, d(pixel)/d[dphi, dp] (2x6) and d(pixel)/d(landmark) (2x3)."""
    p_b, p_c = _camera_point(state, cam, landmark)
    x, y, z = p_c
    if z <= MIN_DEPTH:
        raise CheiralityError(f'landmark depth {z:.3g} m is not in front of the camera')
    cx, cy = cam.principal_point
    pixel = np.array([cam.focal * x / z + cx, cam.focal * y / z + cy])
    J_proj = (cam.focal / z) * np.array([[1.0, 0.0, -x / z], [0.0, 1.0, -y / z]])
    R_cb = cam.body_from_camera.rotation.T
    J_pose = np.hstack([J_proj @ R_cb @ hat(p_b), -J_proj @ R_cb])
    J_point = J_proj @ R_cb @ state.rotation.T
    return pixel, J_pose, J_point


def _normalized(cam, pixel):
    cx, cy = cam.principal_point
    return (pixel[0] - cx) / cam.focal, (pixel[1] - cy) / cam.focal


def triangulate(track, states, cam, refine_iters=3):
    """Linear triangulation from the current poses, refined by a few Gauss-Newton steps."""
    obs = [o for o in track.observations if o.keyframe_id in states]
    if len(obs) < 2:
        raise DegenerateFactorError(f'track {track.landmark_id} has {len(obs)} usable observations')

    rows, rhs = [], []
    for o in obs:
        T_wc = states[o.keyframe_id].pose.compose(cam.body_from_camera)
        R_cw = T_wc.rotation.T
        t_cw = -R_cw @ T_wc.translation
        x, y = _normalized(cam, o.pixel)
        rows.append(x * R_cw[2] - R_cw[0])
        rhs.append(t_cw[0] - x * t_cw[2])
        rows.append(y * R_cw[2] - R_cw[1])
        rhs.append(t_cw[1] - y * t_cw[2])
    A = np.array(rows)
    b = np.array(rhs)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_TRIANGULATION_COND:
        raise DegenerateFactorError(
            f'track {track.landmark_id}: triangulation is ill-conditioned (cond={cond:.3g})')
    point = np.linalg.lstsq(A, b, rcond=None)[0]

    def reprojection(pt):
        res, jac = [], []
        for o in obs:
            try:
                pixel, _, J_point = projection_jacobians(states[o.keyframe_id], cam, pt)
            except CheiralityError:
                continue
            res.append((o.pixel - pixel) / o.pixel_sigma)
            jac.append(-J_point / o.pixel_sigma)
        if not res:
            return None, None
        return np.concatenate(res), np.vstack(jac)

    r, J = reprojection(point)
    if r is None:
        raise DegenerateFactorError(f'track {track.landmark_id}: landmark behind every camera')
    for _ in range(refine_iters):
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        candidate = point + step
        r_new, J_new = reprojection(candidate)
        if r_new is None or len(r_new) < len(r) or r_new @ r_new >= r @ r:
            break
        point, r, J = candidate, r_new, J_new
    return point


def linearize_track(track, states, cam, landmark):
    """
    Stacked whitened vision linearization of one track.

    Returns (keys, F, E, b) where F holds the [dphi, dp] columns of every
    observing keyframe (15 columns per key), E the landmark columns and
    b = -r at the linearization point.
    """
    usable = []
    for o in track.observations:
        if o.keyframe_id not in states:
            continue
        try:
            usable.append((o, projection_jacobians(states[o.keyframe_id], cam, landmark)))
        except CheiralityError:
            logger.debug('track %s: dropping view %s behind the camera',
                         track.landmark_id, o.keyframe_id)
    if len(usable) < 2:
        raise DegenerateFactorError(f'track {track.landmark_id} has fewer than 2 valid views')

    keys = tuple(sorted(o.keyframe_id for o, _ in usable))
    column = {key: n for n, key in enumerate(keys)}
    n = len(usable)
    F = np.zeros((2 * n, STATE_DIM * len(keys)))
    E = np.zeros((2 * n, 3))
    b = np.zeros(2 * n)
    for row, (o, (pixel, J_pose, J_point)) in enumerate(usable):
        rows = slice(2 * row, 2 * row + 2)
        c = STATE_DIM * column[o.keyframe_id]
        # residual z - pi(x): Jacobians carry a minus sign
        F[rows, c:c + 6] = -J_pose / o.pixel_sigma
        E[rows] = -J_point / o.pixel_sigma
        b[rows] = -(o.pixel - pixel) / o.pixel_sigma
    return keys, F, E, b


def null_space_basis(E, method='qr'):
    """Orthonormal basis of the left null space of E (2n x 3)."""
    if np.linalg.matrix_rank(E) < 3:
        raise DegenerateFactorError('landmark Jacobian has rank < 3')
    if method == 'qr':
        Q, _ = qr(E, mode='full')
    elif method == 'svd':
        Q, _, _ = svd(E, full_matrices=True)
    else:
        raise InvalidInputError(f'unknown null-space method {method!r}')
    return Q[:, 3:]


def structureless_factor(track, states, cam, landmark=None, refine_iters=3):
    """Vision factor with the landmark eliminated by null-space projection."""
    if landmark is None:
        landmark = triangulate(track, states, cam, refine_iters=refine_iters)
    keys, F, E, b = linearize_track(track, states, cam, landmark)
    E_perp = null_space_basis(E)
    return LinearizedFactor(keys, E_perp.T @ F, -E_perp.T @ b, kind='vision')
