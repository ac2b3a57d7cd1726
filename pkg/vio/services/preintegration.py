"""
IMU preintegration between two keyframes.

Deltas are accumulated at a fixed bias linearization point; the 9x9 covariance
uses block order [dphi, dv, dp].
"""
from dataclasses import dataclass, field

import numpy as np

from vio.exceptions import InvalidInputError
from vio.services.liealg import (
    as_vec3, exp_so3, exp_so3_many, hat, normalize_rotation, right_jacobian,
)
from vio.services.state import ImuBias, NavState

GRAVITY = np.array([0.0, 0.0, -9.81])

DPHI = slice(0, 3)
DV = slice(3, 6)
DP = slice(6, 9)


@dataclass(frozen=True)
class ImuSample:
    """Raw gyroscope / accelerometer reading."""
    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.timestamp):
            raise InvalidInputError('IMU timestamp must be finite')
        object.__setattr__(self, 'gyro', as_vec3(self.gyro, 'gyro'))
        object.__setattr__(self, 'accel', as_vec3(self.accel, 'accel'))


@dataclass(frozen=True)
class ImuNoiseModel:
    """Continuous-time noise densities of the IMU."""
    gyro_noise_density: float
    accel_noise_density: float
    gyro_bias_density: float
    accel_bias_density: float

    def __post_init__(self):
        for name in ('gyro_noise_density', 'accel_noise_density',
                     'gyro_bias_density', 'accel_bias_density'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidInputError(f'{name} must be strictly positive, got {value}')

    def measurement_covariance(self, dt):
        """Discrete covariance of [eta_g, eta_a] for a sample of length dt."""
        return np.diag(np.concatenate([
            np.full(3, self.gyro_noise_density ** 2 / dt),
            np.full(3, self.accel_noise_density ** 2 / dt),
        ]))

    def bias_walk_covariance(self, dt):
        """Random-walk covariance of [bg, ba] accumulated over dt."""
        return np.diag(np.concatenate([
            np.full(3, self.gyro_bias_density ** 2 * dt),
            np.full(3, self.accel_bias_density ** 2 * dt),
        ]))


@dataclass
class PreintegratedImu:
    """Single-writer accumulator of IMU samples between keyframes i and j."""
    bias_lin: ImuBias = field(default_factory=ImuBias)
    delta_R: np.ndarray = field(default_factory=lambda: np.eye(3))
    delta_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt_total: float = 0.0
    cov: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))
    J_dR_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_dv_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_dv_dba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_dp_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_dp_dba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    num_samples: int = 0

    def integrate_measurement(self, gyro, accel, dt, noise):
        """Fold one sample of length dt into the deltas, covariance and Jacobians."""
        if not np.isfinite(dt) or dt <= 0:
            raise InvalidInputError(f'dt must be positive, got {dt}')
        gyro = as_vec3(gyro, 'gyro')
        accel = as_vec3(accel, 'accel')

        a = accel - self.bias_lin.accel
        w = gyro - self.bias_lin.gyro
        dR = self.delta_R
        a_hat = hat(a)
        step = exp_so3(w * dt)
        Jr = right_jacobian(w * dt)
        dt2 = dt * dt

        A = np.eye(9)
        A[DPHI, DPHI] = step.T
        A[DV, DPHI] = -dR @ a_hat * dt
        A[DP, DPHI] = -0.5 * dR @ a_hat * dt2
        A[DP, DV] = np.eye(3) * dt
        B = np.zeros((9, 6))
        B[DPHI, 0:3] = Jr * dt
        B[DV, 3:6] = dR * dt
        B[DP, 3:6] = 0.5 * dR * dt2
        cov = A @ self.cov @ A.T + B @ noise.measurement_covariance(dt) @ B.T
        self.cov = 0.5 * (cov + cov.T)

        # Bias Jacobians use the rotation before this step.
        self.J_dp_dba = self.J_dp_dba + self.J_dv_dba * dt - 0.5 * dR * dt2
        self.J_dp_dbg = self.J_dp_dbg + self.J_dv_dbg * dt - 0.5 * dR @ a_hat @ self.J_dR_dbg * dt2
        self.J_dv_dba = self.J_dv_dba - dR * dt
        self.J_dv_dbg = self.J_dv_dbg - dR @ a_hat @ self.J_dR_dbg * dt
        self.J_dR_dbg = step.T @ self.J_dR_dbg - Jr * dt

        self.delta_p = self.delta_p + self.delta_v * dt + 0.5 * dR @ a * dt2
        self.delta_v = self.delta_v + dR @ a * dt
        self.delta_R = normalize_rotation(dR @ step)
        self.dt_total += dt
        self.num_samples += 1
        return self


def integrate(pre, sample, dt, noise):
    """Integrate one ImuSample into pre (in place) and return it."""
    return pre.integrate_measurement(sample.gyro, sample.accel, dt, noise)


def sample_intervals(samples, end_time=None):
    """Pair each sample with its interval up to the next timestamp (or end_time)."""
    pairs = []
    for k, sample in enumerate(samples):
        t_next = samples[k + 1].timestamp if k + 1 < len(samples) else end_time
        if t_next is None:
            break
        dt = t_next - sample.timestamp
        if dt <= 0:
            raise InvalidInputError(
                f'IMU timestamps must be strictly increasing (t={sample.timestamp})')
        pairs.append((sample, dt))
    return pairs


def preintegrate(stream, bias, noise):
    """Preintegrate a list of (ImuSample, dt) at the given bias."""
    pre = PreintegratedImu(bias_lin=bias)
    for sample, dt in stream:
        integrate(pre, sample, dt, noise)
    return pre


def covariance_batch_oracle(stream, bias, noise):
    """
    Covariance of the preintegrated noise from the explicit (non-recursive)
    linear map of every discrete noise sample onto [dphi, dv, dp].
    """
    K = len(stream)
    if K == 0:
        return np.zeros((9, 9))

    # Rotation at the start of each step, plus the final one.
    Rs = [np.eye(3)]
    acc = []
    G = []
    dts = np.empty(K)
    for k, (sample, dt) in enumerate(stream):
        if dt <= 0:
            raise InvalidInputError(f'dt must be positive, got {dt}')
        w = as_vec3(sample.gyro) - bias.gyro
        a = as_vec3(sample.accel) - bias.accel
        R_next = Rs[-1] @ exp_so3(w * dt)
        G.append(R_next @ right_jacobian(w * dt) * dt)
        acc.append(a)
        dts[k] = dt
        Rs.append(R_next)
    R_end = Rs[-1]

    # D_k maps world-aligned rotation noise at step k into the velocity error.
    D = [-Rs[k] @ hat(acc[k]) @ Rs[k].T for k in range(K)]
    tail_time = np.concatenate([np.cumsum(dts[::-1])[::-1][1:], [0.0]])

    cov = np.zeros((9, 9))
    suffix_v = np.zeros((3, 3))
    suffix_p = np.zeros((3, 3))
    for m in range(K - 1, -1, -1):
        M = np.zeros((9, 6))
        M[DPHI, 0:3] = R_end.T @ G[m]
        M[DV, 0:3] = suffix_v @ G[m]
        M[DP, 0:3] = suffix_p @ G[m]
        M[DV, 3:6] = Rs[m] * dts[m]
        M[DP, 3:6] = Rs[m] * (dts[m] * tail_time[m] + 0.5 * dts[m] ** 2)
        cov += M @ noise.measurement_covariance(dts[m]) @ M.T
        suffix_v = suffix_v + D[m] * dts[m]
        suffix_p = suffix_p + D[m] * (dts[m] * tail_time[m] + 0.5 * dts[m] ** 2)
    return 0.5 * (cov + cov.T)


def bias_corrected_delta(pre, new_bias):
    """First-order update of the deltas to a new bias estimate."""
    db = new_bias - pre.bias_lin
    dbg, dba = db.gyro, db.accel
    delta_R = normalize_rotation(pre.delta_R @ exp_so3(pre.J_dR_dbg @ dbg))
    delta_v = pre.delta_v + pre.J_dv_dbg @ dbg + pre.J_dv_dba @ dba
    delta_p = pre.delta_p + pre.J_dp_dbg @ dbg + pre.J_dp_dba @ dba
    return delta_R, delta_v, delta_p


def predict(state_i, pre, gravity=GRAVITY):
    """Propagate state_i through the preintegrated interval."""
    gravity = as_vec3(gravity, 'gravity')
    dR, dv, dp = bias_corrected_delta(pre, state_i.bias)
    T = pre.dt_total
    R_i, v_i, p_i = state_i.rotation, state_i.velocity, state_i.position
    return NavState(
        normalize_rotation(R_i @ dR),
        p_i + v_i * T + 0.5 * gravity * T * T + R_i @ dp,
        v_i + gravity * T + R_i @ dv,
        state_i.bias,
    )


def integrate_batch(gyro, accel, dts, bias, gyro_noise=None, accel_noise=None):
    """
    Vectorized preintegration of many realizations of one stream.

    gyro, accel: (K, 3) measurements; gyro_noise / accel_noise: optional
    (S, K, 3) additive noise. Returns delta_R (S, 3, 3), delta_v (S, 3) and
    delta_p (S, 3).
    """
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    dts = np.asarray(dts, dtype=float)
    K = gyro.shape[0]
    if gyro_noise is None and accel_noise is None:
        S = 1
    else:
        S = (gyro_noise if gyro_noise is not None else accel_noise).shape[0]
    gyro_noise = np.zeros((S, K, 3)) if gyro_noise is None else np.asarray(gyro_noise)
    accel_noise = np.zeros((S, K, 3)) if accel_noise is None else np.asarray(accel_noise)

    dR = np.broadcast_to(np.eye(3), (S, 3, 3)).copy()
    dv = np.zeros((S, 3))
    dp = np.zeros((S, 3))
    for k in range(K):
        dt = dts[k]
        w = gyro[k] - bias.gyro + gyro_noise[:, k]
        a = accel[k] - bias.accel + accel_noise[:, k]
        Ra = np.einsum('sij,sj->si', dR, a)
        dp = dp + dv * dt + 0.5 * Ra * dt * dt
        dv = dv + Ra * dt
        dR = dR @ exp_so3_many(w * dt)
    return dR, dv, dp

