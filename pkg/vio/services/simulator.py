"""
Synthetic visual-inertial world: circular trajectory with a vertical sinusoid,
IMU synthesis with random-walk biases, and wall landmarks seen by one camera.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from vio.exceptions import InvalidInputError
from vio.services.factors import MIN_DEPTH, CameraModel, LandmarkTrack, Observation
from vio.services.liealg import Pose, exp_so3, normalize_rotation
from vio.services.preintegration import GRAVITY, ImuNoiseModel, ImuSample
from vio.services.state import ImuBias, NavState

logger = logging.getLogger(__name__)

# Camera looks outward from the circle: camera z = -body y, image y = -body z.
BODY_FROM_CAMERA_ROTATION = np.array([
    [-1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, -1.0, 0.0],
])

DEFAULT_NOISE = ImuNoiseModel(
    gyro_noise_density=0.0007,
    accel_noise_density=0.019,
    gyro_bias_density=0.0004,
    accel_bias_density=0.012,
)


@dataclass(frozen=True)
class TrajectoryParams:
    radius: float = 3.0
    duration: float = 120.0
    path_length: float = 120.0
    angular_rate: float = None
    vertical_amplitude: float = 0.5
    vertical_frequency: float = 0.1
    height: float = 1.5

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError('trajectory radius must be positive')
        if self.duration <= 0:
            raise InvalidInputError('trajectory duration must be positive')

    def length(self, angular_rate):
        """Path length over the full duration for a given angular rate."""
        k = 2.0 * np.pi * self.vertical_frequency
        planar = self.radius * angular_rate

        def speed(t):
            return np.hypot(planar, self.vertical_amplitude * k * np.cos(k * t))

        return quad(speed, 0.0, self.duration, limit=200)[0]

    def resolved_angular_rate(self):
        """Explicit angular rate, or the one whose path covers path_length."""
        if self.angular_rate is not None:
            return float(self.angular_rate)
        upper = self.path_length / (self.radius * self.duration)
        if self.length(0.0) >= self.path_length:
            raise InvalidInputError('vertical motion alone exceeds the requested path length')
        return brentq(lambda w: self.length(w) - self.path_length, 0.0, upper, xtol=1e-14)


@dataclass(frozen=True)
class SimConfig:
    noise: ImuNoiseModel = DEFAULT_NOISE
    imu_rate: float = 200.0
    keyframe_rate: float = 2.5
    pixel_sigma: float = 1.0
    max_obs_per_frame: int = 50
    seed: int = 0
    landmark_count: int = 800
    room_size: float = 10.0
    landmark_height: tuple = (0.0, 4.0)
    initial_bias_sigma: float = 0.02
    gravity: tuple = tuple(GRAVITY)
    focal: float = 315.0
    principal_point: tuple = (320.0, 240.0)
    image_size: tuple = (640, 480)
    noise_free: bool = False

    def __post_init__(self):
        if self.imu_rate < self.keyframe_rate or self.keyframe_rate <= 0:
            raise InvalidInputError('imu_rate must be at least keyframe_rate (> 0)')
        ratio = self.imu_rate / self.keyframe_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidInputError('imu_rate / keyframe_rate must be an integer')
        if self.max_obs_per_frame < 1:
            raise InvalidInputError('max_obs_per_frame must be positive')

    @property
    def samples_per_keyframe(self):
        return int(round(self.imu_rate / self.keyframe_rate))

    def camera(self):
        width, height = self.image_size
        return CameraModel(
            focal=self.focal,
            principal_point=tuple(self.principal_point),
            body_from_camera=Pose(BODY_FROM_CAMERA_ROTATION, np.zeros(3)),
            width=width,
            height=height,
        )


@dataclass
class SimDataset:
    """Ground truth and measurements of one simulated run."""
    params: TrajectoryParams
    config: SimConfig
    keyframe_times: np.ndarray
    states: list
    imu_samples: list
    bias_trajectory: np.ndarray
    tracks: list
    landmarks: np.ndarray
    camera: CameraModel = None
    extra: dict = field(default_factory=dict)

    @property
    def num_keyframes(self):
        return len(self.states)

    @property
    def imu_period(self):
        return 1.0 / self.config.imu_rate

    def stream(self, k):
        """(ImuSample, dt) pairs between keyframes k and k+1."""
        r = self.config.samples_per_keyframe
        dt = self.imu_period
        return [(s, dt) for s in self.imu_samples[k * r:(k + 1) * r]]

    def streams(self):
        return [self.stream(k) for k in range(self.num_keyframes - 1)]

    @property
    def usable_tracks(self):
        return [t for t in self.tracks if len(t) >= 2]


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def analytic_state(params, t, angular_rate=None):
    """(R, p, v, body omega, world acceleration) at time t."""
    w = params.resolved_angular_rate() if angular_rate is None else angular_rate
    r, A = params.radius, params.vertical_amplitude
    k = 2.0 * np.pi * params.vertical_frequency
    theta = w * t
    c, s = np.cos(theta), np.sin(theta)
    position = np.array([r * c, r * s, params.height + A * np.sin(k * t)])
    velocity = np.array([-r * w * s, r * w * c, A * k * np.cos(k * t)])
    accel = np.array([-r * w * w * c, -r * w * w * s, -A * k * k * np.sin(k * t)])
    # Yaw tangent to the circle; R^T dR/dt = hat([0, 0, w]).
    rotation = _rot_z(theta + 0.5 * np.pi)
    omega = np.array([0.0, 0.0, w])
    return rotation, position, velocity, omega, accel


def _rngs(seed):
    names = ('imu', 'bias', 'landmarks', 'observations')
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))))


def true_imu_signals(params, config):
    """Bias- and noise-free body rate and specific force at every sample time (M x 3 each)."""
    w = params.resolved_angular_rate()
    dt = 1.0 / config.imu_rate
    count = int(round(params.duration * config.imu_rate))
    gravity = np.asarray(config.gravity, dtype=float)
    omega = np.empty((count, 3))
    specific = np.empty((count, 3))
    for k in range(count):
        R, _, _, omega[k], accel = analytic_state(params, k * dt, w)
        specific[k] = R.T @ (accel - gravity)
    return omega, specific


def discrete_trajectory(params, config, omega=None, specific=None):
    """
    Rotation, position and velocity at every sample index 0..M, obtained by
    stepping the discrete IMU model from the analytic state at t=0 with the
    true signals. Keyframe ground truth is read from this trajectory, so a
    noise-free stream reproduces it up to round-off.
    """
    if omega is None or specific is None:
        omega, specific = true_imu_signals(params, config)
    dt = 1.0 / config.imu_rate
    gravity = np.asarray(config.gravity, dtype=float)
    R, p, v, _, _ = analytic_state(params, 0.0)
    count = len(omega)
    rotations = np.empty((count + 1, 3, 3))
    positions = np.empty((count + 1, 3))
    velocities = np.empty((count + 1, 3))
    rotations[0], positions[0], velocities[0] = R, p, v
    for k in range(count):
        a = R @ specific[k]
        p = p + v * dt + 0.5 * (gravity + a) * dt * dt
        v = v + (gravity + a) * dt
        R = normalize_rotation(R @ exp_so3(omega[k] * dt))
        rotations[k + 1], positions[k + 1], velocities[k + 1] = R, p, v
    return rotations, positions, velocities


def synthesize_imu(params, config, rng=None, bias_rng=None, signals=None):
    """Noisy IMU stream covering the trajectory and the true bias per sample (M x 6)."""
    if rng is None or bias_rng is None:
        streams = _rngs(config.seed)
        rng, bias_rng = streams['imu'], streams['bias']
    noise = config.noise
    dt = 1.0 / config.imu_rate
    omega, specific = signals if signals is not None else true_imu_signals(params, config)
    count = len(omega)

    biases = np.zeros((count, 6))
    if not config.noise_free:
        biases[0] = bias_rng.normal(0.0, config.initial_bias_sigma, 6)
        walk_std = np.concatenate([
            np.full(3, noise.gyro_bias_density * np.sqrt(dt)),
            np.full(3, noise.accel_bias_density * np.sqrt(dt)),
        ])
        steps = bias_rng.normal(0.0, 1.0, (count - 1, 6)) * walk_std
        biases[1:] = biases[0] + np.cumsum(steps, axis=0)
        white = rng.normal(0.0, 1.0, (count, 6)) * np.concatenate([
            np.full(3, noise.gyro_noise_density / np.sqrt(dt)),
            np.full(3, noise.accel_noise_density / np.sqrt(dt)),
        ])
    else:
        white = np.zeros((count, 6))

    gyro = omega + biases[:, :3] + white[:, :3]
    accel = specific + biases[:, 3:] + white[:, 3:]
    samples = [ImuSample(k * dt, gyro[k], accel[k]) for k in range(count)]
    return samples, biases


def generate_landmarks(config, rng):
    """Landmarks spread evenly over the four walls of a square room."""
    half = 0.5 * config.room_size
    low, high = config.landmark_height
    per_wall = np.full(4, config.landmark_count // 4)
    per_wall[:config.landmark_count % 4] += 1
    points = []
    for wall, n in enumerate(per_wall):
        along = rng.uniform(-half, half, n)
        z = rng.uniform(low, high, n)
        fixed = np.full(n, half if wall % 2 == 0 else -half)
        if wall < 2:
            points.append(np.column_stack([fixed, along, z]))
        else:
            points.append(np.column_stack([along, fixed, z]))
    return np.vstack(points)


def keyframe_times(params, config):
    count = params.duration * config.keyframe_rate
    if abs(count - round(count)) > 1e-9:
        raise InvalidInputError('duration x keyframe_rate must be an integer keyframe count')
    return np.arange(int(round(count))) / config.keyframe_rate


def ground_truth_states(params, config, biases=None, trajectory=None):
    """Keyframe states sampled from the discrete trajectory, with the true bias at each keyframe."""
    if trajectory is None:
        trajectory = discrete_trajectory(params, config)
    rotations, positions, velocities = trajectory
    r = config.samples_per_keyframe
    states = []
    for k in range(len(keyframe_times(params, config))):
        i = k * r
        bias = ImuBias() if biases is None else ImuBias.from_vector(biases[min(i, len(biases) - 1)])
        states.append(NavState(rotations[i].copy(), positions[i].copy(), velocities[i].copy(), bias))
    return states


def synthesize_tracks(params, config, cam, landmarks=None, rng=None, states=None):
    """Per-keyframe visible observations, subsampled and corrupted by pixel noise."""
    if rng is None or landmarks is None:
        streams = _rngs(config.seed)
        if landmarks is None:
            landmarks = generate_landmarks(config, streams['landmarks'])
        rng = rng or streams['observations']
    if states is None:
        states = ground_truth_states(params, config)

    R_bc = cam.body_from_camera.rotation
    p_bc = cam.body_from_camera.translation
    cx, cy = cam.principal_point
    tracks = {}
    for k, state in enumerate(states):
        p_b = (landmarks - state.position) @ state.rotation
        p_c = (p_b - p_bc) @ R_bc
        depth = p_c[:, 2]
        front = depth > MIN_DEPTH
        u = np.full(len(landmarks), -1.0)
        v = np.full(len(landmarks), -1.0)
        u[front] = cam.focal * p_c[front, 0] / depth[front] + cx
        v[front] = cam.focal * p_c[front, 1] / depth[front] + cy
        visible = np.flatnonzero(front & cam.in_image(u, v))
        if len(visible) > config.max_obs_per_frame:
            visible = np.sort(rng.choice(visible, config.max_obs_per_frame, replace=False))
        for idx in visible:
            pixel = np.array([u[idx], v[idx]])
            if not config.noise_free:
                pixel = pixel + rng.normal(0.0, config.pixel_sigma, 2)
            track = tracks.setdefault(int(idx), LandmarkTrack(int(idx)))
            track.observations.append(Observation(k, pixel, config.pixel_sigma))
    return [tracks[key] for key in sorted(tracks)]


def simulate(params, config):
    """Deterministic dataset for (params, config)."""
    rngs = _rngs(config.seed)
    signals = true_imu_signals(params, config)
    samples, biases = synthesize_imu(params, config, rngs['imu'], rngs['bias'], signals)
    trajectory = discrete_trajectory(params, config, *signals)
    states = ground_truth_states(params, config, biases, trajectory)
    landmarks = generate_landmarks(config, rngs['landmarks'])
    cam = config.camera()
    tracks = synthesize_tracks(params, config, cam, landmarks, rngs['observations'], states)
    logger.info('simulated %d keyframes, %d IMU samples, %d tracks (seed %d)',
                len(states), len(samples), len(tracks), config.seed)
    return SimDataset(
        params=params, config=config, keyframe_times=keyframe_times(params, config),
        states=states, imu_samples=samples, bias_trajectory=biases, tracks=tracks,
        landmarks=landmarks, camera=cam,
    )
