"""
Experiment configuration: JSON file -> validated, defaults-filled settings.
"""
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from vio.exceptions import ConfigError
from vio.serializers import ExperimentConfigSerializer
from vio.services.preintegration import ImuNoiseModel
from vio.services.simulator import SimConfig, TrajectoryParams
from vio.services.state import BA, BG, PHI, POS, STATE_DIM, VEL

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 50
    rel_tol: float = 1e-8
    abs_tol: float = 1e-18
    prior_rotation_sigma: float = 0.01
    prior_position_sigma: float = 0.001
    prior_velocity_sigma: float = 0.01
    init_chunk: int = 10
    refine_iters: int = 3

    def prior_covariance(self, bias_sigma):
        sigmas = np.zeros(STATE_DIM)
        sigmas[PHI] = self.prior_rotation_sigma
        sigmas[POS] = self.prior_position_sigma
        sigmas[VEL] = self.prior_velocity_sigma
        # a zero initial bias spread still needs an invertible prior
        sigmas[BG] = max(bias_sigma, 1e-6)
        sigmas[BA] = max(bias_sigma, 1e-6)
        return np.diag(sigmas ** 2)


@dataclass(frozen=True)
class EvaluationSettings:
    segment_lengths: tuple = (10.0, 40.0, 90.0)
    nees_tail: float = 0.025
    max_overconfident_fraction: float = 0.05
    max_failed_fraction: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    trajectory: TrajectoryParams
    sim: SimConfig
    solver: SolverSettings
    evaluation: EvaluationSettings
    resolved: dict
    # file the config was loaded from, empty when built from a mapping
    source: str = ''

    @property
    def seed(self):
        return self.sim.seed

    @property
    def noise(self):
        return self.sim.noise

    def with_seed(self, seed):
        resolved = dict(self.resolved, seed=int(seed))
        return replace(self, sim=replace(self.sim, seed=int(seed)), resolved=resolved)

    def to_json(self):
        return json.dumps(self.resolved, indent=2, sort_keys=True)


def resolve_config(data):
    """Validate a config mapping and build the typed settings."""
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(serializer.errors)
    resolved = json.loads(json.dumps(serializer.validated_data))

    t, imu, cam = resolved['trajectory'], resolved['imu'], resolved['camera']
    marks, solver, ev = resolved['landmarks'], resolved['solver'], resolved['evaluation']
    trajectory = TrajectoryParams(
        radius=t['radius'], duration=t['duration'], path_length=t['path_length'],
        angular_rate=t['angular_rate'], vertical_amplitude=t['vertical_amplitude'],
        vertical_frequency=t['vertical_frequency'], height=t['height'],
    )
    noise = ImuNoiseModel(
        gyro_noise_density=imu['gyro_noise_density'],
        accel_noise_density=imu['accel_noise_density'],
        gyro_bias_density=imu['gyro_bias_density'],
        accel_bias_density=imu['accel_bias_density'],
    )
    sim = SimConfig(
        noise=noise, imu_rate=imu['rate'], keyframe_rate=cam['keyframe_rate'],
        pixel_sigma=cam['pixel_sigma'], max_obs_per_frame=cam['max_obs_per_frame'],
        seed=resolved['seed'], landmark_count=marks['count'], room_size=marks['room_size'],
        landmark_height=(marks['height_min'], marks['height_max']),
        initial_bias_sigma=imu['initial_bias_sigma'], gravity=tuple(imu['gravity']),
        focal=cam['focal'], principal_point=tuple(cam['principal_point']),
        image_size=tuple(cam['image_size']), noise_free=resolved['noise_free'],
    )
    return ExperimentConfig(
        trajectory=trajectory,
        sim=sim,
        solver=SolverSettings(**solver),
        evaluation=EvaluationSettings(
            segment_lengths=tuple(ev['segment_lengths']), nees_tail=ev['nees_tail'],
            max_overconfident_fraction=ev['max_overconfident_fraction'],
            max_failed_fraction=ev['max_failed_fraction'],
        ),
        resolved=resolved,
    )


def load_config(path):
    """Read and validate a JSON experiment config file."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError({'config': [f'File not found: {path}']})
    except json.JSONDecodeError as exc:
        raise ConfigError({'config': [f'{path}: invalid JSON at line {exc.lineno}: {exc.msg}']})
    config = replace(resolve_config(data), source=str(path))
    logger.debug('loaded config %s (seed %d)', path, config.seed)
    return config
