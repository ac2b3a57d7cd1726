"""
Keyframe state value types shared by preintegration, factors and the optimizer.
"""
from dataclasses import dataclass, field

import numpy as np

from vio.exceptions import InvalidInputError
from vio.services.liealg import (
    Pose, as_vec3, exp_so3, is_rotation, log_so3, normalize_rotation,
)

# Per-state tangent layout [dphi, dp, dv, dbg, dba].
STATE_DIM = 15
PHI = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)


def _zeros3():
    return np.zeros(3)


@dataclass(frozen=True)
class ImuBias:
    """Gyroscope and accelerometer biases."""
    gyro: np.ndarray = field(default_factory=_zeros3)
    accel: np.ndarray = field(default_factory=_zeros3)

    def __post_init__(self):
        object.__setattr__(self, 'gyro', as_vec3(self.gyro, 'gyro bias'))
        object.__setattr__(self, 'accel', as_vec3(self.accel, 'accel bias'))

    def __sub__(self, other):
        return ImuBias(self.gyro - other.gyro, self.accel - other.accel)

    def __add__(self, other):
        return ImuBias(self.gyro + other.gyro, self.accel + other.accel)

    def as_vector(self):
        return np.concatenate([self.gyro, self.accel])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:6])


@dataclass(frozen=True)
class NavState:
    """Keyframe state (R, p, v, b)."""
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    bias: ImuBias = field(default_factory=ImuBias)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if not is_rotation(R, tol=1e-6):
            raise InvalidInputError('NavState rotation is not a valid rotation matrix')
        object.__setattr__(self, 'rotation', normalize_rotation(R))
        object.__setattr__(self, 'position', as_vec3(self.position, 'position'))
        object.__setattr__(self, 'velocity', as_vec3(self.velocity, 'velocity'))

    @property
    def pose(self):
        return Pose(self.rotation, self.position)

    def with_bias(self, bias):
        return NavState(self.rotation, self.position, self.velocity, bias)

    def retract(self, delta):
        """Apply a 15-dim tangent step: R Exp(dphi), p + R dp, v + dv, b + db."""
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (STATE_DIM,):
            raise InvalidInputError(f'state step must have {STATE_DIM} components')
        R = self.rotation
        return NavState(
            normalize_rotation(R @ exp_so3(delta[PHI])),
            self.position + R @ delta[POS],
            self.velocity + delta[VEL],
            ImuBias(self.bias.gyro + delta[BG], self.bias.accel + delta[BA]),
        )

    def local(self, other):
        """Inverse of retract: the step taking self to other."""
        out = np.zeros(STATE_DIM)
        out[PHI] = log_so3(self.rotation.T @ other.rotation)
        out[POS] = self.rotation.T @ (other.position - self.position)
        out[VEL] = other.velocity - self.velocity
        out[BG] = other.bias.gyro - self.bias.gyro
        out[BA] = other.bias.accel - self.bias.accel
        return out
