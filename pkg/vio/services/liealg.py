"""
SO(3) / SE(3) primitives used across the estimator.

Rotations are plain 3x3 numpy arrays. All perturbations are right (body-frame)
perturbations: R <- R Exp(dphi), p <- p + R dp.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import polar

from vio.exceptions import InvalidInputError

# Below this angle the closed forms are replaced by their Taylor expansions.
SMALL_ANGLE = 1e-5
ORTHONORMAL_TOL = 1e-9
SKEW_TOL = 1e-9
# Log switches to the axis-extraction branch this close to pi.
NEAR_PI = 1e-4


def as_vec3(v, name='vector'):
    """Return v as a finite float array of shape (3,)."""
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise InvalidInputError(f'{name} must have 3 components, got shape {arr.shape}')
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f'{name} must be finite')
    return arr


def hat(v):
    """Skew-symmetric matrix v^ such that hat(a) @ b == cross(a, b)."""
    x, y, z = as_vec3(v)
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vee(S):
    """Inverse of hat; rejects matrices that are not antisymmetric."""
    S = np.asarray(S, dtype=float)
    if S.shape != (3, 3):
        raise InvalidInputError(f'vee expects a 3x3 matrix, got shape {S.shape}')
    if np.max(np.abs(S + S.T)) > SKEW_TOL:
        raise InvalidInputError('vee expects an antisymmetric matrix')
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def _vee_unchecked(S):
    return np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]]) * 0.5


def exp_so3(phi):
    """Exponential map (Rodrigues' formula)."""
    phi = as_vec3(phi, 'phi')
    theta = np.linalg.norm(phi)
    W = hat(phi)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W2
    return (np.eye(3)
            + (np.sin(theta) / theta) * W
            + ((1.0 - np.cos(theta)) / theta ** 2) * W2)


def log_so3(R):
    """Logarithm map; returns phi with |phi| in [0, pi]."""
    R = np.asarray(R, dtype=float)
    w = _vee_unchecked(R)
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)

    if theta < SMALL_ANGLE:
        # (R - R^T)/2 = sin(theta)/theta * phi^  ~  (1 - theta^2/6) phi^
        return w * (1.0 + theta ** 2 / 6.0)

    if np.pi - theta < NEAR_PI:
        # Symmetric part is cos(theta) I + (1 - cos(theta)) n n^T.
        S = 0.5 * (R + R.T)
        M = (S - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(M)))
        n = M[:, k] / np.sqrt(M[k, k])
        n = n / np.linalg.norm(n)
        if np.dot(w, n) < 0.0:
            n = -n
        return theta * n

    return (theta / s) * w


def right_jacobian(phi):
    """Right Jacobian J_r(phi) of SO(3)."""
    phi = as_vec3(phi, 'phi')
    theta = np.linalg.norm(phi)
    W = hat(phi)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W2 / 6.0
    return (np.eye(3)
            - ((1.0 - np.cos(theta)) / theta ** 2) * W
            + ((theta - np.sin(theta)) / theta ** 3) * W2)


def right_jacobian_inv(phi):
    """Inverse of the right Jacobian; defined for |phi| < pi."""
    phi = as_vec3(phi, 'phi')
    theta = np.linalg.norm(phi)
    if theta >= np.pi - 1e-6:
        raise InvalidInputError(f'right_jacobian_inv is undefined at |phi| = {theta:.6f} >= pi')
    W = hat(phi)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W2 / 12.0
    coeff = 1.0 / theta ** 2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coeff * W2


def is_rotation(R, tol=ORTHONORMAL_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.linalg.norm(R.T @ R - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def normalize_rotation(R):
    """Project R onto SO(3) (polar decomposition) when it has drifted."""
    R = np.asarray(R, dtype=float)
    if np.linalg.norm(R.T @ R - np.eye(3)) <= ORTHONORMAL_TOL:
        return R
    U, _ = polar(R)
    if np.linalg.det(U) < 0:
        raise InvalidInputError('matrix is a reflection, not a rotation')
    return U


@dataclass(frozen=True)
class Pose:
    """Rigid transform (R, p) mapping body coordinates to world coordinates."""
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def transform(self, x):
        return self.rotation @ x + self.translation

    def inverse_transform(self, x):
        return self.rotation.T @ (x - self.translation)

    def compose(self, other):
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


def retract_pose(T, dphi, dp):
    """SE(3) retraction (R Exp(dphi), p + R dp)."""
    dphi = as_vec3(dphi, 'dphi')
    dp = as_vec3(dp, 'dp')
    R = T.rotation
    return Pose(normalize_rotation(R @ exp_so3(dphi)), T.translation + R @ dp)


def local_pose(T0, T1):
    """Inverse of retract_pose: the (dphi, dp) taking T0 to T1."""
    dphi = log_so3(T0.rotation.T @ T1.rotation)
    dp = T0.rotation.T @ (T1.translation - T0.translation)
    return dphi, dp


# Vectorized helpers for Monte-Carlo sampling (arrays of shape (n, 3)).

def hat_many(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def exp_so3_many(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    W = hat_many(phi)
    W2 = W @ W
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe ** 2)
    return np.eye(3) + a * W + b * W2


def log_so3_many(R):
    """Vectorized log for rotations away from pi (Monte-Carlo error samples)."""
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.stack([
        R[..., 2, 1] - R[..., 1, 2],
        R[..., 0, 2] - R[..., 2, 0],
        R[..., 1, 0] - R[..., 0, 1],
    ], axis=-1)
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    small = theta < SMALL_ANGLE
    scale = np.where(small, 1.0 + theta ** 2 / 6.0, theta / np.where(small, 1.0, s))
    return w * scale[..., None]
