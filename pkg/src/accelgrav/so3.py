"""Minimal SO(3) helpers: exp/log maps and the inverse right Jacobian."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation

from .s2 import skew


def exp(phi):
    return Rotation.from_rotvec(np.asarray(phi, dtype=float)).as_matrix()


def log(R):
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    coef = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


def rot_x(angle):
    return exp([angle, 0.0, 0.0])


def rot_y(angle):
    return exp([0.0, angle, 0.0])


def rot_z(angle):
    return exp([0.0, 0.0, angle])


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) < tol
    )
