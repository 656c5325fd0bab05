"""Unit-sphere (S^2) chart machinery for the gravity direction.

The chart origin is ``e3`` with tangent basis ``[e1 e2]``.  Every other point
``x`` gets its own chart through the shortest rotation ``R(x)`` taking ``e3``
to ``x``; retract/local are the origin maps conjugated by that rotation.

Tangent coordinates at ``x`` are always expressed in the basis
``B_x = R(x) [e1 e2]``.  All Jacobians in this module are with respect to
perturbations ``x -> retract(x, d)``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AntipodeError

ORIGIN = np.array([0.0, 0.0, 1.0])
ORIGIN_BASIS = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])

# Charts break down at -e3; refuse anything within this angle of it.
ANTIPODE_GUARD = 1e-3
_ANTIPODE_COS = -math.cos(ANTIPODE_GUARD)
_SMALL = 1e-9

# d(e3 x x)/dx_j as skew matrices, j = 0, 1, 2.
_DK = np.array(
    [
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],  # [e2]x
        [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]],  # [-e1]x
        np.zeros((3, 3)),
    ]
)


def skew(w):
    """Cross-product matrix, ``skew(w) @ u == np.cross(w, u)``."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def normalize(x):
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x)


def _check_chart(x):
    if x[2] <= _ANTIPODE_COS:
        raise AntipodeError(
            f"point {np.array2string(np.asarray(x), precision=6)} is within "
            f"{ANTIPODE_GUARD} rad of the chart antipode -e3"
        )


def exp_at_origin(t):
    """Map a 2-vector of geodesic coordinates at ``e3`` onto the sphere."""
    t = np.asarray(t, dtype=float)
    n = math.hypot(t[0], t[1])
    if n < _SMALL:
        sinc = 1.0 - n * n / 6.0
    else:
        sinc = math.sin(n) / n
    x = np.array([sinc * t[0], sinc * t[1], math.cos(n)])
    return x / np.linalg.norm(x)


def log_at_origin(x):
    """Inverse of :func:`exp_at_origin`; raises AntipodeError near ``-e3``."""
    x = np.asarray(x, dtype=float)
    _check_chart(x)
    r = math.hypot(x[0], x[1])
    theta = math.atan2(r, x[2])
    if r < _SMALL:
        scale = 1.0 + r * r / 6.0
    else:
        scale = theta / r
    return np.array([scale * x[0], scale * x[1]])


def rotation_to(x):
    """Shortest rotation taking ``e3`` to ``x``."""
    x = np.asarray(x, dtype=float)
    _check_chart(x)
    # I + K + K^2 / (1 + c) with K = [e3 x x]x, expanded
    a, b, c = x
    k = 1.0 / (1.0 + c)
    return np.array(
        [
            [1.0 - a * a * k, -a * b * k, a],
            [-a * b * k, 1.0 - b * b * k, b],
            [-a, -b, c],
        ]
    )


def tangent_basis(x):
    """Orthonormal 3x2 basis of the tangent plane at ``x`` (``R(x) [e1 e2]``)."""
    return rotation_to(x)[:, :2].copy()


def retract(x, t):
    y = rotation_to(x) @ exp_at_origin(t)
    return y / np.linalg.norm(y)


def local(x1, x2):
    """Tangent coordinates at ``x1`` of ``x2``; ``retract(x1, local(x1, x2)) == x2``."""
    return log_at_origin(rotation_to(x1).T @ np.asarray(x2, dtype=float))


def log_jacobian_at_origin(x):
    """Jacobian of ``log_at_origin`` at ``x`` w.r.t. ``retract(x, d)``.

    Radially the log grows one-for-one with the geodesic; tangentially it is
    stretched by ``theta / sin(theta)``.
    """
    x = np.asarray(x, dtype=float)
    v = x[:2]
    r2 = float(v @ v)
    if r2 < _SMALL * _SMALL:
        return np.eye(2)
    r = math.sqrt(r2)
    theta = math.atan2(r, x[2])
    Q = np.array([[v[0], -v[1]], [v[1], v[0]]])
    return Q @ np.diag([1.0, theta / r]) @ Q.T / r2


def rotation_derivatives(x):
    """``dR(x)/dx_j`` for j = 0, 1, 2, treating ``R`` as a function on R^3."""
    x = np.asarray(x, dtype=float)
    K = skew(np.array([-x[1], x[0], 0.0]))
    K2 = K @ K
    c = 1.0 / (1.0 + x[2])
    out = np.empty((3, 3, 3))
    for j in range(3):
        dK = _DK[j]
        out[j] = dK + (dK @ K + K @ dK) * c
    out[2] -= K2 * c * c
    return out


def local_jacobians(x1, x2, mode="exact"):
    """Jacobians of ``local(x1, x2)`` w.r.t. tangent perturbations of each point.

    ``mode="approx"`` returns the (-I, I) pair, adequate when the two points
    are within a few degrees of each other.
    """
    if mode == "approx":
        return -np.eye(2), np.eye(2)
    if mode != "exact":
        raise ValueError(f"unknown jacobian mode {mode!r}")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    R1 = rotation_to(x1)
    y = R1.T @ x2
    outer = log_jacobian_at_origin(y) @ tangent_basis(y).T
    dR = rotation_derivatives(x1)
    # column j is dR_j^T x2
    dy_dx1 = np.einsum("jki,k->ij", dR, x2)
    J1 = outer @ dy_dx1 @ R1[:, :2]
    J2 = outer @ R1.T @ tangent_basis(x2)
    return J1, J2


def angle_between(x1, x2):
    """Geodesic angle between two unit vectors, accurate at small angles."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return math.atan2(np.linalg.norm(np.cross(x1, x2)), float(x1 @ x2))
