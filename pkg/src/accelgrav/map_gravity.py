"""Gravity factors for a keyframe map.

The odometry-frame gravity estimate is moved into each keyframe's body frame
when the keyframe is created.  In the map, that body-frame direction is
compared with the keyframe's own idea of "up", ``R_M^T e3``, which pulls roll
and pitch of the whole map back to vertical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import s2, so3
from .nlls import ROTATION, FactorGraph, GaussianFactor, PriorFactor, sqrt_information

_E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class BodyGravityFactor:
    mean_B: np.ndarray
    cov_B: np.ndarray
    keyframe_id: object = None


@dataclass(frozen=True, eq=False)
class KeyframeNode:
    id: object
    R_M: np.ndarray

    def __post_init__(self):
        if not so3.is_rotation(self.R_M, 1e-9):
            raise ValueError(f"keyframe {self.id!r}: R_M is not a rotation")


@dataclass(frozen=True, eq=False)
class RelativeRotation:
    """Measured ``R_i^T R_j`` between two keyframes."""

    i: object
    j: object
    Z: np.ndarray


def capture_factor(g, R_O, keyframe_id=None):
    """Body-frame gravity factor for a keyframe with odometry orientation ``R_O``.

    ``g`` is either an :class:`~accelgrav.graph.Estimate` or a
    ``(direction, tangent_covariance)`` pair in the odometry frame.
    """
    if hasattr(g, "g_cov"):
        x_O, cov = g.g, g.g_cov
    else:
        x_O, cov = g
    x_O = np.asarray(x_O, dtype=float)
    R_O = np.asarray(R_O, dtype=float)
    B_O = s2.tangent_basis(x_O)
    mean_B = s2.normalize(R_O.T @ x_O)
    J = s2.tangent_basis(mean_B).T @ R_O.T @ B_O
    cov_B = J @ np.asarray(cov, dtype=float) @ J.T
    return BodyGravityFactor(mean_B, 0.5 * (cov_B + cov_B.T), keyframe_id)


def gravity_error(R_M, factor, mode="exact"):
    """Error ``local(mean_B, R_M^T e3)`` and its 2x3 Jacobian for ``R_M Exp(d)``."""
    R_M = np.asarray(R_M, dtype=float)
    y = R_M.T @ _E3
    e = s2.local(factor.mean_B, y)
    _, J2 = s2.local_jacobians(factor.mean_B, y, mode)
    # (R Exp(d))^T e3 = y + [y]x d to first order
    J = J2 @ s2.tangent_basis(y).T @ s2.skew(y)
    return e, J


class GravityAlignmentFactor(GaussianFactor):
    def __init__(self, key, factor, mode="exact"):
        super().__init__((key,), sqrt_information(factor.cov_B))
        self.factor = factor
        self.mode = mode

    def evaluate(self, values):
        e, J = gravity_error(values[self.keys[0]], self.factor, self.mode)
        return e, [J]


class RelativeRotationFactor(GaussianFactor):
    """``Log(Z^T R_i^T R_j)`` with isotropic noise."""

    def __init__(self, constraint, sigma):
        super().__init__((constraint.i, constraint.j), np.eye(3) / sigma)
        self.Z = np.asarray(constraint.Z, dtype=float)

    def evaluate(self, values):
        Ri = values[self.keys[0]]
        Rj = values[self.keys[1]]
        e = so3.log(self.Z.T @ Ri.T @ Rj)
        Jinv = so3.right_jacobian_inv(e)
        return e, [-Jinv @ Rj.T @ Ri, Jinv]


@dataclass
class AlignmentResult:
    nodes: list
    initial_cost: float
    cost: float
    iterations: int


def chain_constraints(nodes):
    """Relative rotations between consecutive nodes, as the odometry saw them."""
    return [
        RelativeRotation(a.id, b.id, a.R_M.T @ b.R_M) for a, b in zip(nodes[:-1], nodes[1:])
    ]


def align_keyframes(
    nodes,
    constraints,
    gravity_factors,
    sigma_rel_deg=0.1,
    anchor_sigma=1.0,
    max_iters=50,
    tol=1e-12,
    mode="exact",
):
    """Re-estimate keyframe orientations against relative rotations and gravity.

    Gravity fixes roll and pitch only, so the first node carries a weak
    isotropic anchor (``anchor_sigma`` rad) to pin the heading.
    """
    nodes = list(nodes)
    if not nodes:
        return AlignmentResult([], 0.0, 0.0, 0)
    if not gravity_factors:
        raise ValueError("align_keyframes needs at least one gravity factor")
    graph = FactorGraph()
    ids = set()
    for n in nodes:
        graph.add_variable(n.id, ROTATION, np.array(n.R_M, dtype=float))
        ids.add(n.id)
    graph.add_factor(PriorFactor(nodes[0].id, ROTATION, nodes[0].R_M, anchor_sigma**2 * np.eye(3)))
    sigma = math.radians(sigma_rel_deg)
    for c in constraints:
        if c.i not in ids or c.j not in ids:
            raise KeyError(f"constraint references unknown keyframe {c.i!r} or {c.j!r}")
        graph.add_factor(RelativeRotationFactor(c, sigma))
    for f in gravity_factors:
        if f.keyframe_id not in ids:
            raise KeyError(f"gravity factor references unknown keyframe {f.keyframe_id!r}")
        graph.add_factor(GravityAlignmentFactor(f.keyframe_id, f, mode))
    res = graph.optimize(max_iters=max_iters, tol=tol)
    out = []
    for n in nodes:
        R = graph.value(n.id)
        # re-orthonormalise against accumulated round-off
        U, _, Vt = np.linalg.svd(R)
        out.append(KeyframeNode(n.id, U @ Vt))
    return AlignmentResult(out, res.initial_cost, res.cost, res.iterations)


def tilt_error(R_est, R_true):
    """Angle (rad) between the vertical axes implied by two orientations."""
    return s2.angle_between(np.asarray(R_est).T @ _E3, np.asarray(R_true).T @ _E3)
