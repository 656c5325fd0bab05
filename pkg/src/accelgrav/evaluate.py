"""Accuracy metrics for estimator runs against synthetic truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import s2
from .odometry import GRAVITY, _zoh_weights, slerp_orientations

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    S: np.ndarray
    b: np.ndarray
    g: np.ndarray  # unit direction

    @classmethod
    def prior(cls, g=(0.0, 0.0, 1.0)):
        return cls(np.eye(3), np.zeros(3), s2.normalize(g))


def gravity_error_deg(g_est, g_true):
    return math.degrees(s2.angle_between(s2.normalize(g_est), s2.normalize(g_true)))


def bias_rmse(b_est, b_true):
    d = np.asarray(b_est, dtype=float) - np.asarray(b_true, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def sensitivity_max_error(S_est, S_true):
    return float(np.abs(np.asarray(S_est) - np.asarray(S_true)).max())


def propagate(t0, p0, v0, imu_t, imu_acc, rots, t_end, intr, gravity=GRAVITY):
    """Position at ``t_end`` from ``(p0, v0)`` by ZOH double integration.

    ``rots`` holds the body orientation at each IMU time.  The samples must
    start at or before ``t0``.
    """
    a_I = np.einsum("nij,nj->ni", rots, imu_acc @ intr.S.T - intr.b) - gravity * intr.g
    w = _zoh_weights(imu_t, t0, t_end)
    return p0 + v0 * (t_end - t0) + w @ a_I


def _with_sample_at(imu_t, imu_acc, t):
    j = np.searchsorted(imu_t, t)
    if j < len(imu_t) and abs(imu_t[j] - t) <= _TIME_EPS:
        return imu_t, imu_acc
    if j > 0 and abs(imu_t[j - 1] - t) <= _TIME_EPS:
        return imu_t, imu_acc
    a = np.array([np.interp(t, imu_t, imu_acc[:, d]) for d in range(3)])
    return np.insert(imu_t, j, t), np.insert(imu_acc, j, a, axis=0)


def imu_prediction_deviation(
    imu_t, imu_acc, pose_t, pose_p, pose_R, start_v, intrinsics_at, horizon=0.5, gravity=GRAVITY
):
    """Distances between measured positions and IMU predictions ``horizon`` seconds ahead.

    Each pose with a partner ``horizon`` later starts a prediction from its
    measured position and the velocity ``start_v[k]``; ``intrinsics_at(t)``
    supplies the intrinsics in effect at the start time.
    """
    imu_t = np.asarray(imu_t, dtype=float)
    imu_acc = np.asarray(imu_acc, dtype=float)
    pose_t = np.asarray(pose_t, dtype=float)
    pose_R = np.asarray(pose_R, dtype=float)
    out = []
    for k, t0 in enumerate(pose_t):
        m = int(np.searchsorted(pose_t, t0 + horizon - 1e-6))
        if m >= len(pose_t) or abs(pose_t[m] - t0 - horizon) > 0.5 / max(len(pose_t), 1) + 1e-3:
            continue
        t1 = pose_t[m]
        if imu_t[0] > t0 + _TIME_EPS or imu_t[-1] < t1 - _TIME_EPS:
            continue
        lo = max(int(np.searchsorted(imu_t, t0 - _TIME_EPS)) - 1, 0)
        hi = int(np.searchsorted(imu_t, t1 + _TIME_EPS, side="right"))
        tw, aw = _with_sample_at(imu_t[lo:hi], imu_acc[lo:hi], t0)
        keep = tw >= t0 - _TIME_EPS
        tw, aw = tw[keep], aw[keep]
        rots = slerp_orientations(pose_t[k : m + 1], pose_R[k : m + 1], np.clip(tw, t0, t1))
        p1 = propagate(t0, pose_p[k], start_v[k], tw, aw, rots, t1, intrinsics_at(t0), gravity)
        out.append(float(np.linalg.norm(p1 - pose_p[m])))
    return np.array(out)


def rmse(x):
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else float("nan")


def causal_lookup(records, fallback):
    """``t -> Intrinsics`` from the newest record published at or before ``t``."""
    times = np.array([r.t for r in records], dtype=float)

    def at(t):
        j = int(np.searchsorted(times, t + _TIME_EPS, side="right")) - 1
        if j < 0:
            return fallback
        r = records[j]
        return Intrinsics(np.asarray(r.S).reshape(3, 3), np.asarray(r.b), s2.normalize(r.g))

    return at


def summarize(final, truth_S, truth_b, truth_g):
    """Final-estimate errors against the true intrinsics."""
    return {
        "gravity_error_deg": gravity_error_deg(final.g, truth_g),
        "bias_rmse": bias_rmse(final.b, truth_b),
        "bias_max_error": float(np.abs(np.asarray(final.b) - truth_b).max()),
        "sensitivity_max_error": sensitivity_max_error(np.asarray(final.S).reshape(3, 3), truth_S),
    }
