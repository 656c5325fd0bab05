"""Velocity-agnostic odometry factor.

Three position measurements ``p0, pk, pn`` and the accelerometer samples in
between give a linear constraint on the sensitivity matrix ``S`` (as the
row-major 9-vector ``s``), the bias ``b`` and the gravity vector ``g``::

    M_s s + M_b b + M_g g - (gamma1 p0 + gamma2 pk + gamma3 pn) = w

in which the unknown initial velocity has been eliminated.  Acceleration is
treated as a zero-order hold between consecutive IMU samples, which makes the
double-integration coefficients closed-form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import s2
from .errors import CoverageError, NonPSDError

log = logging.getLogger(__name__)

GRAVITY = 9.80665
MIN_IMU_SAMPLES = 4
_TIME_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    a_tilde: np.ndarray


@dataclass(frozen=True, eq=False)
class PoseMeasurement:
    t: float
    p_tilde: np.ndarray
    R: np.ndarray
    sigma_p: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    keyframe: bool = True


@dataclass(frozen=True, eq=False)
class IntegrationCoefficients:
    alpha_A: np.ndarray
    alpha_B: np.ndarray
    beta_A: float
    beta_B: float

    @property
    def alpha_C(self):
        return self.alpha_B / self.beta_B - self.alpha_A / self.beta_A

    @property
    def gamma(self):
        return np.array(
            [
                1.0 / self.beta_A - 1.0 / self.beta_B,
                -1.0 / self.beta_A,
                1.0 / self.beta_B,
            ]
        )


@dataclass(frozen=True, eq=False)
class OdometryFactor:
    M_s: np.ndarray
    M_b: np.ndarray
    M_g: np.ndarray
    pos_term: np.ndarray
    sigma: np.ndarray
    interval_id: int = 0
    t: float = 0.0


def invert_accel_model(a_tilde, R, S, b, g):
    """Inertial acceleration implied by a noise-free accelerometer reading."""
    return R @ (S @ a_tilde - b) - g


def accel_model(a_I, R, S, b, g, noise=None):
    """Accelerometer reading for a true inertial acceleration (forward model)."""
    f = R.T @ (a_I + g) + b
    if noise is not None:
        f = f + noise
    return np.linalg.solve(S, f)


def _zoh_weights(tau, t0, t):
    # Double-integration weight of each held sample from t0 up to t.
    ends = np.append(tau[1:], np.inf)
    start = np.maximum(tau, t0)
    stop = np.minimum(ends, t)
    h = np.clip(stop - start, 0.0, None)
    return 0.5 * h * h + h * (t - stop) * (h > 0)


def integration_coefficients(imu_times, t0, tk, tn):
    tau = np.asarray(imu_times, dtype=float)
    if not (t0 < tk < tn):
        raise ValueError(f"pose times must be increasing, got {t0}, {tk}, {tn}")
    if tau.size == 0 or tau[0] > t0 + _TIME_EPS or tau[-1] < tn - _TIME_EPS:
        raise CoverageError(
            f"IMU samples do not cover [{t0}, {tn}]"
            + (f" (have [{tau[0]}, {tau[-1]}])" if tau.size else "")
        )
    return IntegrationCoefficients(
        alpha_A=_zoh_weights(tau, t0, tk),
        alpha_B=_zoh_weights(tau, t0, tn),
        beta_A=tk - t0,
        beta_B=tn - t0,
    )


def _check_psd(sigma, what):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (3, 3) or not np.allclose(sigma, sigma.T, atol=1e-12, rtol=1e-9):
        raise NonPSDError(f"{what} is not a symmetric 3x3 matrix")
    lo = np.linalg.eigvalsh(sigma).min()
    if lo < -1e-12 * max(1.0, np.abs(sigma).max()):
        raise NonPSDError(f"{what} has negative eigenvalue {lo:.3e}")


def build_factor(poses, imu, orientations_at_imu, sigma_a, interval_id=0):
    """Odometry factor from three poses and the accelerometer samples spanning them.

    ``imu`` is a sequence of :class:`ImuSample`; ``orientations_at_imu`` holds
    the body-to-inertial rotation at each sample time.
    """
    p0, pk, pn = poses
    for p in poses:
        _check_psd(p.sigma_p, f"pose covariance at t={p.t}")
    times = np.array([m.t for m in imu], dtype=float)
    acc = np.array([m.a_tilde for m in imu], dtype=float).reshape(-1, 3)
    rots = np.asarray(orientations_at_imu, dtype=float).reshape(-1, 3, 3)
    if len(rots) != len(times):
        raise ValueError("need one orientation per IMU sample")
    coef = integration_coefficients(times, p0.t, pk.t, pn.t)
    return _assemble(coef, acc, rots, (p0, pk, pn), sigma_a, interval_id)


def _assemble(coef, acc, rots, poses, sigma_a, interval_id):
    c = coef.alpha_C
    gamma = coef.gamma
    wR = c[:, None, None] * rots  # alpha_C^i R^i
    # (I3 kron a^T) s == S a for row-major s, so M_s[:, 3j+k] = sum_i wR[:, :, j] a_k
    M_s = np.einsum("irj,ik->rjk", wR, acc).reshape(3, 9)
    M_b = -wR.sum(axis=0)
    M_g = -c.sum() * np.eye(3)
    p0, pk, pn = poses
    pos_term = gamma[0] * p0.p_tilde + gamma[1] * pk.p_tilde + gamma[2] * pn.p_tilde
    sigma = (
        sigma_a**2 * float(c @ c) * np.eye(3)
        + gamma[0] ** 2 * p0.sigma_p
        + gamma[1] ** 2 * pk.sigma_p
        + gamma[2] ** 2 * pn.sigma_p
    )
    sigma = 0.5 * (sigma + sigma.T)
    return OdometryFactor(
        M_s=M_s,
        M_b=M_b,
        M_g=M_g,
        pos_term=np.asarray(pos_term, dtype=float),
        sigma=sigma,
        interval_id=interval_id,
        t=pn.t,
    )


def residual(f, s, b, g, gravity=GRAVITY):
    """Factor error at ``(s, b, g)`` with ``g`` the unit gravity direction."""
    return f.M_s @ s + f.M_b @ b + gravity * (f.M_g @ g) - f.pos_term


def jacobians(f, g, gravity=GRAVITY):
    """Jacobians w.r.t. ``s``, ``b`` and the tangent perturbation of ``g``."""
    return f.M_s, f.M_b, gravity * f.M_g @ s2.tangent_basis(g)


def slerp_orientations(pose_times, pose_rots, times):
    """Spherically interpolate pose orientations at ``times``.

    Each query must lie inside ``[pose_times[0], pose_times[-1]]``.
    """
    pose_times = np.asarray(pose_times, dtype=float)
    times = np.asarray(times, dtype=float)
    idx = np.clip(np.searchsorted(pose_times, times, side="right") - 1, 0, len(pose_times) - 2)
    t_a = pose_times[idx]
    frac = (times - t_a) / (pose_times[idx + 1] - t_a)
    rots = np.asarray(pose_rots, dtype=float)
    Ra = rots[idx]
    Rb = rots[idx + 1]
    rel = Rotation.from_matrix(np.einsum("nji,njk->nik", Ra, Rb)).as_rotvec()
    step = Rotation.from_rotvec(frac[:, None] * rel).as_matrix()
    return np.einsum("nij,njk->nik", Ra, step)


def factor_from_streams(poses, imu_times, imu_acc, sigma_a, interval_id=0):
    """Build a factor from raw streams that need not be synchronised.

    Accelerometer values at pose timestamps that fall between IMU ticks are
    linearly interpolated; orientations at IMU times are slerped between the
    bracketing poses.  Returns ``None`` (with a warning) when fewer than
    ``MIN_IMU_SAMPLES`` samples support the factor.
    """
    p0, pk, pn = poses
    imu_times = np.asarray(imu_times, dtype=float)
    imu_acc = np.asarray(imu_acc, dtype=float)
    if imu_times.size == 0 or imu_times[0] > p0.t + _TIME_EPS or imu_times[-1] < pn.t - _TIME_EPS:
        raise CoverageError(f"IMU samples do not cover [{p0.t}, {pn.t}]")
    lo = np.searchsorted(imu_times, p0.t - _TIME_EPS, side="left")
    hi = np.searchsorted(imu_times, pn.t + _TIME_EPS, side="right")
    t_win = imu_times[lo:hi]
    a_win = imu_acc[lo:hi]
    extra_t = []
    for tp in (p0.t, pk.t, pn.t):
        j = np.searchsorted(t_win, tp)
        near = (j < len(t_win) and abs(t_win[j] - tp) <= _TIME_EPS) or (
            j > 0 and abs(t_win[j - 1] - tp) <= _TIME_EPS
        )
        if not near:
            extra_t.append(tp)
    if extra_t:
        extra_t = np.array(extra_t)
        extra_a = np.column_stack([np.interp(extra_t, imu_times, imu_acc[:, d]) for d in range(3)])
        t_all = np.concatenate([t_win, extra_t])
        a_all = np.concatenate([a_win, extra_a])
        order = np.argsort(t_all, kind="stable")
        t_win, a_win = t_all[order], a_all[order]
    keep = (t_win >= p0.t - _TIME_EPS) & (t_win <= pn.t + _TIME_EPS)
    t_win, a_win = t_win[keep], a_win[keep]
    if len(t_win) < MIN_IMU_SAMPLES:
        log.warning(
            "skipping odometry factor at t=%.6f: only %d IMU samples", pn.t, len(t_win)
        )
        return None
    t_query = np.clip(t_win, p0.t, pn.t)
    rots = slerp_orientations(
        [p0.t, pk.t, pn.t], np.stack([p0.R, pk.R, pn.R]), t_query
    )
    for p in poses:
        _check_psd(p.sigma_p, f"pose covariance at t={p.t}")
    # Snap the window onto the pose times so the ZOH clipping is exact.
    t_win = t_win.copy()
    t_win[0] = min(t_win[0], p0.t)
    coef = integration_coefficients(t_win, p0.t, pk.t, pn.t)
    return _assemble(coef, a_win, rots, poses, sigma_a, interval_id)
