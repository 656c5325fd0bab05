"""Synthetic trajectories with known accelerometer intrinsics.

Motion is a sequence of segments with constant linear jerk (inertial frame)
and constant angular acceleration (body frame).  Two truth models exist:

``verification``
    Inertial acceleration is held constant between IMU ticks and body
    angular velocity between pose ticks, and poses fall on IMU ticks.  The
    odometry factor's zero-order-hold quadrature and slerped orientations are
    then exact, so noise-free factors vanish at the true parameters.

``realistic``
    Continuous cubic positions, orientation integrated at 1 kHz, and pose
    timestamps optionally jittered off the IMU grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import so3
from .errors import ConfigError
from .odometry import GRAVITY, PoseMeasurement, slerp_orientations

_FINE_RATE = 1000.0


@dataclass
class ScenarioConfig:
    segments: list
    imu_rate: float = 100.0
    pose_rate: float = 10.0
    sigma_a: float = 0.05
    sigma_p: float = 0.01
    true_S: np.ndarray = field(default_factory=lambda: np.eye(3))
    true_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    true_g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))
    seed: int = 0
    mode: str = "verification"
    pose_jitter: float = 0.0
    anisotropic_axis: int | None = None
    anisotropic_factor: float = 10.0
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R0: np.ndarray = field(default_factory=lambda: np.eye(3))
    w0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drift_tilt_deg: float = 0.0
    keyframe_every: int = 1
    name: str = "custom"

    def __post_init__(self):
        self.segments = [
            (float(d), np.asarray(j, dtype=float), np.asarray(al, dtype=float))
            for d, j, al in self.segments
        ]
        for name in ("true_S", "true_b", "true_g", "p0", "v0", "a0", "R0", "w0"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def duration(self):
        return sum(d for d, _, _ in self.segments)

    def validate(self):
        if self.imu_rate <= 0 or self.pose_rate <= 0:
            raise ConfigError("rates must be positive")
        if not self.segments or any(d <= 0 for d, _, _ in self.segments):
            raise ConfigError("segments must be non-empty with positive durations")
        if abs(np.linalg.norm(self.true_g) - GRAVITY) > 0.01 * GRAVITY:
            raise ConfigError(f"|true_g| = {np.linalg.norm(self.true_g):.4f} is not within 1% of {GRAVITY}")
        if self.sigma_a < 0 or self.sigma_p < 0 or self.pose_jitter < 0:
            raise ConfigError("noise levels must be non-negative")
        if self.mode not in ("verification", "realistic"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        ratio = self.imu_rate / self.pose_rate
        if self.mode == "verification":
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError("verification mode needs imu_rate to be a multiple of pose_rate")
            if self.pose_jitter:
                raise ConfigError("verification mode does not allow pose jitter")
        if self.true_S.shape != (3, 3) or abs(np.linalg.det(self.true_S)) < 1e-6:
            raise ConfigError("true_S must be an invertible 3x3 matrix")
        if not so3.is_rotation(self.R0, 1e-9):
            raise ConfigError("R0 must be a rotation matrix")
        if int(self.keyframe_every) != self.keyframe_every or self.keyframe_every < 1:
            raise ConfigError("keyframe_every must be a positive integer")
        if self.anisotropic_axis not in (None, 0, 1, 2):
            raise ConfigError("anisotropic_axis must be 0, 1, 2 or None")
        return self


@dataclass(frozen=True, eq=False)
class Truth:
    imu_t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    pose_t: np.ndarray
    pose_p: np.ndarray
    pose_v: np.ndarray
    pose_R: np.ndarray
    config: ScenarioConfig


@dataclass(frozen=True, eq=False)
class Dataset:
    imu_t: np.ndarray
    imu_acc: np.ndarray
    poses: list
    truth: Truth


# -- continuous segment model ------------------------------------------------------


class _Segments:
    def __init__(self, cfg):
        self.starts = [0.0]
        self.jerk = []
        self.alpha = []
        p, v, a, w = cfg.p0.copy(), cfg.v0.copy(), cfg.a0.copy(), cfg.w0.copy()
        self.state = [(p, v, a, w)]
        for d, j, al in cfg.segments:
            p = p + v * d + a * d * d / 2 + j * d**3 / 6
            v = v + a * d + j * d * d / 2
            a = a + j * d
            w = w + al * d
            self.starts.append(self.starts[-1] + d)
            self.jerk.append(j)
            self.alpha.append(al)
            self.state.append((p, v, a, w))
        self.starts = np.array(self.starts)
        self.jerk = np.array(self.jerk)
        self.alpha = np.array(self.alpha)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.jerk) - 1)
        return k, t - self.starts[k]

    def kinematics(self, t):
        k, dt = self._locate(t)
        dt = dt[:, None]
        p0 = np.array([self.state[i][0] for i in k]).reshape(-1, 3)
        v0 = np.array([self.state[i][1] for i in k]).reshape(-1, 3)
        a0 = np.array([self.state[i][2] for i in k]).reshape(-1, 3)
        j = self.jerk[k]
        p = p0 + v0 * dt + a0 * dt**2 / 2 + j * dt**3 / 6
        v = v0 + a0 * dt + j * dt**2 / 2
        a = a0 + j * dt
        return p, v, a

    def omega(self, t):
        k, dt = self._locate(t)
        w0 = np.array([self.state[i][3] for i in k]).reshape(-1, 3)
        return w0 + self.alpha[k] * dt[:, None]


def _grid(duration, rate):
    n = int(round(duration * rate))
    return np.arange(n + 1) / rate


def generate(cfg: ScenarioConfig) -> Truth:
    cfg.validate()
    seg = _Segments(cfg)
    T = cfg.duration
    imu_t = _grid(T, cfg.imu_rate)
    if cfg.mode == "verification":
        ratio = int(round(cfg.imu_rate / cfg.pose_rate))
        pose_idx = np.arange(0, len(imu_t), ratio)
        pose_t = imu_t[pose_idx]
        # acceleration held on the IMU grid, integrated exactly
        _, _, a_cont = seg.kinematics(imu_t)
        h = np.diff(imu_t)[:, None]
        a = a_cont
        dv = a[:-1] * h
        v = np.vstack([cfg.v0, cfg.v0 + np.cumsum(dv, axis=0)])
        dp = v[:-1] * h + a[:-1] * h * h / 2
        p = np.vstack([cfg.p0, cfg.p0 + np.cumsum(dp, axis=0)])
        # body rate held on the pose grid
        w_pose = seg.omega(pose_t)
        Rk = [cfg.R0]
        for k in range(len(pose_t) - 1):
            Rk.append(Rk[-1] @ so3.exp(w_pose[k] * (pose_t[k + 1] - pose_t[k])))
        Rk = np.array(Rk)
        R = np.empty((len(imu_t), 3, 3))
        for k in range(len(pose_t)):
            i0 = pose_idx[k]
            i1 = pose_idx[k + 1] if k + 1 < len(pose_t) else len(imu_t)
            dts = imu_t[i0:i1] - pose_t[k]
            R[i0:i1] = np.einsum("ij,njk->nik", Rk[k], _exp_many(w_pose[k] * dts[:, None]))
        return Truth(imu_t, p, v, a, R, pose_t, p[pose_idx], v[pose_idx], R[pose_idx], cfg)

    p, v, a = seg.kinematics(imu_t)
    fine_t = _grid(T, _FINE_RATE)
    h = 1.0 / _FINE_RATE
    w_mid = seg.omega(fine_t[:-1] + h / 2)
    steps = _exp_many(w_mid * h)
    Rf = np.empty((len(fine_t), 3, 3))
    Rf[0] = cfg.R0
    for n in range(len(steps)):
        Rf[n + 1] = Rf[n] @ steps[n]
    R = slerp_orientations(fine_t, Rf, imu_t)
    nominal = _grid(T, cfg.pose_rate)
    if cfg.pose_jitter > 0:
        jit = np.random.default_rng([cfg.seed, 1]).uniform(-cfg.pose_jitter, cfg.pose_jitter, nominal.size)
        pose_t = np.clip(nominal + jit, 0.0, T)
        pose_t = np.maximum.accumulate(pose_t)
    else:
        pose_t = nominal
    pp, pv, _ = seg.kinematics(pose_t)
    pR = slerp_orientations(fine_t, Rf, pose_t)
    return Truth(imu_t, p, v, a, R, pose_t, pp, pv, pR, cfg)


def _exp_many(phis):
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(np.asarray(phis, dtype=float).reshape(-1, 3)).as_matrix()


def drift_rotation(t, cfg):
    """Pitch drift injected into emitted poses at time ``t``."""
    if not cfg.drift_tilt_deg:
        return np.eye(3)
    return so3.rot_y(math.radians(cfg.drift_tilt_deg) * t / cfg.duration)


def pose_covariance(cfg):
    cov = cfg.sigma_p**2 * np.eye(3)
    if cfg.anisotropic_axis is not None:
        cov[cfg.anisotropic_axis, cfg.anisotropic_axis] *= cfg.anisotropic_factor
    return cov


def corrupt(truth: Truth, cfg: ScenarioConfig | None = None) -> Dataset:
    """Apply the accelerometer model and position noise to a truth trajectory."""
    cfg = truth.config if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed)
    n = len(truth.imu_t)
    w_a = rng.standard_normal((n, 3)) * cfg.sigma_a
    f = np.einsum("nji,nj->ni", truth.R, truth.a + cfg.true_g) + cfg.true_b + w_a
    acc = np.linalg.solve(cfg.true_S, f.T).T
    cov = pose_covariance(cfg)
    chol = np.linalg.cholesky(cov) if cfg.sigma_p > 0 else np.zeros((3, 3))
    w_p = rng.standard_normal((len(truth.pose_t), 3)) @ chol.T
    poses = []
    for k, t in enumerate(truth.pose_t):
        D = drift_rotation(t, cfg)
        poses.append(
            PoseMeasurement(
                t=float(t),
                p_tilde=D @ truth.pose_p[k] + w_p[k],
                R=D @ truth.pose_R[k],
                sigma_p=cov.copy(),
                keyframe=k % cfg.keyframe_every == 0,
            )
        )
    return Dataset(truth.imu_t.copy(), acc, poses, truth)


def simulate(cfg: ScenarioConfig) -> Dataset:
    return corrupt(generate(cfg), cfg)


# -- scenario library -------------------------------------------------------------


def random_intrinsics(rng, bias_range=0.3, diag_range=0.02, offdiag_range=0.01, tilt_deg=3.0):
    """Draw (S, b, g) in the ranges used by the synthetic experiments."""
    b = rng.uniform(-bias_range, bias_range, 3)
    S = rng.uniform(-offdiag_range, offdiag_range, (3, 3))
    np.fill_diagonal(S, 1.0 + rng.uniform(-diag_range, diag_range, 3))
    tilt = rng.uniform(0.0, math.radians(tilt_deg))
    az = rng.uniform(0.0, 2 * math.pi)
    axis = np.array([math.cos(az), math.sin(az), 0.0])
    g = GRAVITY * (so3.exp(tilt * axis) @ np.array([0.0, 0.0, 1.0]))
    return S, b, g


def excited_segments(rng, duration, jerk=(1.0, 4.0), alpha=(1.0, 3.0), phase=(0.4, 0.8)):
    """Axis-changing rotations and bounded translation.

    Each block of eight equal phases brings linear velocity and acceleration
    back to zero (so the platform stays in a box) and each consecutive pair
    of phases returns the body rate to zero after a net rotation about a
    fresh random axis.
    """
    jerk_signs = (1, -1, -1, 1, -1, 1, 1, -1)
    segments = []
    total = 0.0
    while total < duration - 1e-9:
        d = rng.uniform(*phase)
        jdir = rng.standard_normal(3)
        jvec = jdir / np.linalg.norm(jdir) * rng.uniform(*jerk)
        alphas = []
        for _ in range(4):
            adir = rng.standard_normal(3)
            alphas.append(adir / np.linalg.norm(adir) * rng.uniform(*alpha))
        for i, sgn in enumerate(jerk_signs):
            al = alphas[i // 2] * (1 if i % 2 == 0 else -1)
            dd = min(d, duration - total)
            if dd <= 1e-9:
                break
            segments.append((dd, sgn * jvec, al))
            total += dd
    return segments


def slow_yaw_segments(duration=60.0, turn_time=10.0):
    """Static, 180 deg yaw, pause, 180 deg yaw, static; rotation only about body z."""
    half = turn_time / 2.0
    alpha = math.pi / half**2
    z = np.zeros(3)
    ez = np.array([0.0, 0.0, 1.0])
    rest = duration - 5.0 - 2 * turn_time - 15.0
    if rest <= 0:
        raise ConfigError("slow_yaw needs a longer duration")
    return [
        (5.0, z, z),
        (half, z, alpha * ez),
        (half, z, -alpha * ez),
        (15.0, z, z),
        (half, z, alpha * ez),
        (half, z, -alpha * ez),
        (rest, z, z),
    ]


SCENARIOS = ("static", "slow_yaw", "excited", "drift_tilt")


def scenario(name, seed=0, **overrides):
    """Named scenario configuration; keyword overrides replace fields afterwards."""
    rng = np.random.default_rng([seed, 7])
    S, b, g = random_intrinsics(rng)
    duration = overrides.pop("duration", None)
    if name == "static":
        cfg = ScenarioConfig(
            segments=[(duration or 30.0, np.zeros(3), np.zeros(3))],
            true_S=S, true_b=b, true_g=g, seed=seed, name=name,
        )
    elif name == "slow_yaw":
        cfg = ScenarioConfig(
            segments=slow_yaw_segments(duration or 60.0),
            true_S=S, true_b=np.full(3, 0.3), true_g=g, seed=seed, name=name,
        )
    elif name == "excited":
        cfg = ScenarioConfig(
            segments=excited_segments(rng, duration or 120.0),
            true_S=S, true_b=b, true_g=g, seed=seed, name=name,
        )
    elif name == "drift_tilt":
        cfg = ScenarioConfig(
            segments=excited_segments(rng, duration or 60.0, alpha=(0.5, 1.5)),
            true_S=S, true_b=b, true_g=np.array([0.0, 0.0, GRAVITY]), seed=seed,
            drift_tilt_deg=3.0, name=name,
        )
    else:
        raise ConfigError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()
