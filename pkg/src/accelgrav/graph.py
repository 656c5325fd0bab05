"""Fixed-lag factor graph for accelerometer intrinsics and gravity.

Time is cut into intervals of length ``T_m``; each interval ``i`` owns a
sensitivity vector ``s_i`` (row-major 3x3), a bias ``b_i`` and a gravity
direction ``g_i`` on S^2.  Consecutive intervals are tied by random-walk
factors, every interval after the first carries weak magnitude priors, and
odometry factors attach to the interval containing their newest pose.
Intervals that fall entirely behind the lag ``T_l`` are marginalized.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import s2
from .errors import ConfigError, NonMonotonicTimeError
from .nlls import SPHERE, VECTOR, BetweenFactor, FactorGraph, GaussianFactor, PriorFactor
from .odometry import GRAVITY, PoseMeasurement, factor_from_streams, residual

log = logging.getLogger(__name__)

_DEG = math.pi / 180.0
_TIME_EPS = 1e-9


@dataclass
class EstimatorConfig:
    T_m: float = 3.0
    T_l: float = 60.0
    update_every: int = 5
    sigma_a: float = 0.05
    gravity_magnitude: float = GRAVITY
    # a priori knowledge on the first interval
    prior_bias_sigma: float = 0.5
    prior_S_diag_sigma: float = 0.02
    prior_S_offdiag_sigma: float = 0.01
    prior_gravity_sigma_deg: float = 10.0
    static_gravity_sigma_deg: float = 2.0
    static_hint_samples: int = 20
    # random walks: per sqrt(second) for S and b, per sqrt(keyframe) for gravity
    diffusion_bias: float = 0.005
    diffusion_S: float = 5e-5
    diffusion_gravity_deg: float = 0.05
    diffusion_gravity_floor_deg: float = 0.005
    # soft bounds on every later interval
    magnitude_S_sigma: float = 0.5
    magnitude_bias_sigma: float = 5.0
    # published estimates come from the newest interval with this many factors
    report_min_factors: int = 5
    jacobian_mode: str = "exact"
    max_iters: int = 25
    tol: float = 1e-9
    lambda_init: float = 1e-4

    def validate(self):
        positive = [
            "T_m", "sigma_a", "gravity_magnitude", "prior_bias_sigma", "prior_S_diag_sigma",
            "prior_S_offdiag_sigma", "prior_gravity_sigma_deg", "static_gravity_sigma_deg",
            "diffusion_bias", "diffusion_S", "diffusion_gravity_deg",
            "diffusion_gravity_floor_deg", "magnitude_S_sigma", "magnitude_bias_sigma",
        ]
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a positive finite number, got {v!r}")
        if not (self.T_l >= 3 * self.T_m):
            raise ConfigError(f"lag T_l={self.T_l} must be at least 3*T_m={3 * self.T_m}")
        if int(self.update_every) != self.update_every or self.update_every < 1:
            raise ConfigError(f"update_every must be a positive integer, got {self.update_every!r}")
        if int(self.static_hint_samples) != self.static_hint_samples or self.static_hint_samples < 1:
            raise ConfigError("static_hint_samples must be a positive integer")
        if int(self.report_min_factors) != self.report_min_factors or self.report_min_factors < 0:
            raise ConfigError("report_min_factors must be a non-negative integer")
        if self.jacobian_mode not in ("exact", "approx"):
            raise ConfigError(f"jacobian_mode must be 'exact' or 'approx', got {self.jacobian_mode!r}")
        if self.max_iters < 1 or self.tol <= 0 or self.lambda_init <= 0:
            raise ConfigError("solver settings must be positive")
        return self

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown estimator settings: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Estimate:
    t: float
    S: np.ndarray
    b: np.ndarray
    g: np.ndarray
    g_cov: np.ndarray
    cost: float = 0.0
    iterations: int = 0
    wall_time: float = 0.0
    interval_id: int = 0

    def gravity_vector(self, magnitude=GRAVITY):
        return magnitude * self.g


def static_gravity_hint(acc, R0):
    """Gravity direction from a static stretch of readings, assuming S = I and b = 0."""
    return s2.normalize(np.asarray(R0) @ np.mean(np.asarray(acc, dtype=float), axis=0))


class IntervalOdometry(GaussianFactor):
    """All odometry factors of one interval folded into square-root information form.

    The odometry error is linear in ``theta = (s, b, g)``, so the stacked,
    whitened rows ``[A | y]`` can be QR-compressed into a 15x15 triangle plus a
    constant without changing the cost anywhere.
    """

    def __init__(self, keys, gravity=GRAVITY):
        super().__init__(keys, np.eye(15))
        self.gravity = gravity
        self._Rt = np.zeros((15, 16))
        self.count = 0
        self.raw = []

    def add(self, f):
        L = np.linalg.inv(np.linalg.cholesky(f.sigma))
        rows = np.hstack([L @ f.M_s, L @ f.M_b, self.gravity * (L @ f.M_g), (L @ f.pos_term)[:, None]])
        R = np.linalg.qr(np.vstack([self._Rt, rows]), mode="r")
        self._Rt = R[:15]
        if R.shape[0] > 15:
            self.offset += 0.5 * float(R[15, 15] ** 2)
        self.count += 1
        self.raw.append(f)

    def linearize(self, values):
        s, b, g = (values[k] for k in self.keys)
        R = self._Rt[:, :15]
        r = R @ np.concatenate([s, b, g]) - self._Rt[:, 15]
        return r, [R[:, :9], R[:, 9:12], R[:, 12:15] @ s2.tangent_basis(g)]


@dataclass
class Interval:
    id: int
    keyframes: int = 0
    odometry: IntervalOdometry = None

    @property
    def keys(self):
        return (("s", self.id), ("b", self.id), ("g", self.id))


class IntrinsicsEstimator:
    """Online fixed-lag estimator; feed IMU samples and poses in time order.

    Single-writer: ``add_imu``, ``add_pose`` and ``update`` must be serialised
    by the caller.  Published :class:`Estimate` objects are immutable.
    """

    def __init__(self, config=None, gravity_hint=None):
        self.config = (config or EstimatorConfig()).validate()
        self.graph = FactorGraph()
        self.intervals = deque()
        self.records = []
        self.initial_gravity = None
        self.t_origin = None
        self.last_pose_t = None
        self.pose_count = 0
        self.factor_count = 0
        self.marginalized = 0
        self._imu_t = deque()
        self._imu_a = deque()
        self._imu_seen = 0
        self._hint_acc = []
        self._poses = deque(maxlen=3)
        if gravity_hint is not None:
            self._start(s2.normalize(gravity_hint), self.config.prior_gravity_sigma_deg)

    # -- graph construction ---------------------------------------------------
    def _start(self, g0, sigma_deg):
        c = self.config
        self.initial_gravity = np.array(g0, dtype=float)
        itv = self._new_interval(0, np.eye(3).ravel(), np.zeros(3), g0)
        s_sig = np.full((3, 3), c.prior_S_offdiag_sigma)
        np.fill_diagonal(s_sig, c.prior_S_diag_sigma)
        ks, kb, kg = itv.keys
        self.graph.add_factor(PriorFactor(ks, VECTOR, np.eye(3).ravel(), np.diag(s_sig.ravel() ** 2)))
        self.graph.add_factor(PriorFactor(kb, VECTOR, np.zeros(3), c.prior_bias_sigma**2 * np.eye(3)))
        self.graph.add_factor(
            PriorFactor(kg, SPHERE, g0, (sigma_deg * _DEG) ** 2 * np.eye(2), c.jacobian_mode)
        )

    def _new_interval(self, idx, s, b, g):
        itv = Interval(idx)
        ks, kb, kg = itv.keys
        self.graph.add_variable(ks, VECTOR, s)
        self.graph.add_variable(kb, VECTOR, b)
        self.graph.add_variable(kg, SPHERE, g)
        itv.odometry = IntervalOdometry(itv.keys, self.config.gravity_magnitude)
        self.graph.add_factor(itv.odometry)
        self.intervals.append(itv)
        return itv

    def rollover(self, new_id):
        """Open intervals up to ``new_id``, chaining diffusion and magnitude factors."""
        c = self.config
        while self.intervals[-1].id < new_id:
            prev = self.intervals[-1]
            ps, pb, pg = prev.keys
            itv = self._new_interval(
                prev.id + 1, self.graph.value(ps), self.graph.value(pb), self.graph.value(pg)
            )
            ks, kb, kg = itv.keys
            self.graph.add_factor(BetweenFactor(pb, kb, VECTOR, c.diffusion_bias**2 * c.T_m * np.eye(3)))
            self.graph.add_factor(BetweenFactor(ps, ks, VECTOR, c.diffusion_S**2 * c.T_m * np.eye(9)))
            if prev.keyframes > 0:
                var = (c.diffusion_gravity_deg * _DEG) ** 2 * prev.keyframes
            else:
                var = (c.diffusion_gravity_floor_deg * _DEG) ** 2
            self.graph.add_factor(BetweenFactor(pg, kg, SPHERE, var * np.eye(2), c.jacobian_mode))
            self.graph.add_factor(
                PriorFactor(ks, VECTOR, np.eye(3).ravel(), c.magnitude_S_sigma**2 * np.eye(9))
            )
            self.graph.add_factor(PriorFactor(kb, VECTOR, np.zeros(3), c.magnitude_bias_sigma**2 * np.eye(3)))
        return self

    def interval_index(self, t):
        return int(math.floor((t - self.t_origin) / self.config.T_m + _TIME_EPS))

    def _marginalize_before(self, now):
        c = self.config
        while len(self.intervals) > 1:
            oldest = self.intervals[0]
            end = self.t_origin + (oldest.id + 1) * c.T_m
            if end > now - c.T_l + _TIME_EPS:
                break
            self.graph.marginalize(list(oldest.keys))
            self.intervals.popleft()
            self.marginalized += 1

    # -- ingestion --------------------------------------------------------------
    def add_imu(self, t, a_tilde):
        t = float(t)
        if self._imu_t and t <= self._imu_t[-1]:
            raise NonMonotonicTimeError(f"IMU sample at t={t} does not follow t={self._imu_t[-1]}")
        self._imu_t.append(t)
        self._imu_a.append(np.asarray(a_tilde, dtype=float))
        if len(self._hint_acc) < self.config.static_hint_samples:
            self._hint_acc.append(np.asarray(a_tilde, dtype=float))

    def add_pose(self, pose: PoseMeasurement):
        """Ingest a pose; returns True when an update is due per ``update_every``."""
        if self.last_pose_t is not None:
            if pose.t < self.last_pose_t:
                raise NonMonotonicTimeError(f"pose at t={pose.t} precedes t={self.last_pose_t}")
            if pose.t - self.last_pose_t <= _TIME_EPS:
                log.warning("dropping duplicate pose at t=%.9f", pose.t)
                return False
        self.last_pose_t = pose.t
        if self.t_origin is None:
            self.t_origin = pose.t
            if not self.intervals:
                if self._hint_acc:
                    g0 = static_gravity_hint(self._hint_acc, pose.R)
                    self._start(g0, self.config.static_gravity_sigma_deg)
                else:
                    self._start(np.array([0.0, 0.0, 1.0]), self.config.prior_gravity_sigma_deg)
        idx = self.interval_index(pose.t)
        if idx > self.intervals[-1].id:
            self._marginalize_before(pose.t)
            self.rollover(idx)
        itv = self.intervals[-1]
        if pose.keyframe:
            itv.keyframes += 1
        self._poses.append(pose)
        if len(self._poses) == 3:
            self._prune_imu(self._poses[0].t)
            f = factor_from_streams(
                tuple(self._poses), np.fromiter(self._imu_t, float, len(self._imu_t)),
                np.array(self._imu_a), self.config.sigma_a, interval_id=itv.id,
            )
            if f is not None:
                itv.odometry.add(f)
                self.factor_count += 1
        self.pose_count += 1
        return self.pose_count % self.config.update_every == 0

    def _prune_imu(self, t_keep):
        # keep one sample at or before t_keep for interpolation
        while len(self._imu_t) > 1 and self._imu_t[1] <= t_keep + _TIME_EPS:
            self._imu_t.popleft()
            self._imu_a.popleft()

    # -- estimation ---------------------------------------------------------------
    def update(self):
        """Optimize the window, marginalize stale intervals and publish an estimate."""
        if not self.intervals:
            return None
        t_start = time.perf_counter()
        self._marginalize_before(self.last_pose_t)
        c = self.config
        res = self.graph.optimize(max_iters=c.max_iters, tol=c.tol, lambda_init=c.lambda_init)
        itv = self.report_interval()
        ks, kb, kg = itv.keys
        cov = self.graph.marginal_covariance(kg)
        est = Estimate(
            t=self.last_pose_t,
            S=self.graph.value(ks).reshape(3, 3).copy(),
            b=self.graph.value(kb).copy(),
            g=self.graph.value(kg).copy(),
            g_cov=cov,
            cost=res.cost,
            iterations=res.iterations,
            wall_time=time.perf_counter() - t_start,
            interval_id=itv.id,
        )
        self.records.append(est)
        return est

    def report_interval(self):
        """Newest live interval backed by enough odometry to stand on its own.

        A freshly opened interval mostly echoes its predecessor through the
        random-walk links, so it is skipped until it has gathered data.
        """
        for itv in reversed(self.intervals):
            if itv.odometry.count >= self.config.report_min_factors:
                return itv
        return self.intervals[-1]

    def current(self, interval_id=None):
        """Estimate held for one live interval (the reported one by default), without optimizing."""
        itv = self.report_interval() if interval_id is None else self._interval(interval_id)
        ks, kb, kg = itv.keys
        return Estimate(
            t=self.last_pose_t if self.last_pose_t is not None else 0.0,
            S=self.graph.value(ks).reshape(3, 3).copy(),
            b=self.graph.value(kb).copy(),
            g=self.graph.value(kg).copy(),
            g_cov=np.full((2, 2), np.nan),
            interval_id=itv.id,
        )

    def _interval(self, interval_id):
        for itv in self.intervals:
            if itv.id == interval_id:
                return itv
        raise KeyError(f"interval {interval_id} is not live")

    def gravity_covariance(self):
        return self.graph.marginal_covariance(self.report_interval().keys[2])

    def odometry_residuals(self, S, b, g):
        """Residuals of every live raw odometry factor at the given parameters."""
        out = []
        for itv in self.intervals:
            for f in itv.odometry.raw:
                out.append(residual(f, np.asarray(S).ravel(), b, g, self.config.gravity_magnitude))
        return np.array(out).reshape(-1, 3)

    @property
    def live_intervals(self):
        return len(self.intervals)


def run_estimator(imu_t, imu_a, poses, config=None, gravity_hint=None, on_update=None):
    """Drive an estimator through recorded streams.

    IMU samples are fed until the stream reaches each pose timestamp, the pose
    is added, and ``update`` runs whenever the cadence says so (and once at
    the end).  Returns the estimator.
    """
    est = IntrinsicsEstimator(config, gravity_hint)
    imu_t = np.asarray(imu_t, dtype=float)
    imu_a = np.asarray(imu_a, dtype=float)
    j = 0
    n = len(imu_t)
    for pose in poses:
        while j < n and (imu_t[j] <= pose.t + _TIME_EPS or (j > 0 and imu_t[j - 1] < pose.t - _TIME_EPS)):
            est.add_imu(imu_t[j], imu_a[j])
            j += 1
        if est.add_pose(pose):
            rec = est.update()
            if on_update is not None:
                on_update(rec)
    if est.pose_count % est.config.update_every != 0:
        rec = est.update()
        if on_update is not None:
            on_update(rec)
    return est
