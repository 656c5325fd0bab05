import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from accelgrav import s2, so3
from accelgrav.errors import CoverageError, NonPSDError
from accelgrav.odometry import (
    GRAVITY,
    ImuSample,
    PoseMeasurement,
    accel_model,
    build_factor,
    factor_from_streams,
    integration_coefficients,
    invert_accel_model,
    jacobians,
    residual,
)
from accelgrav.synth import scenario, simulate
from conftest import central_diff, rel_err


def _pose(t, p=(0, 0, 0), R=None, cov=0.0):
    return PoseMeasurement(t, np.asarray(p, float), np.eye(3) if R is None else R, cov * np.eye(3))


def test_integration_coefficients_example():
    c = integration_coefficients([0.0, 1.0, 2.0], 0.0, 1.0, 2.0)
    assert np.allclose(c.alpha_A, [0.5, 0, 0])
    assert np.allclose(c.alpha_B, [1.5, 0.5, 0])
    assert c.beta_A == 1.0 and c.beta_B == 2.0
    assert np.allclose(c.gamma, [0.5, -1.0, 0.5])
    assert np.allclose(c.alpha_C, [0.25, 0.25, 0])


@given(
    st.lists(st.floats(0.001, 0.05), min_size=6, max_size=40),
    st.floats(-5, 5),
    st.floats(-3, 3),
)
def test_constant_acceleration_kinematics(steps, a, v0):
    tau = np.concatenate([[0.0], np.cumsum(steps)])
    t0, tn = tau[0], tau[-1]
    tk = tau[len(tau) // 2] + 0.3 * steps[len(tau) // 2 - 1] if len(tau) > 3 else tn / 2
    tk = min(max(tk, t0 + 1e-4), tn - 1e-4)
    c = integration_coefficients(tau, t0, tk, tn)
    assert abs(c.beta_A * v0 + c.alpha_A.sum() * a - (0.5 * a * (tk - t0) ** 2 + v0 * (tk - t0))) < 1e-9
    assert abs(c.beta_B * v0 + c.alpha_B.sum() * a - (0.5 * a * (tn - t0) ** 2 + v0 * (tn - t0))) < 1e-9
    assert abs(c.gamma.sum()) < 1e-12 * max(1.0, np.abs(c.gamma).max())


def test_integration_coefficients_errors():
    with pytest.raises(CoverageError):
        integration_coefficients([0.5, 1.0, 2.0], 0.0, 1.0, 2.0)
    with pytest.raises(CoverageError):
        integration_coefficients([0.0, 1.0, 1.5], 0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        integration_coefficients([0.0, 1.0, 2.0], 0.0, 2.0, 1.0)


def test_factor_covariance_example():
    imu = [ImuSample(t, np.zeros(3)) for t in (0.0, 1.0, 2.0)]
    poses = [_pose(t, cov=0.01) for t in (0.0, 1.0, 2.0)]
    f = build_factor(poses, imu, [np.eye(3)] * 3, sigma_a=0.1)
    assert np.allclose(f.sigma, 0.01625 * np.eye(3), atol=1e-15)


def test_static_factor_has_zero_residual(rng):
    S = np.eye(3) + rng.uniform(-0.02, 0.02, (3, 3))
    b = rng.uniform(-0.3, 0.3, 3)
    g = s2.normalize([0.02, -0.03, 1.0])
    R = so3.exp(rng.normal(size=3))
    acc = accel_model(np.zeros(3), R, S, b, GRAVITY * g)
    times = np.arange(11) * 0.01
    imu = [ImuSample(t, acc) for t in times]
    p = rng.normal(size=3)
    poses = [_pose(t, p, R, 1e-4) for t in (0.0, 0.05, 0.1)]
    f = build_factor(poses, imu, [R] * len(times), sigma_a=0.05)
    assert np.abs(residual(f, S.ravel(), b, g)).max() < 1e-12
    assert np.allclose(f.M_g, f.M_g[0, 0] * np.eye(3))
    delta = rng.normal(size=3)
    diff = residual(f, S.ravel(), b + delta, g) - residual(f, S.ravel(), b, g)
    assert np.allclose(diff, f.M_b @ delta, atol=1e-14)


def test_accel_model_inverse(rng):
    for _ in range(50):
        S = np.eye(3) + rng.uniform(-0.05, 0.05, (3, 3))
        b, a_I, gv = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        R = so3.exp(rng.normal(size=3))
        acc = accel_model(a_I, R, S, b, gv)
        assert np.allclose(invert_accel_model(acc, R, S, b, gv), a_I, atol=1e-10)


def _factors(ds, sigma_a=0.05):
    pose_t = np.array([p.t for p in ds.poses])
    out = []
    for k in range(2, len(ds.poses)):
        f = factor_from_streams(ds.poses[k - 2 : k + 1], ds.imu_t, ds.imu_acc, sigma_a)
        out.append(f)
    return out


@pytest.mark.parametrize("name", ["excited", "slow_yaw", "static"])
def test_noise_free_residuals_vanish(name):
    cfg = scenario(name, seed=4, sigma_a=0, sigma_p=0, duration={"excited": 31.0, "slow_yaw": 60.0, "static": 10.0}[name])
    ds = simulate(cfg)
    g = s2.normalize(cfg.true_g)
    worst = max(np.abs(residual(f, cfg.true_S.ravel(), cfg.true_b, g)).max() for f in _factors(ds))
    assert worst <= 1e-8


def test_velocity_agnostic():
    base = scenario("excited", seed=2, sigma_a=0, sigma_p=0, duration=10.0)
    shifted = scenario(
        "excited", seed=2, sigma_a=0, sigma_p=0, duration=10.0, v0=np.array([1.0, -2.0, 0.5])
    )
    g = s2.normalize(base.true_g)
    r0 = [residual(f, base.true_S.ravel(), base.true_b, g) for f in _factors(simulate(base))]
    r1 = [residual(f, base.true_S.ravel(), base.true_b, g) for f in _factors(simulate(shifted))]
    assert np.abs(np.array(r0) - np.array(r1)).max() <= 1e-10


def test_jacobians_match_differences(rng):
    ds = simulate(scenario("excited", seed=1, duration=20.0))
    fs = _factors(ds)
    for _ in range(1000):
        f = fs[rng.integers(len(fs))]
        s = (np.eye(3) + rng.uniform(-0.05, 0.05, (3, 3))).ravel()
        b = rng.uniform(-0.5, 0.5, 3)
        g = s2.retract(np.array([0, 0, 1.0]), rng.normal(scale=0.3, size=2))
        Js, Jb, Jg = jacobians(f, g)
        num_g = central_diff(lambda x: residual(f, s, b, x), g, s2.retract, 2)
        num_s = central_diff(lambda x: residual(f, x, b, g), s, lambda x, d: x + d, 9)
        num_b = central_diff(lambda x: residual(f, s, x, g), b, lambda x, d: x + d, 3)
        assert rel_err(Jg, num_g) < 1e-5
        assert rel_err(Js, num_s) < 1e-5
        assert rel_err(Jb, num_b) < 1e-5


def test_gravity_jacobian_structure():
    imu = [ImuSample(t, np.array([0.1, 0.2, 9.8])) for t in np.arange(6) * 0.02]
    f = build_factor([_pose(t, cov=1e-4) for t in (0.0, 0.04, 0.1)], imu, [np.eye(3)] * 6, 0.05)
    c = -f.M_g[0, 0]
    e3 = np.array([0, 0, 1.0])
    assert np.allclose(jacobians(f, e3)[2], -GRAVITY * c * np.eye(3)[:, :2])


def test_covariance_consistency_monte_carlo():
    rng = np.random.default_rng(5)
    n_imu = 21
    times = np.arange(n_imu) * 0.01
    R = np.array([so3.exp([0.0, 0.0, 0.3 * t]) for t in times])
    a_I = np.column_stack([np.sin(times), np.cos(2 * times), 0.1 * times])
    S = np.eye(3) + 0.01 * np.ones((3, 3))
    b = np.array([0.1, -0.2, 0.05])
    gv = GRAVITY * s2.normalize([0.01, 0.02, 1.0])
    clean = np.array([accel_model(a, Ri, S, b, gv) for a, Ri in zip(a_I, R)])
    # exact ZOH positions
    pos = [np.zeros(3)]
    vel = np.array([0.3, 0.0, -0.1])
    for i in range(n_imu - 1):
        h = times[i + 1] - times[i]
        pos.append(pos[-1] + vel * h + 0.5 * a_I[i] * h * h)
        vel = vel + a_I[i] * h
    idx = (0, 8, 20)
    sig_a, sig_p = 0.05, 0.01
    cov_p = np.diag([1.0, 2.0, 0.5]) * sig_p**2
    L = np.linalg.cholesky(cov_p)
    res = []
    for _ in range(10_000):
        acc = clean + np.linalg.solve(S, (rng.standard_normal((n_imu, 3)) * sig_a).T).T
        poses = [
            PoseMeasurement(times[k], pos[k] + L @ rng.standard_normal(3), R[k], cov_p) for k in idx
        ]
        f = build_factor(poses, [ImuSample(t, a) for t, a in zip(times, acc)], R, sig_a)
        res.append(residual(f, S.ravel(), b, s2.normalize(gv)))
    emp = np.cov(np.array(res).T)
    assert np.linalg.norm(emp - f.sigma) <= 0.10 * np.linalg.norm(f.sigma)


def test_non_psd_pose_covariance_rejected():
    imu = [ImuSample(t, np.zeros(3)) for t in np.arange(6) * 0.02]
    bad = PoseMeasurement(0.0, np.zeros(3), np.eye(3), np.diag([1e-4, -1e-4, 1e-4]))
    poses = [bad, _pose(0.04), _pose(0.1)]
    with pytest.raises(NonPSDError):
        build_factor(poses, imu, [np.eye(3)] * 6, 0.05)


def test_streams_interpolate_off_grid_pose_times():
    # constant acceleration and orientation make interpolation exact
    times = np.arange(0, 1.0001, 0.01)
    R = so3.exp([0.1, -0.2, 0.3])
    S, b = np.eye(3) * 1.01, np.array([0.05, 0.0, -0.1])
    gv = np.array([0, 0, GRAVITY])
    a_I = np.array([0.5, -0.2, 0.1])
    acc = np.tile(accel_model(a_I, R, S, b, gv), (len(times), 1))
    v0 = np.array([0.2, 0.1, 0.0])
    tp = [0.103, 0.2571, 0.4049]
    poses = [PoseMeasurement(t, v0 * t + 0.5 * a_I * t * t, R, 1e-4 * np.eye(3)) for t in tp]
    f = factor_from_streams(poses, times, acc, 0.05)
    assert np.abs(residual(f, S.ravel(), b, s2.normalize(gv))).max() < 1e-10


def test_streams_skip_sparse_factor(caplog):
    times = np.array([0.0, 0.1, 0.2])
    acc = np.tile([0, 0, GRAVITY], (3, 1))
    poses = [_pose(t, cov=1e-4) for t in (0.0, 0.05, 0.1)]
    with caplog.at_level(logging.WARNING):
        f = factor_from_streams(poses, times, acc, 0.05)
    assert f is None
    assert "only" in caplog.text


def test_streams_require_coverage():
    poses = [_pose(t, cov=1e-4) for t in (0.0, 0.05, 0.1)]
    with pytest.raises(CoverageError):
        factor_from_streams(poses, np.arange(0.02, 0.2, 0.01), np.zeros((18, 3)), 0.05)
