import math

import numpy as np
import pytest

from accelgrav import s2
from accelgrav.evaluate import (
    Intrinsics,
    bias_rmse,
    causal_lookup,
    gravity_error_deg,
    imu_prediction_deviation,
    propagate,
    rmse,
    sensitivity_max_error,
)
from accelgrav.graph import Estimate
from accelgrav.odometry import slerp_orientations
from accelgrav.synth import scenario, simulate


def _args(ds):
    tr = ds.truth
    return (
        ds.imu_t,
        ds.imu_acc,
        tr.pose_t,
        np.array([p.p_tilde for p in ds.poses]),
        np.array([p.R for p in ds.poses]),
        tr.pose_v,
    )


@pytest.mark.parametrize("mode", ["verification", "realistic"])
def test_noise_free_propagation_with_true_intrinsics(mode):
    cfg = scenario("excited", seed=2, duration=20.0, sigma_a=0.0, sigma_p=0.0, mode=mode)
    ds = simulate(cfg)
    truth = Intrinsics(cfg.true_S, cfg.true_b, s2.normalize(cfg.true_g))
    dev = imu_prediction_deviation(*_args(ds), lambda t: truth, horizon=0.5)
    assert len(dev) == len(ds.poses) - 5
    if mode == "verification":
        assert dev.max() <= 1e-6
    else:
        # ZOH quadrature of a continuous trajectory leaves a small model error
        assert dev.max() <= 1e-2


def test_wrong_intrinsics_deviate():
    cfg = scenario("excited", seed=2, duration=10.0, sigma_a=0.0, sigma_p=0.0)
    ds = simulate(cfg)
    dev = imu_prediction_deviation(*_args(ds), lambda t: Intrinsics.prior(), horizon=0.5)
    assert rmse(dev) > 1e-3


def test_propagate_constant_acceleration():
    t = np.linspace(0.0, 1.0, 101)
    acc = np.tile([1.0, 0.0, 9.80665], (101, 1))
    rots = np.tile(np.eye(3), (101, 1, 1))
    p = propagate(0.0, np.zeros(3), np.array([0.0, 1.0, 0.0]), t, acc, rots, 1.0, Intrinsics.prior())
    assert p == pytest.approx([0.5, 1.0, 0.0], abs=1e-12)


def test_metrics():
    g = s2.normalize([0.0, math.sin(0.01), math.cos(0.01)])
    assert gravity_error_deg([0, 0, 2.0], g) == pytest.approx(math.degrees(0.01))
    assert bias_rmse([1, 1, 1], [0, 0, 0]) == 1.0
    assert sensitivity_max_error(np.eye(3) * 1.1, np.eye(3)) == pytest.approx(0.1)
    assert math.isnan(rmse([]))


def test_causal_lookup():
    recs = [Estimate(float(t), np.eye(3) * (1 + t), np.zeros(3), np.array([0, 0, 1.0]), np.eye(2)) for t in (1, 2)]
    prior = Intrinsics.prior()
    at = causal_lookup(recs, prior)
    assert at(0.5) is prior
    assert at(1.0).S[0, 0] == 2.0
    assert at(1.9).S[0, 0] == 2.0
    assert at(5.0).S[0, 0] == 3.0
