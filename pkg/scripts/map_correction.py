"""Keyframe roll/pitch correction on a drifting pose stream.

Compares alignment driven by known body-frame gravity with alignment driven
by the running estimator's published gravity.
"""

import argparse
import math

import numpy as np

from accelgrav import s2
from accelgrav.evaluate import causal_lookup
from accelgrav.graph import EstimatorConfig, run_estimator
from accelgrav.map_gravity import KeyframeNode, align_keyframes, capture_factor, chain_constraints, tilt_error
from accelgrav.synth import scenario, simulate

E3 = np.array([0.0, 0.0, 1.0])


def tilts(nodes, truth_R, ids):
    return np.array([math.degrees(tilt_error(n.R_M, truth_R[k])) for n, k in zip(nodes, ids)])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--keyframe-every", type=int, default=10)
    ap.add_argument("--sigma-deg", type=float, default=0.05, help="oracle gravity standard deviation")
    args = ap.parse_args()

    ds = simulate(scenario("drift_tilt", seed=args.seed, keyframe_every=args.keyframe_every))
    truth_R = ds.truth.pose_R
    kf = [k for k, p in enumerate(ds.poses) if p.keyframe]
    nodes = [KeyframeNode(k, ds.poses[k].R) for k in kf]
    cov = math.radians(args.sigma_deg) ** 2 * np.eye(2)
    oracle = [capture_factor((s2.normalize(ds.poses[k].R @ truth_R[k].T @ E3), cov), ds.poses[k].R, k) for k in kf]

    est = run_estimator(ds.imu_t, ds.imu_acc, ds.poses, EstimatorConfig())
    times = np.array([r.t for r in est.records])
    lookup = causal_lookup(est.records, None)
    live = []
    for k in kf:
        j = int(np.searchsorted(times, ds.poses[k].t + 1e-9, side="right")) - 1
        if j >= 0:
            live.append(capture_factor((lookup(ds.poses[k].t).g, est.records[j].g_cov), ds.poses[k].R, k))

    before = tilts(nodes, truth_R, kf)
    print(f"input      mean {before.mean():.3f} deg  max {before.max():.3f} deg")
    for label, factors in (("oracle", oracle), ("estimator", live)):
        res = align_keyframes(nodes, chain_constraints(nodes), factors)
        t = tilts(res.nodes, truth_R, kf)
        print(f"{label:10s} mean {t.mean():.3f} deg  max {t.max():.3f} deg  ({len(factors)} factors)")


if __name__ == "__main__":
    main()
