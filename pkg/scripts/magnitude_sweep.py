"""Sweep the magnitude-prior widths and count seeds that meet the recovery tolerances."""

import argparse
import itertools

import numpy as np

from accelgrav.graph import EstimatorConfig, run_estimator
from accelgrav.synth import scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--S-sigmas", type=float, nargs="+", default=[0.05, 0.2, 0.5, 2.0])
    ap.add_argument("--b-sigmas", type=float, nargs="+", default=[1.0, 5.0])
    args = ap.parse_args()

    data = []
    for seed in range(args.seeds):
        cfg = scenario("excited", seed=seed)
        data.append((cfg, simulate(cfg)))
    print(f"{'S sigma':>8} {'b sigma':>8} {'pass':>5} {'worst db':>9} {'worst dS':>9}")
    for s_sig, b_sig in itertools.product(args.S_sigmas, args.b_sigmas):
        conf = EstimatorConfig(magnitude_S_sigma=s_sig, magnitude_bias_sigma=b_sig)
        good, wb, ws = 0, 0.0, 0.0
        for cfg, ds in data:
            r = run_estimator(ds.imu_t, ds.imu_acc, ds.poses, conf).records[-1]
            eb = np.abs(r.b - cfg.true_b).max()
            es = np.abs(r.S - cfg.true_S).max()
            good += eb <= 0.09 and es <= 0.008
            wb, ws = max(wb, eb), max(ws, es)
        print(f"{s_sig:8.3f} {b_sig:8.3f} {good:5d} {wb:9.4f} {ws:9.4f}")


if __name__ == "__main__":
    main()
