"""Final gravity error for two fixed-lag window lengths on limited-excitation runs."""

import argparse

import numpy as np

from accelgrav.evaluate import gravity_error_deg
from accelgrav.graph import EstimatorConfig, run_estimator
from accelgrav.synth import scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--long", type=float, default=60.0)
    ap.add_argument("--short", type=float, default=10.0)
    ap.add_argument("--scenario", default="slow_yaw")
    args = ap.parse_args()

    errs = {args.long: [], args.short: []}
    for seed in range(args.seeds):
        cfg = scenario(args.scenario, seed=seed)
        ds = simulate(cfg)
        row = []
        for T in errs:
            r = run_estimator(ds.imu_t, ds.imu_acc, ds.poses, EstimatorConfig(T_l=T)).records[-1]
            errs[T].append(gravity_error_deg(r.g, cfg.true_g))
            row.append(errs[T][-1])
        print(f"seed {seed:3d}  T_l={args.long:g}: {row[0]:.5f}  T_l={args.short:g}: {row[1]:.5f}")
    ml, ms = np.median(errs[args.long]), np.median(errs[args.short])
    print(f"median {ml:.5f} vs {ms:.5f} deg; improvement {100 * (1 - ml / ms):.3f}%")


if __name__ == "__main__":
    main()
