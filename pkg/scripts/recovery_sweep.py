"""Final S/b/g errors of the fixed-lag estimator over seeded excited runs."""

import argparse
import time

import numpy as np

from accelgrav.evaluate import gravity_error_deg
from accelgrav.graph import EstimatorConfig, run_estimator
from accelgrav.synth import scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--scenario", default="excited")
    ap.add_argument("--bias-tol", type=float, default=0.09)
    ap.add_argument("--sens-tol", type=float, default=0.008)
    args = ap.parse_args()

    print(f"{'seed':>4} {'max|db|':>9} {'max|dS|':>9} {'g err deg':>10} {'time s':>7}  ok")
    good = 0
    total = 0.0
    for seed in range(args.seeds):
        cfg = scenario(args.scenario, seed=seed)
        ds = simulate(cfg)
        t0 = time.perf_counter()
        r = run_estimator(ds.imu_t, ds.imu_acc, ds.poses, EstimatorConfig()).records[-1]
        dt = time.perf_counter() - t0
        total += dt
        eb = np.abs(r.b - cfg.true_b).max()
        es = np.abs(r.S - cfg.true_S).max()
        ok = eb <= args.bias_tol and es <= args.sens_tol
        good += ok
        print(f"{seed:4d} {eb:9.4f} {es:9.4f} {gravity_error_deg(r.g, cfg.true_g):10.4f} {dt:7.2f}  {'yes' if ok else 'no'}")
    print(f"{good}/{args.seeds} within tolerance, estimator time {total:.1f} s")


if __name__ == "__main__":
    main()
