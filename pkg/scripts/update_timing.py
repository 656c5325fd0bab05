"""Per-update wall time of the fixed-lag estimator."""

import argparse

import numpy as np

from accelgrav.graph import EstimatorConfig, run_estimator
from accelgrav.synth import scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T-l", type=float, default=60.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--duration", type=float, default=120.0)
    args = ap.parse_args()

    ds = simulate(scenario("excited", seed=args.seed, duration=args.duration))
    est = run_estimator(ds.imu_t, ds.imu_acc, ds.poses, EstimatorConfig(T_l=args.T_l))
    w = 1e3 * np.array([r.wall_time for r in est.records])
    it = np.array([r.iterations for r in est.records])
    print(f"{len(w)} updates: mean {w.mean():.2f} ms, median {np.median(w):.2f} ms, "
          f"p95 {np.percentile(w, 95):.2f} ms, max {w.max():.2f} ms; mean iterations {it.mean():.2f}")


if __name__ == "__main__":
    main()
