"""Command-line entry point: ``accelgrav {simulate,estimate,evaluate}``."""

from __future__ import annotations

import argparse
import logging
import queue
import sys
import threading
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    AntipodeError,
    ConfigError,
    CoverageError,
    DataError,
    NonMonotonicTimeError,
    NonPSDError,
    RankDeficientError,
)
from .evaluate import Intrinsics, causal_lookup, imu_prediction_deviation, rmse, summarize
from .graph import Estimate, EstimatorConfig, IntrinsicsEstimator, _TIME_EPS
from .io import (
    default_config_text,
    load_config,
    read_dataset,
    read_report,
    record_to_dict,
    scenario_from_settings,
    write_dataset,
    write_json,
    write_timeseries,
)
from .synth import SCENARIOS, simulate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("accelgrav")


def _config(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return EstimatorConfig().validate(), {}


# -- simulate -------------------------------------------------------------------------


def cmd_simulate(args):
    _, settings = _config(args)
    cfg = scenario_from_settings(settings, name=args.scenario, seed=args.seed)
    ds = simulate(cfg)
    out = write_dataset(ds, args.out)
    print(f"wrote {len(ds.imu_t)} IMU samples and {len(ds.poses)} poses to {out}")
    return EXIT_OK


# -- estimate -------------------------------------------------------------------------


class _SerialWorker:
    """Runs ``update`` on its own thread; ingestion waits for each handoff."""

    def __init__(self, est):
        self.est = est
        self.jobs = queue.Queue(maxsize=1)
        self.results = queue.Queue(maxsize=1)
        self.thread = threading.Thread(target=self._loop, name="estimator", daemon=True)
        self.thread.start()

    def _loop(self):
        while True:
            job = self.jobs.get()
            if job is None:
                return
            try:
                self.results.put((self.est.update(), None))
            except Exception as exc:  # re-raised on the ingestion thread
                self.results.put((None, exc))

    def update(self):
        self.jobs.put(True)
        rec, exc = self.results.get()
        if exc is not None:
            raise exc
        return rec

    def close(self):
        self.jobs.put(None)
        self.thread.join()


def run_streams(imu_t, imu_a, poses, config, threaded=False):
    est = IntrinsicsEstimator(config)
    worker = _SerialWorker(est) if threaded else None
    update = worker.update if worker else est.update
    try:
        j, n = 0, len(imu_t)
        for pose in poses:
            while j < n and (imu_t[j] <= pose.t + _TIME_EPS or (j > 0 and imu_t[j - 1] < pose.t - _TIME_EPS)):
                est.add_imu(imu_t[j], imu_a[j])
                j += 1
            if est.add_pose(pose):
                update()
        if est.pose_count % config.update_every != 0:
            update()
    finally:
        if worker:
            worker.close()
    return est


def cmd_estimate(args):
    config, _ = _config(args)
    imu_t, imu_a, poses, truth, meta = read_dataset(args.dataset)
    est = run_streams(imu_t, imu_a, poses, config, threaded=args.threaded)
    if not est.records:
        raise DataError("no estimate could be produced", args.dataset)
    final = est.records[-1]
    report = {
        "version": __version__,
        "dataset": str(args.dataset),
        "config": {k: (v if np.isfinite(v) else str(v)) if isinstance(v, float) else v
                   for k, v in config.to_dict().items()},
        "initial_gravity": np.asarray(est.initial_gravity).tolist(),
        "factors": est.factor_count,
        "records": [record_to_dict(r) for r in est.records],
        "final": record_to_dict(final),
    }
    if meta and all(k in meta for k in ("true_S", "true_b", "true_g")):
        report["summary"] = summarize(
            final, np.array(meta["true_S"]), np.array(meta["true_b"]), np.array(meta["true_g"])
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, report)
    ts = Path(args.timeseries) if args.timeseries else out.with_suffix(".csv")
    write_timeseries(ts, est.records)
    print(f"{len(est.records)} updates; report {out}; timeseries {ts}")
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------------


def _records(report):
    out = []
    for r in report["records"]:
        out.append(
            Estimate(
                t=r["t"],
                S=np.array(r["S"]).reshape(3, 3),
                b=np.array(r["b"]),
                g=np.array(r["g"]),
                g_cov=np.array(r["g_cov"]).reshape(2, 2),
            )
        )
    return out


def evaluate_report(report, dataset_dir, horizon=0.5):
    imu_t, imu_a, poses, truth, meta = read_dataset(dataset_dir)
    if truth is None or meta is None:
        raise DataError("evaluation needs truth.csv and meta.json", dataset_dir)
    pose_t = np.array([p.t for p in poses])
    if len(truth["t"]) != len(pose_t) or np.abs(truth["t"] - pose_t).max() > 1e-6:
        raise DataError("truth timestamps do not match poses", Path(dataset_dir) / "truth.csv")
    records = _records(report)
    if not records:
        raise DataError("report has no records")
    if records[-1].t > pose_t[-1] + 1e-6:
        raise DataError("report extends past the dataset; wrong dataset?")
    pose_p = np.array([p.p_tilde for p in poses])
    pose_R = np.array([p.R for p in poses])
    prior = Intrinsics.prior(report.get("initial_gravity", (0.0, 0.0, 1.0)))
    dev_est = imu_prediction_deviation(
        imu_t, imu_a, pose_t, pose_p, pose_R, truth["v"], causal_lookup(records, prior), horizon
    )
    dev_prior = imu_prediction_deviation(
        imu_t, imu_a, pose_t, pose_p, pose_R, truth["v"], lambda t: prior, horizon
    )
    S, b, g = np.array(meta["true_S"]), np.array(meta["true_b"]), np.array(meta["true_g"])
    metrics = summarize(records[-1], S, b, g)
    prior_gap = summarize(
        Estimate(0.0, prior.S, prior.b, prior.g, np.zeros((2, 2))), S, b, g
    )
    metrics.update(
        {
            "horizon": horizon,
            "imu_deviation_rmse": rmse(dev_est),
            "imu_deviation_rmse_prior": rmse(dev_prior),
            "imu_deviation_count": int(dev_est.size),
            "prior": prior_gap,
        }
    )
    return metrics


def cmd_evaluate(args):
    report = read_report(args.report)
    metrics = evaluate_report(report, args.dataset, args.horizon)
    if args.out:
        write_json(args.out, metrics)
    else:
        import json

        print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="accelgrav", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--print-config", action="store_true", help="print every default setting and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--scenario", choices=SCENARIOS)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run the fixed-lag estimator on a dataset")
    e.add_argument("dataset")
    e.add_argument("--config")
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--timeseries", help="per-update CSV (default: report path with .csv)")
    e.add_argument("--threaded", action="store_true", help="run updates on a worker thread")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="score a report against dataset truth")
    v.add_argument("report")
    v.add_argument("dataset")
    v.add_argument("--horizon", type=float, default=0.5)
    v.add_argument("--out")
    v.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_config:
        sys.stdout.write(default_config_text())
        return EXIT_OK
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NonMonotonicTimeError, CoverageError, NonPSDError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankDeficientError, AntipodeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
