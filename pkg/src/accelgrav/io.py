"""Dataset, configuration and report files.

Datasets live in a directory holding ``imu.csv``, ``poses.csv`` and
optionally ``truth.csv`` and ``meta.json``.  Timestamps are written with nine
fractional digits and every other float with enough digits to round-trip.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import fields
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DataError, NonPSDError
from .graph import EstimatorConfig
from .odometry import PoseMeasurement, _check_psd
from .synth import Dataset, ScenarioConfig, scenario

IMU_HEADER = ["t", "ax", "ay", "az"]
COV_NAMES = ["c11", "c12", "c13", "c22", "c23", "c33"]
POSE_HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", *COV_NAMES, "keyframe"]
TRUTH_HEADER = ["t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz"]
_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _t(x):
    return f"{x:.9f}"


def _f(x):
    return repr(float(x))


def quat_wxyz(R):
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return w, x, y, z


def rot_from_wxyz(q):
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if not n > 0 or not math.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    return Rotation.from_quat([x / n, y / n, z / n, w / n]).as_matrix()


def cov_from_upper(c):
    S = np.empty((3, 3))
    for v, (i, j) in zip(c, _UPPER):
        S[i, j] = S[j, i] = v
    return S


# -- writing -----------------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_dataset(ds: Dataset, out_dir, extra_meta=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "imu.csv",
        IMU_HEADER,
        ([_t(t), *map(_f, a)] for t, a in zip(ds.imu_t, ds.imu_acc)),
    )
    _write_csv(
        out / "poses.csv",
        POSE_HEADER,
        (
            [
                _t(p.t),
                *map(_f, p.p_tilde),
                *map(_f, quat_wxyz(p.R)),
                *(_f(p.sigma_p[i, j]) for i, j in _UPPER),
                "1" if p.keyframe else "0",
            ]
            for p in ds.poses
        ),
    )
    tr = ds.truth
    _write_csv(
        out / "truth.csv",
        TRUTH_HEADER,
        (
            [_t(t), *map(_f, p), *map(_f, v), *map(_f, quat_wxyz(R))]
            for t, p, v, R in zip(tr.pose_t, tr.pose_p, tr.pose_v, tr.pose_R)
        ),
    )
    cfg = tr.config
    meta = {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "duration": cfg.duration,
        "imu_rate": cfg.imu_rate,
        "pose_rate": cfg.pose_rate,
        "sigma_a": cfg.sigma_a,
        "sigma_p": cfg.sigma_p,
        "drift_tilt_deg": cfg.drift_tilt_deg,
        "keyframe_every": cfg.keyframe_every,
        "true_S": cfg.true_S.tolist(),
        "true_b": cfg.true_b.tolist(),
        "true_g": cfg.true_g.tolist(),
    }
    if extra_meta:
        meta.update(extra_meta)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


# -- reading -----------------------------------------------------------------------


def _rows(path, header):
    path = Path(path)
    if not path.is_file():
        raise DataError("file not found", path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError("file is empty", path, 1) from None
        if [h.strip() for h in first] != header:
            raise DataError(f"expected header {','.join(header)}", path, 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} columns, found {len(row)}", path, line)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError("non-numeric value", path, line) from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError("non-finite value", path, line)
            yield line, vals


def _check_time(path, line, t, prev, strict):
    if prev is not None and (t <= prev if strict else t < prev):
        raise DataError(f"timestamp {t} does not follow {prev}", path, line)


def read_imu(path):
    ts, acc = [], []
    prev = None
    for line, v in _rows(path, IMU_HEADER):
        _check_time(path, line, v[0], prev, strict=True)
        prev = v[0]
        ts.append(v[0])
        acc.append(v[1:])
    if not ts:
        raise DataError("no IMU samples", path)
    return np.array(ts), np.array(acc)


def read_poses(path):
    poses = []
    prev = None
    for line, v in _rows(path, POSE_HEADER):
        _check_time(path, line, v[0], prev, strict=False)
        prev = v[0]
        try:
            R = rot_from_wxyz(v[4:8])
        except ValueError as exc:
            raise DataError(str(exc), path, line) from None
        cov = cov_from_upper(v[8:14])
        try:
            _check_psd(cov, "pose covariance")
        except NonPSDError as exc:
            raise DataError(str(exc), path, line) from None
        if v[14] not in (0.0, 1.0):
            raise DataError("keyframe flag must be 0 or 1", path, line)
        poses.append(PoseMeasurement(v[0], np.array(v[1:4]), R, cov, bool(v[14])))
    if not poses:
        raise DataError("no poses", path)
    return poses


def read_truth(path):
    rows = [v for _, v in _rows(path, TRUTH_HEADER)]
    a = np.array(rows).reshape(-1, len(TRUTH_HEADER))
    R = np.array([rot_from_wxyz(q) for q in a[:, 7:11]]).reshape(-1, 3, 3)
    return {"t": a[:, 0], "p": a[:, 1:4], "v": a[:, 4:7], "R": R}


def read_meta(dataset_dir):
    path = Path(dataset_dir) / "meta.json"
    if not path.is_file():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None


def read_dataset(dataset_dir):
    """Streams and, when present, truth of a dataset directory."""
    d = Path(dataset_dir)
    if not d.is_dir():
        raise DataError("dataset directory not found", d)
    imu_t, imu_a = read_imu(d / "imu.csv")
    poses = read_poses(d / "poses.csv")
    truth = read_truth(d / "truth.csv") if (d / "truth.csv").is_file() else None
    return imu_t, imu_a, poses, truth, read_meta(d)


# -- configuration -----------------------------------------------------------------


def _parse_value(section, key, raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if section == "scenario" and key in ("name", "mode"):
            return raw.strip()
        raise ConfigError(f"[{section}] {key}: cannot parse value {raw!r}") from None


def load_config(path):
    """Read an INI-style file with ``[estimator]`` and ``[scenario]`` sections.

    Values are JSON literals (numbers, lists, ``null``, quoted strings); bare
    words are accepted for the scenario name and mode.  Returns
    ``(EstimatorConfig, scenario_settings)``.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(parser.sections()) - {"estimator", "scenario"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    est = {}
    if parser.has_section("estimator"):
        est = {k: _parse_value("estimator", k, v) for k, v in parser.items("estimator")}
    if "T_l" in est and est["T_l"] in ("inf", "Infinity"):
        est["T_l"] = math.inf
    scen = {}
    if parser.has_section("scenario"):
        scen = {k: _parse_value("scenario", k, v) for k, v in parser.items("scenario")}
    return EstimatorConfig.from_dict(est), scen


def scenario_from_settings(settings, name=None, seed=None):
    settings = dict(settings)
    name = name or settings.pop("name", "excited")
    settings.pop("name", None)
    seed = settings.pop("seed", 0) if seed is None else seed
    settings.pop("seed", None)
    allowed = {f.name for f in fields(ScenarioConfig)} - {"segments", "name", "seed"}
    allowed.add("duration")
    unknown = set(settings) - allowed
    if unknown:
        raise ConfigError(f"unknown scenario settings: {sorted(unknown)}")
    try:
        return scenario(name, seed=int(seed), **settings)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _ini_value(v):
    if isinstance(v, float) and math.isinf(v):
        return '"inf"'
    if isinstance(v, np.ndarray):
        v = v.tolist()
    return json.dumps(v)


def default_config_text():
    """Every estimator and scenario setting with its default, as a loadable file."""
    lines = ["[estimator]"]
    lines += [f"{k} = {_ini_value(v)}" for k, v in EstimatorConfig().to_dict().items()]
    cfg = scenario("excited")
    lines += ["", "[scenario]", "name = excited", "seed = 0"]
    lines.append("# scenario-dependent unless set: duration (s) and the true intrinsics,")
    lines.append("# which are drawn from the seed; values shown are for excited, seed 0")
    lines.append(f"# duration = {_ini_value(cfg.duration)}")
    for f in fields(ScenarioConfig):
        if f.name in ("segments", "name", "seed"):
            continue
        prefix = "# " if f.name in ("true_S", "true_b", "true_g") else ""
        lines.append(f"{prefix}{f.name} = {_ini_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


# -- reports -------------------------------------------------------------------------


def record_to_dict(r):
    return {
        "t": r.t,
        "S": np.asarray(r.S).ravel().tolist(),
        "b": np.asarray(r.b).tolist(),
        "g": np.asarray(r.g).tolist(),
        "g_cov": np.asarray(r.g_cov).ravel().tolist(),
        "cost": r.cost,
        "iterations": r.iterations,
        "wall_time": r.wall_time,
        "interval_id": r.interval_id,
    }


TIMESERIES_HEADER = (
    ["t"]
    + [f"s{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    + ["bx", "by", "bz", "gx", "gy", "gz", "cov_g11", "cov_g12", "cov_g21", "cov_g22"]
    + ["cost", "iterations", "wall_time"]
)


def write_timeseries(path, records):
    _write_csv(
        path,
        TIMESERIES_HEADER,
        (
            [_t(r.t)]
            + [_f(x) for x in np.asarray(r.S).ravel()]
            + [_f(x) for x in r.b]
            + [_f(x) for x in r.g]
            + [_f(x) for x in np.asarray(r.g_cov).ravel()]
            + [_f(r.cost), str(r.iterations), _f(r.wall_time)]
            for r in records
        ),
    )


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_report(path):
    path = Path(path)
    if not path.is_file():
        raise DataError("report not found", path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
