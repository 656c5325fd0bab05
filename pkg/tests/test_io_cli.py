import json
import math

import numpy as np
import pytest

from accelgrav import cli
from accelgrav.errors import ConfigError, DataError, NonMonotonicTimeError
from accelgrav.graph import EstimatorConfig
from accelgrav.io import (
    TIMESERIES_HEADER,
    cov_from_upper,
    default_config_text,
    load_config,
    quat_wxyz,
    read_dataset,
    rot_from_wxyz,
    write_dataset,
)
from accelgrav.synth import scenario, simulate


def _write_cfg(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_cfg(root / "run.ini", "[scenario]\nduration = 15.0\n")
    rc = cli.main(["simulate", "--scenario", "excited", "--seed", "7", "--config", cfg, "--out", str(root / "ds")])
    assert rc == 0
    return root


def _strip_wall(obj):
    if isinstance(obj, dict):
        return {k: _strip_wall(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [_strip_wall(v) for v in obj]
    return obj


def test_dataset_round_trip(tmp_path, rng):
    ds = simulate(scenario("excited", seed=1, duration=5.0, keyframe_every=3, anisotropic_axis=0))
    write_dataset(ds, tmp_path)
    imu_t, imu_a, poses, truth, meta = read_dataset(tmp_path)
    assert np.array_equal(imu_t, ds.imu_t)
    assert np.array_equal(imu_a, ds.imu_acc)
    for a, b in zip(poses, ds.poses):
        assert a.t == b.t and a.keyframe == b.keyframe
        assert np.array_equal(a.p_tilde, b.p_tilde)
        assert np.abs(a.R - b.R).max() <= 1e-15
        assert np.array_equal(a.sigma_p, b.sigma_p)
    assert np.array_equal(truth["v"], ds.truth.pose_v)
    assert meta["keyframe_every"] == 3
    assert np.array_equal(np.array(meta["true_S"]), ds.truth.config.true_S)


def test_quaternion_helpers(rng):
    from accelgrav import so3

    R = so3.exp(rng.normal(size=3))
    q = quat_wxyz(R)
    assert np.allclose(rot_from_wxyz(q), R, atol=1e-15)
    C = cov_from_upper([1, 2, 3, 4, 5, 6])
    assert np.array_equal(C, [[1, 2, 3], [2, 4, 5], [3, 5, 6]])


def test_timestamps_have_nine_decimals(dataset):
    line = (dataset / "ds" / "imu.csv").read_text().splitlines()[2]
    t = line.split(",")[0]
    assert len(t.split(".")[1]) >= 9


@pytest.mark.parametrize(
    "fname,lineno,mutate,msg",
    [
        ("imu.csv", 50, lambda cols: cols[:2] + ["abc"] + cols[3:], "non-numeric"),
        ("imu.csv", 12, lambda cols: cols[:3], "columns"),
        ("imu.csv", 30, lambda cols: ["0.0"] + cols[1:], "does not follow"),
        ("poses.csv", 7, lambda cols: cols[:8] + ["-1"] + cols[9:], "covariance"),
        ("poses.csv", 9, lambda cols: cols[:-1] + ["2"], "keyframe"),
        ("imu.csv", 5, lambda cols: cols[:1] + ["nan"] + cols[2:], "finite"),
    ],
)
def test_corrupt_rows_report_line(dataset, tmp_path, fname, lineno, mutate, msg, capsys):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(dataset / "ds", bad)
    path = bad / fname
    lines = path.read_text().splitlines()
    lines[lineno - 1] = ",".join(mutate(lines[lineno - 1].split(",")))
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as err:
        read_dataset(bad)
    assert err.value.line == lineno
    assert msg in str(err.value)
    rc = cli.main(["estimate", str(bad), "--out", str(tmp_path / "r.json")])
    assert rc == 3
    assert f"{fname}:{lineno}" in capsys.readouterr().err


def test_bad_header(tmp_path, dataset):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(dataset / "ds", bad)
    p = bad / "imu.csv"
    p.write_text(p.read_text().replace("t,ax,ay,az", "time,ax,ay,az", 1))
    with pytest.raises(DataError):
        read_dataset(bad)


def test_exit_codes(tmp_path, dataset, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path / "x")]) == 2
    assert "config" in capsys.readouterr().err
    cfg = _write_cfg(tmp_path / "bad.ini", "[estimator]\nT_l = 5\n")
    assert cli.main(["estimate", str(dataset / "ds"), "--config", cfg, "--out", str(tmp_path / "r.json")]) == 2
    cfg = _write_cfg(tmp_path / "bad2.ini", "[estimator]\nwhatever = 1\n")
    assert cli.main(["estimate", str(dataset / "ds"), "--config", cfg, "--out", str(tmp_path / "r.json")]) == 2
    assert cli.main(["estimate", str(tmp_path / "missing"), "--out", str(tmp_path / "r.json")]) == 3
    assert cli.main([]) == 2


def test_print_config_is_loadable(tmp_path, capsys):
    assert cli.main(["--print-config"]) == 0
    text = capsys.readouterr().out
    assert text == default_config_text()
    est, scen = load_config(_write_cfg(tmp_path / "d.ini", text))
    assert est == EstimatorConfig()
    for key in EstimatorConfig().to_dict():
        assert f"\n{key} = " in text
    assert scen["name"] == "excited"


def test_config_values(tmp_path):
    est, scen = load_config(
        _write_cfg(tmp_path / "c.ini", '[estimator]\nT_l = "inf"\nsigma_a = 0.1\n[scenario]\nname = slow_yaw\nmode = realistic\n')
    )
    assert math.isinf(est.T_l) and est.sigma_a == 0.1
    assert scen == {"name": "slow_yaw", "mode": "realistic"}
    with pytest.raises(ConfigError):
        load_config(_write_cfg(tmp_path / "e.ini", "[estimator]\nsigma_a = abc\n"))
    with pytest.raises(ConfigError):
        load_config(_write_cfg(tmp_path / "f.ini", "[other]\nx = 1\n"))


def test_simulate_is_deterministic(tmp_path, dataset):
    cfg = _write_cfg(tmp_path / "run.ini", "[scenario]\nduration = 15.0\n")
    assert cli.main(["simulate", "--scenario", "excited", "--seed", "7", "--config", cfg, "--out", str(tmp_path / "ds")]) == 0
    for name in ("imu.csv", "poses.csv", "truth.csv", "meta.json"):
        assert (tmp_path / "ds" / name).read_bytes() == (dataset / "ds" / name).read_bytes()


def test_simulate_slow_yaw(tmp_path):
    assert cli.main(["simulate", "--scenario", "slow_yaw", "--out", str(tmp_path / "sy")]) == 0
    meta = json.loads((tmp_path / "sy" / "meta.json").read_text())
    assert meta["scenario"] == "slow_yaw" and meta["duration"] == 60.0


def test_estimate_report_and_threaded_mode(tmp_path, dataset):
    ds = str(dataset / "ds")
    assert cli.main(["estimate", ds, "--out", str(tmp_path / "a.json")]) == 0
    assert cli.main(["estimate", ds, "--out", str(tmp_path / "b.json"), "--threaded"]) == 0
    assert cli.main(["estimate", ds, "--out", str(tmp_path / "c.json")]) == 0
    a, b, c = (json.loads((tmp_path / f"{x}.json").read_text()) for x in "abc")
    assert _strip_wall(a) != {} and _strip_wall(a)["records"] == _strip_wall(b)["records"]
    assert _strip_wall(a)["final"] == _strip_wall(b)["final"]
    a.pop("dataset"), c.pop("dataset")
    assert _strip_wall(a) == _strip_wall(c)
    times = [r["t"] for r in a["records"]]
    assert times == sorted(times)
    assert set(a["summary"]) >= {"gravity_error_deg", "bias_rmse", "sensitivity_max_error"}
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert rows[0].split(",") == TIMESERIES_HEADER
    assert len(rows) == len(a["records"]) + 1


def _report(records, g0=(0.0, 0.0, 1.0)):
    return {"initial_gravity": list(g0), "records": records}


def _rec(t, S, b, g):
    return {"t": t, "S": np.ravel(S).tolist(), "b": list(b), "g": list(g / np.linalg.norm(g)), "g_cov": [0, 0, 0, 0]}


def test_evaluate_perfect_estimates(tmp_path):
    cfg = scenario("excited", seed=5, duration=12.0, sigma_a=0.0, sigma_p=0.0)
    write_dataset(simulate(cfg), tmp_path)
    recs = [_rec(0.0, cfg.true_S, cfg.true_b, cfg.true_g)]
    m = cli.evaluate_report(_report(recs), tmp_path)
    assert m["gravity_error_deg"] <= 1e-6
    assert m["bias_rmse"] == 0.0 and m["sensitivity_max_error"] == 0.0
    assert m["imu_deviation_rmse"] <= 1e-6
    assert m["imu_deviation_count"] > 100


def test_evaluate_prior_estimates_match_gap(tmp_path):
    cfg = scenario("excited", seed=5, duration=12.0)
    write_dataset(simulate(cfg), tmp_path)
    g0 = np.array([0.0, 0.0, 1.0])
    m = cli.evaluate_report(_report([_rec(1.0, np.eye(3), np.zeros(3), g0)]), tmp_path)
    for k in ("gravity_error_deg", "bias_rmse", "sensitivity_max_error"):
        assert m[k] == m["prior"][k]
    assert m["imu_deviation_rmse"] == m["imu_deviation_rmse_prior"]


def test_evaluate_cli(tmp_path, dataset, capsys):
    ds = str(dataset / "ds")
    assert cli.main(["estimate", ds, "--out", str(tmp_path / "r.json")]) == 0
    assert cli.main(["evaluate", str(tmp_path / "r.json"), ds, "--out", str(tmp_path / "m.json")]) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["horizon"] == 0.5
    assert m["imu_deviation_rmse"] < m["imu_deviation_rmse_prior"]
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["evaluate", str(tmp_path / "broken.json"), ds]) == 3


def test_non_monotonic_pose_file(tmp_path, dataset):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(dataset / "ds", bad)
    p = bad / "poses.csv"
    lines = p.read_text().splitlines()
    lines[5], lines[6] = lines[6], lines[5]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises((DataError, NonMonotonicTimeError)):
        read_dataset(bad)
