# test_command_line.py
import filecmp
import json
import os
import tempfile

import pandas as pd
import pytest

from config.run_config import GaitSpec
from core.manifold import ManifoldDomainError
from interfaces.command_line import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, build_parser, run

HERE = os.path.dirname(os.path.abspath(__file__))
ROBOT = os.path.join(HERE, "config", "robot_biped.json")
SLOW = os.getenv("RUN_SLOW_TESTS", "").lower() in ("1", "true", "yes")


def _write_gait(directory, **overrides):
    params = dict(speed=0.2, step_length=0.12, step_duration=0.6, duration=4.0,
                  stand_time=1.2, ramp_time=0.5, seed=3)
    params.update(overrides)
    path = os.path.join(directory, "gait.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(GaitSpec(**params).to_dict(), f)
    return path


def _rows(path):
    return len(pd.read_csv(path, skiprows=1))


def _simulate(tmp, out="sim", **overrides):
    gait = _write_gait(tmp, **overrides)
    out_dir = os.path.join(tmp, out)
    code = run(["--robot", ROBOT, "simulate", "--config", gait, "--out", out_dir])
    return code, out_dir


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["compare", "--gait", "g.json", "--filter", "1-imu", "5-imu"])
    assert args.filter == ["1-imu", "5-imu"] and args.jobs == 1


def test_simulate_writes_log_and_truth():
    with tempfile.TemporaryDirectory() as tmp:
        code, out_dir = _simulate(tmp)
        assert code == EXIT_OK
        assert _rows(os.path.join(out_dir, "sensor_log.csv")) == 4001
        assert _rows(os.path.join(out_dir, "ground_truth.csv")) == 4001
        _, again = _simulate(tmp, out="again")
        assert filecmp.cmp(os.path.join(out_dir, "sensor_log.csv"), os.path.join(again, "sensor_log.csv"),
                           shallow=False)


@pytest.mark.skipif(not SLOW, reason="set RUN_SLOW_TESTS=1")
def test_simulate_straight_20s():
    with tempfile.TemporaryDirectory() as tmp:
        gait = os.path.join(HERE, "config", "gait_straight.json")
        assert run(["--robot", ROBOT, "simulate", "--config", gait, "--out", tmp]) == EXIT_OK
        assert _rows(os.path.join(tmp, "sensor_log.csv")) == 20001


def test_invalid_inputs_exit_with_code_2():
    with tempfile.TemporaryDirectory() as tmp:
        code, _ = _simulate(tmp, speed=1.5, step_length=0.9)
        assert code == EXIT_INVALID
        missing = os.path.join(tmp, "nope.json")
        assert run(["--robot", ROBOT, "simulate", "--config", missing, "--out", tmp]) == EXIT_INVALID
        assert run(["--robot", ROBOT, "estimate", "--log", missing, "--filter", "1-imu",
                    "--out", os.path.join(tmp, "t.csv")]) == EXIT_INVALID
        gait = _write_gait(tmp)
        assert run(["--robot", ROBOT, "compare", "--gait", gait, "--filter", "1-imu", "1-imu",
                    "--out", tmp]) == EXIT_INVALID
        assert run(["--robot", ROBOT, "compare", "--gait", gait, "--jobs", "0", "--out", tmp]) == EXIT_INVALID


def _failing_odometry(error):
    class FailingOdometry:
        def __init__(self, robot=None, verbose=None):
            pass

        def estimate(self, cfg, log_path, out_path, truth_path=None):
            raise error
    return FailingOdometry


def test_numerical_failures_exit_with_code_1():
    with tempfile.TemporaryDirectory() as tmp:
        argv = ["--robot", ROBOT, "estimate", "--log", os.path.join(tmp, "log.csv"), "--filter", "5-imu",
                "--out", os.path.join(tmp, "t.csv")]
        for error in (ValueError("link state field p is not finite"),
                      ManifoldDomainError("rotation angle outside the principal log domain")):
            assert run(argv, odometry_factory=_failing_odometry(error)) == EXIT_RUNTIME


def test_estimate_and_evaluate():
    with tempfile.TemporaryDirectory() as tmp:
        _, sim = _simulate(tmp)
        log, truth = os.path.join(sim, "sensor_log.csv"), os.path.join(sim, "ground_truth.csv")
        traj = os.path.join(tmp, "traj.csv")
        assert run(["--robot", ROBOT, "estimate", "--log", log, "--filter", "1-imu", "--out", traj]) == EXIT_OK
        assert _rows(traj) == 4001
        again = os.path.join(tmp, "traj2.csv")
        run(["--robot", ROBOT, "estimate", "--log", log, "--filter", "1-imu", "--out", again])
        assert filecmp.cmp(traj, again, shallow=False)

        metrics = os.path.join(tmp, "metrics.json")
        assert run(["--robot", ROBOT, "evaluate", "--trajectory", traj, "--truth", truth,
                    "--out", metrics]) == EXIT_OK
        with open(metrics, "r", encoding="utf-8") as f:
            report = json.load(f)
        assert report["steps"] > 0 and report["samples"] == 4001
        assert report["ate_cm"] < 50.0
        # the truth file is not a trajectory file
        assert run(["--robot", ROBOT, "evaluate", "--trajectory", truth, "--truth", truth]) == EXIT_INVALID


def test_truncated_log_is_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        _, sim = _simulate(tmp)
        log = os.path.join(sim, "sensor_log.csv")
        with open(log, "a", encoding="utf-8") as f:
            f.write("4.001,0.0\n")
        code = run(["--robot", ROBOT, "estimate", "--log", log, "--filter", "1-imu",
                    "--out", os.path.join(tmp, "traj.csv")])
        assert code == EXIT_INVALID


def test_compare_two_filters():
    with tempfile.TemporaryDirectory() as tmp:
        gait = _write_gait(tmp)
        code = run(["--robot", ROBOT, "compare", "--gait", gait, "--filter", "5-imu", "1-imu", "--out", tmp])
        assert code == EXIT_OK
        with open(os.path.join(tmp, "comparison.json"), "r", encoding="utf-8") as f:
            results = json.load(f)
        assert list(results) == ["1-imu", "5-imu"]
        errors = pd.read_csv(os.path.join(tmp, "errors.csv"), skiprows=1)
        assert {"t", "1-imu_xy_err", "5-imu_z_err"} <= set(errors.columns)
        assert os.path.exists(os.path.join(tmp, "trajectory_5-imu.csv"))


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            if name.endswith("_20s") and not SLOW:
                continue
            fn()
            print(f"✅ {name}")
