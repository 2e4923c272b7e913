# test_sensor_log.py
import os
import tempfile

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from config.run_config import GaitSpec, NoiseConfig
from core.gait_simulator import generate_gait
from core.robot_model import load_chain
from core.sensor_log import (SENSOR_LOG_FORMAT, LogFormatError, SensorLogReader, dataframe_to_frames,
                             frames_to_dataframe, sensor_log_columns, write_versioned_csv)
from core.sensor_synthesizer import synthesize_sensors
from utils.trajectory_io import (GROUND_TRUTH_FORMAT, TRAJECTORY_FORMAT, TrajectoryWriter, initial_poses,
                                 read_ground_truth, read_trajectory, record_from_frame, truth_contacts,
                                 write_ground_truth)

ROBOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "robot_biped.json")


def _standing(duration=0.05, with_tilt=True):
    chain = load_chain(ROBOT)
    truth = generate_gait(GaitSpec(speed=0.0, duration=duration), chain)
    return chain, truth, synthesize_sensors(truth, chain, NoiseConfig(), seed=4, with_tilt=with_tilt)


def _append_line(path, text):
    with open(path, "a", encoding="utf-8") as f:
        f.write(text + "\n")


def test_columns():
    chain = load_chain(ROBOT)
    cols = sensor_log_columns(chain)
    assert cols[0] == "t" and cols[1] == "pelvis_gx"
    assert len(cols) == 1 + 30 + 12 + 8 + 15
    assert len(sensor_log_columns(chain, with_tilt=False)) == len(cols) - 15


def test_streamed_frames_match_table():
    chain, _, df = _standing()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "log.csv")
        write_versioned_csv(path, SENSOR_LOG_FORMAT, df)
        with open(path, "r", encoding="utf-8") as f:
            assert f.readline().strip() == f"# {SENSOR_LOG_FORMAT}"
        reader = SensorLogReader(path, chain, chunk_rows=7)
        assert reader.has_tilt
        frames = list(reader)
    assert len(frames) == len(df)
    expected = list(dataframe_to_frames(chain, df))
    for a, b in zip(frames, expected):
        assert a.t == b.t
        assert_allclose(a.gyro["l_tibia"], b.gyro["l_tibia"], rtol=0, atol=0)
        assert_allclose(a.forces["r_foot"], b.forces["r_foot"], rtol=0, atol=0)
        assert_allclose(a.tilts["pelvis"], b.tilts["pelvis"], rtol=0, atol=0)
    assert_allclose(frames_to_dataframe(chain, frames).to_numpy(), df.to_numpy(), rtol=0, atol=0)


def test_log_without_tilt():
    chain, _, df = _standing(with_tilt=False)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "log.csv")
        write_versioned_csv(path, SENSOR_LOG_FORMAT, df)
        reader = SensorLogReader(path, chain)
        assert not reader.has_tilt
        assert next(iter(reader)).tilts is None


def test_truncated_row_names_its_line():
    chain, _, df = _standing()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "log.csv")
        write_versioned_csv(path, SENSOR_LOG_FORMAT, df.iloc[:10])
        _append_line(path, "0.5,1.0,2.0")
        with pytest.raises(LogFormatError) as err:
            list(SensorLogReader(path, chain))
    assert err.value.line == 13
    assert "line 13" in str(err.value)


def test_non_monotone_timestamps():
    chain, _, df = _standing()
    broken = df.iloc[:10].copy()
    broken.loc[5, "t"] = broken.loc[4, "t"]
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "log.csv")
        write_versioned_csv(path, SENSOR_LOG_FORMAT, broken)
        with pytest.raises(LogFormatError) as err:
            list(SensorLogReader(path, chain, chunk_rows=3))
    assert err.value.line == 8


def test_header_problems():
    chain, _, df = _standing()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "log.csv")
        write_versioned_csv(path, SENSOR_LOG_FORMAT, df.drop(columns=["q3"]))
        with pytest.raises(LogFormatError) as err:
            SensorLogReader(path, chain)
        assert err.value.line == 2

        write_versioned_csv(path, "some-other-log v1", df)
        with pytest.raises(LogFormatError) as err:
            SensorLogReader(path, chain)
        assert err.value.line == 1

        with pytest.raises(FileNotFoundError):
            SensorLogReader(os.path.join(tmp, "missing.csv"), chain)


def test_non_numeric_field():
    chain, _, df = _standing()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "log.csv")
        write_versioned_csv(path, SENSOR_LOG_FORMAT, df.iloc[:5])
        _append_line(path, ",".join(["abc"] * len(df.columns)))
        with pytest.raises(LogFormatError):
            list(SensorLogReader(path, chain))


def test_trajectory_writer_chunks():
    names = ["pelvis", "l_foot"]
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "traj.csv")
        with TrajectoryWriter(path, names, chunk_rows=3) as writer:
            for k in range(10):
                record = {n: (np.eye(3), np.array([k, 2.0 * k, 0.5]), np.zeros(3), np.full(9, 0.1))
                          for n in names}
                writer.append(0.001 * k, record)
        pelvis = read_trajectory(path)
        foot = read_trajectory(path, "l_foot")
        with open(path, "r", encoding="utf-8") as f:
            assert f.readline().strip() == f"# {TRAJECTORY_FORMAT}"
        with pytest.raises(LogFormatError):
            read_trajectory(path, "r_foot")
    assert len(pelvis.t) == 10
    assert_allclose(pelvis.p[:, 1], 2.0 * np.arange(10))
    assert_allclose(foot.R, np.tile(np.eye(3), (10, 1, 1)))


def test_ground_truth_file():
    chain, truth, _ = _standing()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "truth.csv")
        write_ground_truth(path, truth, chain)
        with open(path, "r", encoding="utf-8") as f:
            assert f.readline().strip() == f"# {GROUND_TRUTH_FORMAT}"
        df = read_ground_truth(path, chain)
        with pytest.raises(LogFormatError):
            read_trajectory(path)
    assert len(df) == truth.n
    contacts = truth_contacts(df, chain)
    assert all(flags.all() for flags in contacts.values())
    poses = initial_poses(df, chain)
    for name in chain.imu_names:
        R, p, v = truth.pose(0, name)
        assert_allclose(poses[name][0], R, atol=1e-15)
        assert_allclose(poses[name][1], p, atol=1e-15)
    rec = record_from_frame(df, "l_tibia")
    assert_allclose(rec.p, truth.p[:, truth.index("l_tibia")], atol=1e-15)
    assert_allclose(df["l_foot_load"], 350.0)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
