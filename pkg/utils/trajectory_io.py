# utils/trajectory_io.py
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import settings
from core.gait_simulator import GroundTruth
from core.metrics import TrajectoryRecord
from core.robot_model import KinematicChain
from core.sensor_log import LogFormatError, check_rows, read_versioned_csv, write_versioned_csv

TRAJECTORY_FORMAT = "multi-imu-trajectory v1"
GROUND_TRUTH_FORMAT = "multi-imu-ground-truth v1"

_ROT = [f"r{i}{j}" for i in range(3) for j in range(3)]


def pose_columns(link: str) -> List[str]:
    return ([f"{link}_p{a}" for a in "xyz"] + [f"{link}_{r}" for r in _ROT]
            + [f"{link}_v{a}" for a in "xyz"])


def trajectory_columns(links: Sequence[str]) -> List[str]:
    cols = ["t"]
    for link in links:
        cols += pose_columns(link)
        cols += [f"{link}_s{kind}_{a}" for kind in ("th", "p", "v") for a in "xyz"]
    return cols


class TrajectoryWriter:
    """Buffers per-tick estimates and appends them to the trajectory CSV in chunks"""

    def __init__(self, path: str, links: Sequence[str], chunk_rows: int = None):
        self.path = path
        self.links = list(links)
        self.columns = trajectory_columns(self.links)
        self.chunk_rows = chunk_rows or settings.LOG_CHUNK_ROWS
        self.rows: List[List[float]] = []
        self.written = 0

    def append(self, t: float, record: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]):
        row = [t]
        for link in self.links:
            R, p, v, std = record[link]
            row += list(p) + list(np.ravel(R)) + list(v) + list(std)
        self.rows.append(row)
        if len(self.rows) >= self.chunk_rows:
            self.flush()

    def flush(self):
        if not self.rows and self.written:
            return
        df = pd.DataFrame(self.rows, columns=self.columns)
        write_versioned_csv(self.path, TRAJECTORY_FORMAT, df, append=self.written > 0)
        self.written += len(self.rows)
        self.rows = []

    def close(self):
        self.flush()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()


def _read_checked(path: str, format_name: str, required: Sequence[str]) -> pd.DataFrame:
    df = read_versioned_csv(path, format_name)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise LogFormatError(f"missing columns {missing[:6]}", line=2)
    check_rows(df.to_numpy(dtype=float), 3)
    return df


def trajectory_links(df: pd.DataFrame) -> List[str]:
    return [c[:-3] for c in df.columns if c.endswith("_px")]


def record_from_frame(df: pd.DataFrame, link: str) -> TrajectoryRecord:
    cols = pose_columns(link)
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise LogFormatError(f"no columns for link {link!r} (missing {missing[:3]})", line=2)
    values = df[cols].to_numpy(dtype=float)
    return TrajectoryRecord(df["t"].to_numpy(dtype=float), values[:, 0:3], values[:, 3:12].reshape(-1, 3, 3))


def read_trajectory(path: str, link: str = None) -> TrajectoryRecord:
    """Trajectory of `link` (default: the first estimated link)"""
    df = _read_checked(path, TRAJECTORY_FORMAT, ["t"])
    links = trajectory_links(df)
    if not links:
        raise LogFormatError("trajectory file has no link columns", line=2)
    return record_from_frame(df, link or links[0])


def ground_truth_columns(chain: KinematicChain) -> List[str]:
    cols = ["t"]
    for name in chain.imu_names:
        cols += pose_columns(name)
    for foot in chain.feet:
        cols += [f"{foot}_contact", f"{foot}_flat", f"{foot}_cop_x", f"{foot}_cop_y", f"{foot}_cop_z", f"{foot}_load"]
    cols += [f"q{k + 1}" for k in range(chain.n_angles)]
    for joint in chain.deformation:
        cols += [f"{joint.name}_d{a}" for a in "xyz"]
    return cols


def ground_truth_frame(truth: GroundTruth, chain: KinematicChain) -> pd.DataFrame:
    n = truth.n
    blocks = [truth.t[:, None]]
    for k, _ in enumerate(truth.names):
        blocks += [truth.p[:, k], truth.R[:, k].reshape(n, 9), truth.v[:, k]]
    for foot in chain.feet:
        blocks += [truth.contact[foot][:, None].astype(float), truth.flat[foot][:, None].astype(float),
                   truth.cop[foot], truth.load[foot][:, None]]
    blocks += [truth.angles, truth.deformations.reshape(n, -1)]
    return pd.DataFrame(np.hstack(blocks), columns=ground_truth_columns(chain))


def write_ground_truth(path: str, truth: GroundTruth, chain: KinematicChain):
    write_versioned_csv(path, GROUND_TRUTH_FORMAT, ground_truth_frame(truth, chain))


def read_ground_truth(path: str, chain: KinematicChain) -> pd.DataFrame:
    return _read_checked(path, GROUND_TRUTH_FORMAT, ground_truth_columns(chain))


def truth_contacts(df: pd.DataFrame, chain: KinematicChain) -> Dict[str, np.ndarray]:
    return {foot: df[f"{foot}_contact"].to_numpy() > 0.5 for foot in chain.feet}


def initial_poses(df: pd.DataFrame, chain: KinematicChain, row: int = 0) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(R, p, v) of every instrumented link at one truth row"""
    poses = {}
    for name in chain.imu_names:
        values = df[pose_columns(name)].iloc[row].to_numpy(dtype=float)
        poses[name] = (values[3:12].reshape(3, 3), values[0:3], values[12:15])
    return poses
