# core/sensor_log.py
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import numpy as np
import pandas as pd

from config.settings import settings
from core.robot_model import KinematicChain

SENSOR_LOG_FORMAT = "multi-imu-sensor-log v1"
FLOAT_FORMAT = "%.17g"


class LogFormatError(ValueError):
    """Schema or content problem in a CSV file, with its 1-based line number"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class SensorFrame:
    """One tick of every sensor channel"""
    t: float
    gyro: Dict[str, np.ndarray]
    accel: Dict[str, np.ndarray]
    joint_angles: np.ndarray
    forces: Dict[str, np.ndarray]
    tilts: Optional[Dict[str, np.ndarray]] = None


def sensor_log_columns(chain: KinematicChain, with_tilt: bool = True) -> List[str]:
    cols = ["t"]
    cols += [f"{imu}_g{a}" for imu in chain.imu_names for a in "xyz"]
    cols += [f"{imu}_a{a}" for imu in chain.imu_names for a in "xyz"]
    cols += [f"q{k + 1}" for k in range(chain.n_angles)]
    cols += [f"{foot}_f{k + 1}" for foot in chain.feet for k in range(4)]
    if with_tilt:
        cols += [f"{imu}_tilt_{a}" for imu in chain.imu_names for a in "xyz"]
    return cols


def write_versioned_csv(path: str, format_name: str, df: pd.DataFrame, append: bool = False):
    """CSV preceded by a '# <format> v<n>' comment line"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    if append:
        df.to_csv(path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# {format_name}\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT)


def check_format_line(path: str, format_name: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if first != f"# {format_name}":
        raise LogFormatError(f"expected '# {format_name}', found {first[:60]!r}", line=1)


def read_versioned_csv(path: str, format_name: str, chunksize: Optional[int] = None):
    check_format_line(path, format_name)
    try:
        return pd.read_csv(path, skiprows=1, chunksize=chunksize)
    except pd.errors.ParserError as e:
        raise LogFormatError(str(e))


def check_rows(values: np.ndarray, first_line: int):
    """Reject rows with missing or non-finite fields"""
    bad = ~np.all(np.isfinite(values), axis=1)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise LogFormatError("truncated row or non-numeric value", line=first_line + row)


class SensorLogReader:
    """Streams SensorFrames from a sensor log CSV in bounded chunks"""

    def __init__(self, path: str, chain: KinematicChain, chunk_rows: int = None):
        self.path = path
        self.chain = chain
        self.chunk_rows = chunk_rows or settings.LOG_CHUNK_ROWS
        check_format_line(path, SENSOR_LOG_FORMAT)
        header = pd.read_csv(path, skiprows=1, nrows=0).columns.tolist()
        self.has_tilt = any(c.endswith("_tilt_x") for c in header)
        expected = sensor_log_columns(chain, self.has_tilt)
        if sorted(header) != sorted(expected):
            missing = sorted(set(expected) - set(header))
            extra = sorted(set(header) - set(expected))
            raise LogFormatError(f"column mismatch (missing {missing[:6]}, unexpected {extra[:6]})", line=2)
        self.columns = header
        col = {c: k for k, c in enumerate(header)}
        self._t = col["t"]
        self._gyro = {imu: [col[f"{imu}_g{a}"] for a in "xyz"] for imu in chain.imu_names}
        self._accel = {imu: [col[f"{imu}_a{a}"] for a in "xyz"] for imu in chain.imu_names}
        self._q = [col[f"q{k + 1}"] for k in range(chain.n_angles)]
        self._forces = {foot: [col[f"{foot}_f{k + 1}"] for k in range(4)] for foot in chain.feet}
        self._tilt = ({imu: [col[f"{imu}_tilt_{a}"] for a in "xyz"] for imu in chain.imu_names}
                      if self.has_tilt else None)

    def _frame(self, row: np.ndarray) -> SensorFrame:
        tilts = None
        if self._tilt is not None:
            tilts = {imu: row[idx] for imu, idx in self._tilt.items()}
        return SensorFrame(
            t=float(row[self._t]),
            gyro={imu: row[idx] for imu, idx in self._gyro.items()},
            accel={imu: row[idx] for imu, idx in self._accel.items()},
            joint_angles=row[self._q],
            forces={foot: row[idx] for foot, idx in self._forces.items()},
            tilts=tilts)

    def __iter__(self) -> Iterator[SensorFrame]:
        line = 3  # comment line, header, then data
        last_t = -np.inf
        try:
            for chunk in pd.read_csv(self.path, skiprows=1, chunksize=self.chunk_rows):
                values = chunk.to_numpy(dtype=float)
                check_rows(values, line)
                times = values[:, self._t]
                steps = np.diff(np.concatenate([[last_t], times]))
                if np.any(steps <= 0):
                    bad = int(np.argmax(steps <= 0))
                    raise LogFormatError("timestamps must be strictly increasing", line=line + bad)
                for row in values:
                    yield self._frame(row)
                last_t = times[-1]
                line += len(values)
        except pd.errors.ParserError as e:
            raise LogFormatError(str(e))
        except ValueError as e:
            if isinstance(e, LogFormatError):
                raise
            raise LogFormatError(f"non-numeric value ({e})", line=line)


def frames_to_dataframe(chain: KinematicChain, frames: List[SensorFrame]) -> pd.DataFrame:
    with_tilt = bool(frames) and frames[0].tilts is not None
    rows = []
    for fr in frames:
        row = [fr.t]
        row += [x for imu in chain.imu_names for x in fr.gyro[imu]]
        row += [x for imu in chain.imu_names for x in fr.accel[imu]]
        row += list(fr.joint_angles)
        row += [x for foot in chain.feet for x in fr.forces[foot]]
        if with_tilt:
            row += [x for imu in chain.imu_names for x in fr.tilts[imu]]
        rows.append(row)
    return pd.DataFrame(rows, columns=sensor_log_columns(chain, with_tilt))


def dataframe_to_frames(chain: KinematicChain, df: pd.DataFrame) -> Iterator[SensorFrame]:
    """Frames from an in-memory sensor log, same layout as the CSV"""
    with_tilt = any(c.endswith("_tilt_x") for c in df.columns)
    cols = sensor_log_columns(chain, with_tilt)
    values = df[cols].to_numpy(dtype=float)
    n_imu = len(chain.imu_names)
    nq = chain.n_angles
    feet = list(chain.feet)
    for row in values:
        g = row[1:1 + 3 * n_imu].reshape(n_imu, 3)
        a = row[1 + 3 * n_imu:1 + 6 * n_imu].reshape(n_imu, 3)
        k = 1 + 6 * n_imu
        q = row[k:k + nq]
        k += nq
        f = row[k:k + 4 * len(feet)].reshape(len(feet), 4)
        k += 4 * len(feet)
        tilts = None
        if with_tilt:
            tl = row[k:k + 3 * n_imu].reshape(n_imu, 3)
            tilts = dict(zip(chain.imu_names, tl))
        yield SensorFrame(t=float(row[0]), gyro=dict(zip(chain.imu_names, g)),
                          accel=dict(zip(chain.imu_names, a)), joint_angles=q,
                          forces=dict(zip(feet, f)), tilts=tilts)
