# core/metrics.py
"""Trajectory evaluation against ground truth in a shared world frame.

No SE(3) re-alignment is applied: estimate and truth share the initial
pose convention, so drift shows up directly.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from core.manifold import rotation_angle

ALIGN_TOLERANCE_S = 0.002
RPE_WINDOW_S = 0.5
METRICS_FORMAT = "multi-imu-metrics v1"


@dataclass
class TrajectoryRecord:
    t: np.ndarray                   # (n,) s
    p: np.ndarray                   # (n, 3) m
    R: Optional[np.ndarray] = None  # (n, 3, 3)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (len(self.t), 3):
            raise ValueError("positions must be (n, 3) with one row per timestamp")
        if self.R is not None and self.R.shape != (len(self.t), 3, 3):
            raise ValueError("rotations must be (n, 3, 3) with one per timestamp")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def take(self, idx: np.ndarray) -> "TrajectoryRecord":
        return TrajectoryRecord(self.t[idx], self.p[idx], None if self.R is None else self.R[idx])


def align(est: TrajectoryRecord, truth: TrajectoryRecord,
          tolerance: float = ALIGN_TOLERANCE_S) -> Tuple[TrajectoryRecord, TrajectoryRecord]:
    """Pair every estimate sample with the nearest truth sample within tolerance"""
    if len(est.t) == 0 or len(truth.t) == 0:
        raise ValueError("empty trajectory")
    right = np.clip(np.searchsorted(truth.t, est.t), 0, len(truth.t) - 1)
    left = np.clip(right - 1, 0, len(truth.t) - 1)
    nearest = np.where(np.abs(truth.t[left] - est.t) <= np.abs(truth.t[right] - est.t), left, right)
    ok = np.abs(truth.t[nearest] - est.t) <= tolerance + 1e-12
    if not np.any(ok):
        raise ValueError("estimate and truth do not overlap in time")
    return est.take(np.flatnonzero(ok)), truth.take(nearest[ok])


def ate(est: TrajectoryRecord, truth: TrajectoryRecord) -> float:
    """RMS position error (m)"""
    e, g = align(est, truth)
    return float(np.sqrt(np.mean(np.sum((e.p - g.p) ** 2, axis=1))))


def rpe(est: TrajectoryRecord, truth: TrajectoryRecord, window: float = RPE_WINDOW_S) -> float:
    """Median translation error of relative displacements over a sliding window (m)"""
    e, g = align(est, truth)
    j = np.searchsorted(e.t, e.t + window - 1e-9)
    valid = j < len(e.t)
    if not np.any(valid):
        raise ValueError(f"trajectory shorter than the {window} s window")
    i = np.flatnonzero(valid)
    j = j[valid]
    diff = (e.p[j] - e.p[i]) - (g.p[j] - g.p[i])
    return float(np.median(np.linalg.norm(diff, axis=1)))


def avds(est: TrajectoryRecord, truth: TrajectoryRecord, steps: int) -> float:
    """Net vertical drift divided by the step count (mm per step)"""
    if steps < 1:
        raise ValueError("average vertical drift needs at least one step")
    e, g = align(est, truth)
    dz = (e.p[-1, 2] - g.p[-1, 2]) - (e.p[0, 2] - g.p[0, 2])
    return float(abs(dz) / steps * 1000.0)


def _yaw(R: np.ndarray) -> np.ndarray:
    return np.arctan2(R[:, 1, 0], R[:, 0, 0])


def yaw_drift_deg(est: TrajectoryRecord, truth: TrajectoryRecord) -> float:
    e, g = align(est, truth)
    if e.R is None or g.R is None:
        raise ValueError("yaw drift needs orientations")
    err = _yaw(e.R) - _yaw(g.R)
    drift = np.arctan2(np.sin(err[-1] - err[0]), np.cos(err[-1] - err[0]))
    return float(np.degrees(abs(drift)))


def rotation_rms_deg(est: TrajectoryRecord, truth: TrajectoryRecord) -> float:
    e, g = align(est, truth)
    if e.R is None or g.R is None:
        raise ValueError("rotation error needs orientations")
    angles = rotation_angle(np.swapaxes(g.R, -1, -2) @ e.R)
    return float(np.degrees(np.sqrt(np.mean(angles ** 2))))


def count_steps(contact: Dict[str, np.ndarray]) -> int:
    """Touch-down events after the first sample, summed over feet"""
    total = 0
    for flags in contact.values():
        flags = np.asarray(flags, dtype=bool)
        total += int(np.sum(flags[1:] & ~flags[:-1]))
    return total


def error_series(est: TrajectoryRecord, truth: TrajectoryRecord) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample horizontal and vertical position error, for plotting"""
    e, g = align(est, truth)
    d = e.p - g.p
    return e.t, np.linalg.norm(d[:, :2], axis=1), d[:, 2]


def evaluate(est: TrajectoryRecord, truth: TrajectoryRecord, steps: int) -> Dict:
    e, _ = align(est, truth)
    report = {
        "format": METRICS_FORMAT,
        "ate_cm": ate(est, truth) * 100.0,
        "rpe_cm": rpe(est, truth) * 100.0,
        "avds_mm": avds(est, truth, steps) if steps > 0 else None,
        "yaw_drift_deg": None,
        "rot_rms_deg": None,
        "steps": int(steps),
        "samples": int(len(e.t)),
    }
    if est.R is not None and truth.R is not None:
        report["yaw_drift_deg"] = yaw_drift_deg(est, truth)
        report["rot_rms_deg"] = rotation_rms_deg(est, truth)
    return report
