# core/contact.py
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.robot_model import KinematicChain

ANY_SENSOR = "any-sensor"
FLAT_ONLY = "flat-only"
MODES = (ANY_SENSOR, FLAT_ONLY)


@dataclass
class FootForces:
    """Four load-cell readings (N) with their positions in the foot frame"""
    forces: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.forces = np.clip(np.asarray(self.forces, dtype=float), 0.0, None)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.forces.shape != (4,) or self.positions.shape != (4, 3):
            raise ValueError("a foot carries exactly four force sensors")


@dataclass
class ContactStatus:
    in_contact: bool
    cop: Optional[np.ndarray] = None  # foot frame, only meaningful in contact
    lever_arm: Optional[np.ndarray] = None


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"unknown contact mode {mode!r}, expected one of {MODES}")


def _flat_pairs(forces: np.ndarray, level: float) -> bool:
    return bool((forces[0] > level and forces[2] > level) or (forces[1] > level and forces[3] > level))


def detect_contact(forces: FootForces, mode: str = ANY_SENSOR, threshold: float = 20.0) -> bool:
    """any-sensor: strongest sensor above threshold; flat-only: a diagonal pair above it"""
    if threshold <= 0:
        raise ValueError("contact threshold must be positive")
    _check_mode(mode)
    if mode == ANY_SENSOR:
        return bool(np.max(forces.forces) > threshold)
    return _flat_pairs(forces.forces, threshold)


def center_of_pressure(forces: FootForces) -> np.ndarray:
    total = float(np.sum(forces.forces))
    if total <= 0:
        raise ValueError("center of pressure undefined without load")
    return forces.forces @ forces.positions / total


def lever_arm(chain: KinematicChain, foot: str, cop_foot_frame: np.ndarray) -> np.ndarray:
    """Vector from the CoP to the foot IMU origin, in the IMU frame"""
    if foot not in chain.feet:
        raise ValueError(f"unknown foot: {foot}")
    mount = chain.imu(chain.feet[foot].imu)
    return mount.rotation.T @ (mount.translation - np.asarray(cop_foot_frame, dtype=float))


class ContactDetector:
    """Hysteresis plus minimum-dwell debounce around detect_contact.

    Contact engages above threshold + hysteresis and releases below
    threshold - hysteresis. A new state is held for at least `debounce`
    seconds before the opposite transition is accepted.
    """

    def __init__(self, mode: str = ANY_SENSOR, threshold: float = 20.0,
                 hysteresis: float = 5.0, debounce: float = 0.010):
        _check_mode(mode)
        if threshold <= 0 or not 0 <= hysteresis < threshold or debounce < 0:
            raise ValueError("invalid contact detector parameters")
        self.mode = mode
        self.threshold = threshold
        self.hysteresis = hysteresis
        self.debounce = debounce
        self.in_contact: Optional[bool] = None
        self.last_switch = -np.inf

    def _above(self, forces: np.ndarray, level: float) -> bool:
        if self.mode == ANY_SENSOR:
            return bool(np.max(forces) > level)
        return _flat_pairs(forces, level)

    def update(self, t: float, forces: FootForces) -> bool:
        f = forces.forces
        if self.in_contact is None:
            self.in_contact = detect_contact(forces, self.mode, self.threshold)
            self.last_switch = t
            return self.in_contact
        if t - self.last_switch < self.debounce - 1e-12:
            return self.in_contact
        if self.in_contact:
            released = not self._above(f, self.threshold - self.hysteresis)
            if released:
                self.in_contact = False
                self.last_switch = t
        elif self._above(f, self.threshold + self.hysteresis):
            self.in_contact = True
            self.last_switch = t
        return self.in_contact
