# core/tilt_observer.py
from typing import Optional

import numpy as np

from core.manifold import so3_exp


class ComplementaryTiltObserver:
    """Gyro-propagated tilt pulled toward the normalized accelerometer direction.

    Fallback tilt source for logs that carry no tilt channels.
    """

    def __init__(self, gain: float = 0.02):
        if not 0 < gain <= 1:
            raise ValueError(f"tilt filter gain must be in (0, 1], got {gain}")
        self.gain = gain
        self.tilt: Optional[np.ndarray] = None

    def reset(self, accel: np.ndarray):
        self.tilt = self._direction(accel)

    @staticmethod
    def _direction(accel: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(accel)
        if norm <= 0 or not np.isfinite(norm):
            raise ValueError("accelerometer sample has no usable direction")
        return np.asarray(accel, dtype=float) / norm

    def update(self, gyro: np.ndarray, accel: np.ndarray, dt: float) -> np.ndarray:
        if self.tilt is None:
            self.reset(accel)
            return self.tilt.copy()
        # t = Rᵀe_z evolves as t⁺ = Exp(-ω Δt) t
        predicted = so3_exp(-np.asarray(gyro, dtype=float) * dt) @ self.tilt
        blended = (1.0 - self.gain) * predicted + self.gain * self._direction(accel)
        self.tilt = blended / np.linalg.norm(blended)
        return self.tilt.copy()
