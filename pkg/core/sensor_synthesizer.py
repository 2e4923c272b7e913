# core/sensor_synthesizer.py
import numpy as np
import pandas as pd

from config.run_config import NoiseConfig
from config.settings import settings
from core.gait_simulator import GroundTruth
from core.manifold import E_Z, so3_exp_batch
from core.robot_model import KinematicChain
from core.sensor_log import sensor_log_columns


def bilinear_forces(load: np.ndarray, toe_fraction: np.ndarray, left_fraction: float = 0.5) -> np.ndarray:
    """Split a vertical load over heel-left, heel-right, toe-right, toe-left sensors"""
    u = np.asarray(toe_fraction, dtype=float)
    lft = left_fraction
    F = np.asarray(load, dtype=float)
    return np.column_stack([F * (1 - u) * lft, F * (1 - u) * (1 - lft), F * u * (1 - lft), F * u * lft])


def _brownian(rng: np.random.Generator, shape, density: float, dt: float) -> np.ndarray:
    """Random walk starting at zero, one row per tick"""
    steps = density * np.sqrt(dt) * rng.standard_normal(shape)
    steps[0] = 0.0
    return np.cumsum(steps, axis=0)


def synthesize_sensors(truth: GroundTruth, chain: KinematicChain, noise: NoiseConfig, seed: int,
                       gravity: float = None, with_tilt: bool = True) -> pd.DataFrame:
    """Sensor log table (one row per tick) generated from the truth.

    Gyro and accelerometer follow u_g = ω + b_g + η_g and
    u_a = Rᵀ(a - g) + b_a + η_a with white-noise densities and Brownian
    biases; tilt channels are the true tilt perturbed in the B(R) basis.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    g = np.array([0.0, 0.0, -(settings.GRAVITY if gravity is None else gravity)])
    n = truth.n
    dt = float(np.median(np.diff(truth.t))) if n > 1 else 1.0 / settings.SAMPLE_RATE_HZ
    names = truth.names
    if names != list(chain.imu_names):
        raise ValueError("ground truth and chain disagree on instrumented links")
    m = len(names)
    RT = np.swapaxes(truth.R, -1, -2)

    b_g = _brownian(rng, (n, m, 3), noise.gyro_bias_walk, dt)
    b_a = _brownian(rng, (n, m, 3), noise.accel_bias_walk, dt)
    gyro = truth.omega + b_g + noise.gyro_noise / np.sqrt(dt) * rng.standard_normal((n, m, 3))
    specific = np.einsum("nkij,nkj->nki", RT, truth.accel - g)
    accel = specific + b_a + noise.accel_noise / np.sqrt(dt) * rng.standard_normal((n, m, 3))
    angles = truth.angles + noise.joint_std * rng.standard_normal(truth.angles.shape)

    forces = []
    for foot in chain.feet:
        f = bilinear_forces(truth.load[foot], truth.cop_fraction[foot])
        f = f + noise.force_std * rng.standard_normal(f.shape)
        forces.append(np.clip(f, 0.0, None))

    blocks = [truth.t[:, None], gyro.reshape(n, 3 * m), accel.reshape(n, 3 * m), angles] + forces
    if with_tilt:
        tilt = RT @ E_Z  # (n, m, 3)
        nu = noise.tilt_std * rng.standard_normal((n, m, 2))
        # basis columns are the first two rows of R, i.e. R[..., :2, :]ᵀ
        axis = np.einsum("nkcj,nkc->nkj", truth.R[..., :2, :], nu)
        rot = so3_exp_batch(axis.reshape(-1, 3)).reshape(n, m, 3, 3)
        tilted = np.einsum("nkij,nkj->nki", rot, tilt)
        tilted /= np.linalg.norm(tilted, axis=-1, keepdims=True)
        blocks.append(tilted.reshape(n, 3 * m))
    return pd.DataFrame(np.hstack(blocks), columns=sensor_log_columns(chain, with_tilt))
