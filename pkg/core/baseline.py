# core/baseline.py
"""Single-IMU comparison filters.

The base IMU follows the floating model. Every foot in flat contact adds
a constant pose (orientation and position of its IMU frame) to the state,
and the base is corrected with the full kinematic pose of each such foot.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import block_diag

from config.run_config import ContactConfig, InitialStateConfig, NoiseConfig
from config.settings import settings
from core.contact import FLAT_ONLY, ContactDetector, FootForces
from core.estimator import (STATE_DIM, ImuSample, LinkState, gravity_vector, initial_covariance,
                            joint_noise, link_transition, predict_floating, relative_pose_rows, static_tilt)
from core.filter_core import Diagnostic, kalman_update, predict_covariance, symmetrize
from core.manifold import E_Z, ManifoldDomainError, hat, oplus_so3, rot_between, so3_log
from core.robot_model import JointState, KinematicChain, estimate_deformations, pair_kinematics
from core.sensor_log import SensorFrame
from core.tilt_observer import ComplementaryTiltObserver

FOOT_DIM = 6
VARIANTS = ("rigid", "extended")


@dataclass
class BaselineState:
    base: LinkState
    feet: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)  # foot imu -> (R, p)
    covariance: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        n = STATE_DIM + FOOT_DIM * len(self.feet)
        if self.covariance is None:
            self.covariance = np.zeros((n, n))
        if self.covariance.shape != (n, n):
            raise ValueError(f"baseline covariance must be {n}x{n}")

    def foot_block(self, name: str) -> int:
        return STATE_DIM + FOOT_DIM * list(self.feet).index(name)

    def inject(self, dx: np.ndarray) -> "BaselineState":
        feet = {}
        for k, (name, (R, p)) in enumerate(self.feet.items()):
            s = STATE_DIM + FOOT_DIM * k
            feet[name] = (oplus_so3(R, dx[s:s + 3]), p + dx[s + 3:s + 6])
        return BaselineState(self.base.oplus(dx[:STATE_DIM]), feet, self.covariance, self.t)


def baseline_predict(state: BaselineState, imu: ImuSample, dt: float, noise: NoiseConfig,
                     gravity: np.ndarray = None) -> Tuple[BaselineState, np.ndarray, np.ndarray]:
    """Floating base step; foot poses are constants with foothold process noise"""
    pred = predict_floating(state.base, imu, dt, gravity)
    A_b, Q_b = link_transition(pred, noise, dt)
    m = FOOT_DIM * len(state.feet)
    A = block_diag(A_b, np.eye(m))
    Q = block_diag(Q_b, noise.foothold_noise * dt * np.eye(m))
    P = predict_covariance(state.covariance, A, Q)
    feet = {k: (R.copy(), p.copy()) for k, (R, p) in state.feet.items()}
    return BaselineState(pred.state, feet, P, state.t + dt), pred.F, pred.G


def augment_foot(state: BaselineState, name: str, kin, joint_cov: np.ndarray) -> BaselineState:
    """Add a foothold placed at base ∘ kinematics, with covariance through the same map"""
    kin_R, kin_p, J_R, J_p = kin
    Rb, pb = state.base.R, state.base.p
    n = state.covariance.shape[0]
    Jx = np.zeros((FOOT_DIM, n))
    Jx[0:3, 0:3] = kin_R.T
    Jx[3:6, 0:3] = -Rb @ hat(kin_p)
    Jx[3:6, 3:6] = np.eye(3)
    Jn = np.vstack([J_R, Rb @ J_p])
    P = state.covariance
    cross = Jx @ P
    P_new = np.block([[P, cross.T], [cross, Jx @ P @ Jx.T + Jn @ joint_cov @ Jn.T]])
    feet = dict(state.feet)
    feet[name] = (Rb @ kin_R, pb + Rb @ kin_p)
    return BaselineState(state.base, feet, symmetrize(P_new), state.t)


def marginalize_foot(state: BaselineState, name: str) -> BaselineState:
    s = state.foot_block(name)
    keep = np.r_[0:s, s + FOOT_DIM:state.covariance.shape[0]]
    feet = {k: v for k, v in state.feet.items() if k != name}
    return BaselineState(state.base, feet, state.covariance[np.ix_(keep, keep)], state.t)


def baseline_correct(state: BaselineState, q: JointState, chain: KinematicChain, noise: NoiseConfig,
                     feet: Optional[List[str]] = None,
                     diagnostics: Optional[List[Diagnostic]] = None) -> BaselineState:
    """Full-pose correction with the kinematic pose of every (given) foothold"""
    names = list(state.feet) if feet is None else [f for f in feet if f in state.feet]
    if not names:
        return state
    base = chain.base_imu
    kinematics = pair_kinematics(chain, q, [(base, f) for f in names])
    n = state.covariance.shape[0]
    joint_cov = joint_noise(chain, noise)
    C = np.zeros((6 * len(names), n))
    D = np.zeros((6 * len(names), joint_cov.shape[0]))
    innovation = np.zeros(6 * len(names))
    try:
        for k, (name, (kin_R, kin_p, J_R, J_p)) in enumerate(zip(names, kinematics)):
            Rf, pf = state.feet[name]
            y_R, y_p, C_b, C_f = relative_pose_rows(state.base.R, state.base.p, Rf, pf)
            rows = slice(6 * k, 6 * k + 6)
            s = state.foot_block(name)
            C[rows, 0:6] = C_b
            C[rows, s:s + 6] = C_f
            D[rows] = np.vstack([J_R, J_p])
            innovation[6 * k:6 * k + 3] = so3_log(y_R.T @ kin_R)
            innovation[6 * k + 3:6 * k + 6] = kin_p - y_p
    except ManifoldDomainError:
        if diagnostics is not None:
            diagnostics.append(Diagnostic(state.t, "baseline", "foot rotation outside log domain, correction skipped"))
        return state
    result = kalman_update(state.covariance, C, D, joint_cov, innovation, degenerate="skip")
    if result is None:
        if diagnostics is not None:
            diagnostics.append(Diagnostic(state.t, "baseline", "ill-conditioned innovation covariance, correction skipped"))
        return state
    dx, P = result
    corrected = state.inject(dx)
    corrected.covariance = P
    return corrected


class SingleImuEstimator:
    """1-IMU (rigid kinematics) and 1-IMU-EKM (deformations from all tilts) baselines"""

    def __init__(self, chain: KinematicChain, noise: NoiseConfig = None, contact: ContactConfig = None,
                 initial_state: InitialStateConfig = None, variant: str = "rigid",
                 gravity: float = None, tilt_gain: float = None, verbose: bool = None):
        if variant not in VARIANTS:
            raise ValueError(f"baseline variant must be one of {VARIANTS}")
        self.chain = chain
        self.noise = noise or NoiseConfig()
        self.contact_cfg = contact or ContactConfig()
        self.init_cfg = initial_state or InitialStateConfig()
        self.variant = variant
        self.gravity = gravity_vector(gravity)
        self.verbose = settings.VERBOSE if verbose is None else verbose
        self.base = chain.base_imu
        self.detectors = {foot: ContactDetector(FLAT_ONLY, self.contact_cfg.threshold,
                                                self.contact_cfg.hysteresis, self.contact_cfg.debounce)
                          for foot in chain.feet}
        gain = settings.TILT_FILTER_GAIN if tilt_gain is None else tilt_gain
        self.observers = {name: ComplementaryTiltObserver(gain) for name in chain.imu_names}
        self.joint_cov = joint_noise(chain, self.noise)
        self.diagnostics: List[Diagnostic] = []
        self.state: Optional[BaselineState] = None
        self._previous: Optional[SensorFrame] = None

    @property
    def names(self) -> List[str]:
        return [self.base]

    def _flat_feet(self, frame: SensorFrame) -> List[str]:
        flat = []
        for foot, geometry in self.chain.feet.items():
            if self.detectors[foot].update(frame.t, FootForces(frame.forces[foot], geometry.sensors)):
                flat.append(geometry.imu)
        return flat

    def _joint_state(self, frame: SensorFrame, stance: List[str], dt: Optional[float]) -> JointState:
        q = JointState.rigid(self.chain, frame.joint_angles)
        tilts = self._tilts(frame, dt)
        if self.variant == "extended" and stance:
            q = estimate_deformations(self.chain, q, tilts, stance[0], self.diagnostics, frame.t)
        return q

    def _tilts(self, frame: SensorFrame, dt: Optional[float]) -> Dict[str, np.ndarray]:
        if frame.tilts is not None:
            return {n: np.asarray(frame.tilts[n], dtype=float) for n in self.chain.imu_names}
        if self.variant != "extended":
            return {}
        out = {}
        for name, obs in self.observers.items():
            if dt is None:
                obs.reset(frame.accel[name])
                out[name] = obs.tilt.copy()
            else:
                out[name] = obs.update(frame.gyro[name], frame.accel[name], dt)
        return out

    def _start(self, base: LinkState, frame: SensorFrame) -> BaselineState:
        P = initial_covariance(1, self.init_cfg)
        state = BaselineState(base, {}, P, frame.t)
        flat = self._flat_feet(frame)
        q = self._joint_state(frame, flat, None)
        if flat:
            for name, kin in zip(flat, pair_kinematics(self.chain, q, [(self.base, f) for f in flat])):
                state = augment_foot(state, name, kin, self.joint_cov)
        self.state = state
        self._previous = frame
        return state

    def initialize_static(self, frames: List[SensorFrame]) -> BaselineState:
        t_avg = static_tilt(frames, self.base, self.init_cfg.static_window_s)
        return self._start(LinkState(rot_between(t_avg, E_Z), np.zeros(3), np.zeros(3)), frames[0])

    def initialize_from_truth(self, poses: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]],
                              frame: SensorFrame) -> BaselineState:
        if self.base not in poses:
            raise ValueError(f"initial truth lacks the base link {self.base}")
        return self._start(LinkState(*[np.asarray(x, dtype=float) for x in poses[self.base]]), frame)

    def step(self, frame: SensorFrame) -> BaselineState:
        if self.state is None:
            raise ValueError("estimator used before initialization")
        dt = frame.t - self.state.t
        if not dt > 0:
            raise ValueError(f"non-monotone timestamp {frame.t} after {self.state.t}")
        start = len(self.diagnostics)
        prev = self._previous
        imu = ImuSample(prev.gyro[self.base], prev.accel[self.base], prev.t)
        state, _, _ = baseline_predict(self.state, imu, dt, self.noise, self.gravity)
        state.t = frame.t

        flat = self._flat_feet(frame)
        for name in [f for f in state.feet if f not in flat]:
            state = marginalize_foot(state, name)
        q = self._joint_state(frame, flat, dt)
        onset = [f for f in flat if f not in state.feet]
        if onset:
            for name, kin in zip(onset, pair_kinematics(self.chain, q, [(self.base, f) for f in onset])):
                state = augment_foot(state, name, kin, self.joint_cov)
        # a foothold created this tick carries no independent information yet
        held = [f for f in state.feet if f not in onset]
        state = baseline_correct(state, q, self.chain, self.noise, held, self.diagnostics)

        self.state = state
        self._previous = frame
        if self.verbose:
            for d in self.diagnostics[start:]:
                print(f"⚠️ t={d.t:.3f}s [{d.source}] {d.message}")
        return state

    def record(self) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        std = np.sqrt(np.clip(np.diag(self.state.covariance)[:9], 0.0, None))
        b = self.state.base
        return {self.base: (b.R, b.p, b.v, std)}
