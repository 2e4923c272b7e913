# core/estimator.py
"""Multi-IMU error-state filter for legged robots.

Every instrumented link carries (R, p, v, b_g, b_a). Links follow a
floating inertial model or, while their foot touches the ground, a model
that rotates about the center of pressure. Contact links are corrected with
their measured tilt and with the kinematic relative pose to every floating
link.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from config.run_config import ContactConfig, InitialStateConfig, NoiseConfig
from config.settings import settings
from core.contact import ANY_SENSOR, ContactDetector, ContactStatus, FootForces, center_of_pressure, lever_arm
from core.filter_core import (Diagnostic, GaussianBelief, LinearizedMeasurement, correct,
                              discretize, LinearizedDynamics, predict_covariance)
from core.manifold import (E_Z, ManifoldDomainError, ProductManifold, hat, ominus_s2, oplus_so3,
                           rot_between, so3_exp, so3_log)
from core.robot_model import JointState, KinematicChain, estimate_deformations, forward_kinematics, pair_kinematics
from core.sensor_log import SensorFrame
from core.tilt_observer import ComplementaryTiltObserver

STATE_DIM = 15
MAX_DT = 0.1

TH = slice(0, 3)
PO = slice(3, 6)
VE = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)

I3 = np.eye(3)


def gravity_vector(g: float = None) -> np.ndarray:
    return np.array([0.0, 0.0, -(settings.GRAVITY if g is None else g)])


@dataclass
class LinkState:
    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("R", "p", "v", "b_g", "b_a"):
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)):
                raise ValueError(f"link state field {name} is not finite")
            setattr(self, name, value)

    def oplus(self, delta: np.ndarray) -> "LinkState":
        return LinkState(oplus_so3(self.R, delta[TH]), self.p + delta[PO], self.v + delta[VE],
                         self.b_g + delta[BG], self.b_a + delta[BA])

    def copy(self) -> "LinkState":
        return LinkState(self.R.copy(), self.p.copy(), self.v.copy(), self.b_g.copy(), self.b_a.copy())


@dataclass(frozen=True)
class ImuSample:
    gyro: np.ndarray
    accel: np.ndarray
    t: float = float("nan")

    def __post_init__(self):
        for name in ("gyro", "accel"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (3,) or not np.all(np.isfinite(value)):
                raise ValueError(f"imu {name} sample must be a finite 3-vector")
            object.__setattr__(self, name, value)


class LinkPrediction(NamedTuple):
    """Predicted mean plus continuous Jacobians.

    For a contact link F and G are the reduced (δθ, δp, δb_g, δb_a) model
    and `embedding` maps it back to the full 15-dim error state.
    """
    state: LinkState
    F: np.ndarray
    G: np.ndarray
    embedding: Optional[np.ndarray] = None


@dataclass
class FilterBelief:
    names: List[str]
    links: List[LinkState]
    covariance: np.ndarray
    contacts: Dict[str, ContactStatus]
    t: float

    def __post_init__(self):
        n = STATE_DIM * len(self.links)
        if len(self.names) != len(self.links):
            raise ValueError("one name per link state")
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}")

    def index(self, name: str) -> int:
        return self.names.index(name)

    def block(self, name: str) -> slice:
        k = self.index(name)
        return slice(STATE_DIM * k, STATE_DIM * (k + 1))

    def link(self, name: str) -> LinkState:
        return self.links[self.index(name)]

    def manifold(self) -> ProductManifold:
        return ProductManifold(tuple(f for _ in self.links for f in ("so3", ("euclidean", 12))))

    def to_gaussian(self) -> GaussianBelief:
        mean = []
        for x in self.links:
            mean += [x.R, np.concatenate([x.p, x.v, x.b_g, x.b_a])]
        return GaussianBelief(mean=mean, covariance=self.covariance, manifold=self.manifold())

    def with_gaussian(self, g: GaussianBelief) -> "FilterBelief":
        links = []
        for k in range(len(self.links)):
            R, rest = g.mean[2 * k], g.mean[2 * k + 1]
            links.append(LinkState(R, rest[0:3], rest[3:6], rest[6:9], rest[9:12]))
        return FilterBelief(list(self.names), links, g.covariance, dict(self.contacts), self.t)

    def inject(self, dx: np.ndarray) -> "FilterBelief":
        links = [x.oplus(dx[STATE_DIM * k:STATE_DIM * (k + 1)]) for k, x in enumerate(self.links)]
        return FilterBelief(list(self.names), links, self.covariance, dict(self.contacts), self.t)


def _check_dt(dt: float):
    if not 0 < dt <= MAX_DT:
        raise ValueError(f"prediction step must be in (0, {MAX_DT}] s, got {dt}")


def floating_jacobians(R: np.ndarray, w: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous F (15x15) and G (15x12), noise order [η_g, η_a, η_bg, η_ba]"""
    F = np.zeros((15, 15))
    F[TH, TH] = -hat(w)
    F[TH, BG] = -I3
    F[PO, VE] = I3
    F[VE, TH] = -R @ hat(a)
    F[VE, BA] = -R
    G = np.zeros((15, 12))
    G[TH, 0:3] = -I3
    G[VE, 3:6] = -R
    G[BG, 6:9] = I3
    G[BA, 9:12] = I3
    return F, G


def predict_floating(x: LinkState, imu: ImuSample, dt: float, gravity: np.ndarray = None) -> LinkPrediction:
    """Strapdown step with inputs held from the previous tick"""
    _check_dt(dt)
    g = gravity_vector() if gravity is None else gravity
    w = imu.gyro - x.b_g
    a = imu.accel - x.b_a
    acc = x.R @ a + g
    state = LinkState(R=x.R @ so3_exp(w * dt),
                      p=x.p + x.v * dt + 0.5 * acc * dt * dt,
                      v=x.v + acc * dt,
                      b_g=x.b_g.copy(), b_a=x.b_a.copy())
    F, G = floating_jacobians(x.R, w, a)
    return LinkPrediction(state, F, G, None)


def contact_velocity_map(R: np.ndarray, w: np.ndarray, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(M_θ, M_bg) with δv = M_θ δθ + M_bg δb_g for a link pivoting on its CoP"""
    return -R @ hat(np.cross(w, r)), R @ hat(r)


def contact_jacobians(R: np.ndarray, w: np.ndarray, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduced F (12x12), G (12x12) over (δθ, δp, δb_g, δb_a) and the 15x12 embedding.

    Noise order is [η_g, η_bg, η_ba, η_s].
    """
    M_th, M_bg = contact_velocity_map(R, w, r)
    F = np.zeros((12, 12))
    F[0:3, 0:3] = -hat(w)
    F[0:3, 6:9] = -I3
    F[3:6, 0:3] = M_th
    F[3:6, 6:9] = M_bg
    G = np.zeros((12, 12))
    G[0:3, 0:3] = -I3
    G[3:6, 0:3] = R @ hat(r)
    G[3:6, 9:12] = I3
    G[6:9, 3:6] = I3
    G[9:12, 6:9] = I3
    T = np.zeros((15, 12))
    T[TH, 0:3] = I3
    T[PO, 3:6] = I3
    T[VE, 0:3] = M_th
    T[VE, 6:9] = M_bg
    T[BG, 6:9] = I3
    T[BA, 9:12] = I3
    return F, G, T


def predict_contact(x: LinkState, imu: ImuSample, r: np.ndarray, dt: float) -> LinkPrediction:
    """Link rotating about its center of pressure; the accelerometer is unused"""
    _check_dt(dt)
    r = np.asarray(r, dtype=float)
    if r.shape != (3,) or not np.all(np.isfinite(r)):
        raise ValueError("lever arm must be a finite 3-vector")
    w = imu.gyro - x.b_g
    v = x.R @ np.cross(w, r)
    state = LinkState(R=x.R @ so3_exp(w * dt), p=x.p + v * dt, v=v,
                      b_g=x.b_g.copy(), b_a=x.b_a.copy())
    F, G, T = contact_jacobians(x.R, w, r)
    return LinkPrediction(state, F, G, T)


def floating_noise(noise: NoiseConfig) -> np.ndarray:
    return np.kron(np.diag([noise.gyro_noise ** 2, noise.accel_noise ** 2,
                            noise.gyro_bias_walk ** 2, noise.accel_bias_walk ** 2]), I3)


def contact_noise(noise: NoiseConfig) -> np.ndarray:
    return np.kron(np.diag([noise.gyro_noise ** 2, noise.gyro_bias_walk ** 2,
                            noise.accel_bias_walk ** 2, noise.slippage_std ** 2]), I3)


def _reduced_selection() -> np.ndarray:
    E = np.zeros((12, 15))
    E[0:6, 0:6] = np.eye(6)
    E[6:12, 9:15] = np.eye(6)
    return E


def link_transition(pred: LinkPrediction, noise: NoiseConfig, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Discrete (A, Q) for one link.

    In contact the reduced model is discretized, lifted with the embedding
    and the instantaneous δv noise (gyro through the lever arm, slippage) is
    added to the velocity block.
    """
    if pred.embedding is None:
        return discretize(LinearizedDynamics(pred.F, pred.G, floating_noise(noise), dt))
    A_red, Q_red = discretize(LinearizedDynamics(pred.F, pred.G, contact_noise(noise), dt))
    T = pred.embedding
    A = T @ A_red @ _reduced_selection()
    Q = T @ Q_red @ T.T
    Rr = pred.G[3:6, 0:3]  # R hat(r)
    Q[VE, VE] += Rr @ Rr.T * (noise.gyro_noise ** 2 / dt) + noise.slippage_std ** 2 * I3
    return A, 0.5 * (Q + Q.T)


def assemble_and_predict(belief: FilterBelief, states: Sequence[LinkState],
                         transitions: Sequence[Tuple[np.ndarray, np.ndarray]], t: float) -> FilterBelief:
    if len(states) != len(belief.links) or len(transitions) != len(belief.links):
        raise ValueError("one prediction per link is required")
    A = block_diag(*[a for a, _ in transitions])
    Q = block_diag(*[q for _, q in transitions])
    P = predict_covariance(belief.covariance, A, Q)
    return FilterBelief(list(belief.names), list(states), P, dict(belief.contacts), t)


def tilt_basis(R: np.ndarray) -> np.ndarray:
    """3x2 matrix whose columns are the first two rows of R"""
    return R[:2, :].T.copy()


def tilt_measurement(belief: FilterBelief, name: str, y_t: np.ndarray, tilt_std: float) -> LinearizedMeasurement:
    R = belief.link(name).R
    t_hat = R.T @ E_Z
    B = tilt_basis(R)
    Ht2 = hat(t_hat) @ hat(t_hat)
    C = np.zeros((2, belief.covariance.shape[0]))
    start = belief.block(name).start
    C[:, start:start + 3] = B.T @ Ht2
    D = -B.T @ Ht2 @ B
    y = np.asarray(y_t, dtype=float)
    innovation = ominus_s2(y / np.linalg.norm(y), t_hat, basis=B)
    return LinearizedMeasurement(C=C, D=D, R=tilt_std ** 2 * np.eye(2), innovation=innovation)


def _correct(belief: FilterBelief, meas: LinearizedMeasurement, diagnostics, reset_hook,
             degenerate: str) -> FilterBelief:
    updated = correct(belief.to_gaussian(), meas, reset_hook=reset_hook, diagnostics=diagnostics,
                      t=belief.t, degenerate=degenerate)
    return belief.with_gaussian(updated)


def tilt_correction(belief: FilterBelief, name: str, y_t: np.ndarray, tilt_std: float,
                    diagnostics: Optional[List[Diagnostic]] = None,
                    reset_hook: Optional[Callable] = None) -> FilterBelief:
    try:
        meas = tilt_measurement(belief, name, y_t, tilt_std)
    except ManifoldDomainError:
        if diagnostics is not None:
            diagnostics.append(Diagnostic(belief.t, "estimator", f"antipodal tilt on {name}, correction skipped"))
        return belief
    return _correct(belief, meas, diagnostics, reset_hook, "skip")


def relative_pose_rows(Ri: np.ndarray, pi: np.ndarray, Rj: np.ndarray, pj: np.ndarray):
    """Expected relative pose of j seen from i and its Jacobians.

    Returns (y_R, y_p, C_i, C_j) where C_i acts on (δθᵢ, δpᵢ) and C_j on
    (δθⱼ, δpⱼ); rows are rotation then position.
    """
    y_R = Ri.T @ Rj
    y_p = Ri.T @ (pj - pi)
    C_i = np.zeros((6, 6))
    C_i[0:3, 0:3] = -Rj.T @ Ri
    C_i[3:6, 0:3] = hat(y_p)
    C_i[3:6, 3:6] = -Ri.T
    C_j = np.zeros((6, 6))
    C_j[0:3, 0:3] = I3
    C_j[3:6, 3:6] = Ri.T
    return y_R, y_p, C_i, C_j


def joint_noise(chain: KinematicChain, noise: NoiseConfig) -> np.ndarray:
    return np.diag([noise.joint_std ** 2] * chain.n_angles
                   + [noise.deformation_std ** 2] * (3 * chain.n_deformations))


def relpose_measurement(belief: FilterBelief, pairs: Sequence[Tuple[str, str]],
                        kinematics: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
                        joint_cov: np.ndarray) -> LinearizedMeasurement:
    """All (i, j) pairs stacked into one measurement sharing the joint noise"""
    n = belief.covariance.shape[0]
    m = 6 * len(pairs)
    C = np.zeros((m, n))
    D = np.zeros((m, joint_cov.shape[0]))
    innovation = np.zeros(m)
    for k, ((i, j), (kin_R, kin_p, J_R, J_p)) in enumerate(zip(pairs, kinematics)):
        xi, xj = belief.link(i), belief.link(j)
        y_R, y_p, C_i, C_j = relative_pose_rows(xi.R, xi.p, xj.R, xj.p)
        rows = slice(6 * k, 6 * k + 6)
        si, sj = belief.block(i).start, belief.block(j).start
        C[rows, si:si + 6] += C_i
        C[rows, sj:sj + 6] += C_j
        D[rows] = np.vstack([J_R, J_p])
        innovation[6 * k:6 * k + 3] = so3_log(y_R.T @ kin_R)
        innovation[6 * k + 3:6 * k + 6] = kin_p - y_p
    return LinearizedMeasurement(C=C, D=D, R=joint_cov, innovation=innovation)


def relpose_correction(belief: FilterBelief, pairs: Sequence[Tuple[str, str]], kinematics, joint_cov: np.ndarray,
                       diagnostics: Optional[List[Diagnostic]] = None,
                       reset_hook: Optional[Callable] = None,
                       degenerate: str = "project") -> FilterBelief:
    """Joint relative-pose correction.

    With two feet in contact the stacked pairs are linearly dependent, so
    the innovation covariance is inverted on its range by default.
    """
    if not pairs:
        return belief
    try:
        meas = relpose_measurement(belief, pairs, kinematics, joint_cov)
    except ManifoldDomainError:
        if diagnostics is not None:
            diagnostics.append(Diagnostic(belief.t, "estimator", "relative rotation outside log domain, correction skipped"))
        return belief
    return _correct(belief, meas, diagnostics, reset_hook, degenerate)


def initial_covariance(n_links: int, cfg: InitialStateConfig) -> np.ndarray:
    block = np.concatenate([np.full(3, cfg.orientation_var), np.full(3, cfg.position_var),
                            np.full(3, cfg.velocity_var), np.full(3, cfg.gyro_bias_var),
                            np.full(3, cfg.accel_bias_var)])
    return np.diag(np.tile(block, n_links))


def static_tilt(frames: Sequence[SensorFrame], imu: str, window_s: float) -> np.ndarray:
    """Mean accelerometer direction over the first window_s seconds"""
    if not frames:
        raise ValueError("static initialization needs at least one frame")
    t0 = frames[0].t
    acc = np.array([f.accel[imu] for f in frames if f.t - t0 <= window_s + 1e-9])
    mean = acc.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= 0:
        raise ValueError("accelerometer average has no direction")
    return mean / norm


def foot_contact_status(chain: KinematicChain, foot: str, forces: FootForces, in_contact: bool) -> ContactStatus:
    if not in_contact or np.sum(forces.forces) <= 0:
        return ContactStatus(False)
    cop = center_of_pressure(forces)
    return ContactStatus(True, cop, lever_arm(chain, foot, cop))


class MultiImuEstimator:
    """One filter instance over every IMU of the chain.

    extended=True estimates deformations from the tilts before the
    relative-pose correction; extended=False uses rigid kinematics.
    """

    def __init__(self, chain: KinematicChain, noise: NoiseConfig = None, contact: ContactConfig = None,
                 initial_state: InitialStateConfig = None, extended: bool = True,
                 gravity: float = None, tilt_gain: float = None, verbose: bool = None):
        self.chain = chain
        self.noise = noise or NoiseConfig()
        self.contact_cfg = contact or ContactConfig()
        self.init_cfg = initial_state or InitialStateConfig()
        self.extended = extended
        self.gravity = gravity_vector(gravity)
        self.verbose = settings.VERBOSE if verbose is None else verbose
        self.names = list(chain.imu_names)
        self.detectors = {foot: ContactDetector(ANY_SENSOR, self.contact_cfg.threshold,
                                                self.contact_cfg.hysteresis, self.contact_cfg.debounce)
                          for foot in chain.feet}
        gain = settings.TILT_FILTER_GAIN if tilt_gain is None else tilt_gain
        self.observers = {name: ComplementaryTiltObserver(gain) for name in self.names}
        self.joint_cov = joint_noise(chain, self.noise)
        self.diagnostics: List[Diagnostic] = []
        self.reset_hook: Optional[Callable] = None
        self.belief: Optional[FilterBelief] = None
        self._previous: Optional[Tuple[SensorFrame, Dict[str, ContactStatus]]] = None

    @property
    def variant(self) -> str:
        return "5-imu-ekm" if self.extended else "5-imu"

    def _note(self, start: int):
        if self.verbose:
            for d in self.diagnostics[start:]:
                print(f"⚠️ t={d.t:.3f}s [{d.source}] {d.message}")

    def classify(self, frame: SensorFrame) -> Dict[str, ContactStatus]:
        """Contact status per IMU name; only foot IMUs can be in contact"""
        status = {}
        for foot, geometry in self.chain.feet.items():
            forces = FootForces(frame.forces[foot], geometry.sensors)
            in_contact = self.detectors[foot].update(frame.t, forces)
            status[geometry.imu] = foot_contact_status(self.chain, foot, forces, in_contact)
        return status

    def _tilts(self, frame: SensorFrame, dt: Optional[float]) -> Dict[str, np.ndarray]:
        """Logged tilts when present, else the fallback observers"""
        if frame.tilts is not None:
            return {name: np.asarray(frame.tilts[name], dtype=float) for name in self.names}
        observed = {}
        for name in self.names:
            if dt is None:
                self.observers[name].reset(frame.accel[name])
                observed[name] = self.observers[name].tilt.copy()
            else:
                observed[name] = self.observers[name].update(frame.gyro[name], frame.accel[name], dt)
        return observed

    def _start(self, links: List[LinkState], frame: SensorFrame) -> FilterBelief:
        status = self.classify(frame)
        self._tilts(frame, None)
        P = initial_covariance(len(links), self.init_cfg)
        self.belief = FilterBelief(list(self.names), links, P, status, frame.t)
        self._previous = (frame, status)
        return self.belief

    def initialize_static(self, frames: Sequence[SensorFrame]) -> FilterBelief:
        """Base tilt from averaged accelerometers, yaw and position zero, other links from kinematics"""
        base = self.chain.base_imu
        t_avg = static_tilt(frames, base, self.init_cfg.static_window_s)
        R_base = rot_between(t_avg, E_Z)
        window = [f for f in frames if f.t - frames[0].t <= self.init_cfg.static_window_s + 1e-9]
        q = JointState.rigid(self.chain, np.mean([f.joint_angles for f in window], axis=0))
        links = []
        for name in self.names:
            kin_R, kin_p = forward_kinematics(self.chain, q, base, name)
            links.append(LinkState(R_base @ kin_R, R_base @ kin_p, np.zeros(3)))
        return self._start(links, frames[0])

    def initialize_from_truth(self, poses: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]],
                              frame: SensorFrame) -> FilterBelief:
        missing = [n for n in self.names if n not in poses]
        if missing:
            raise ValueError(f"initial truth lacks links {missing}")
        links = [LinkState(*[np.asarray(x, dtype=float) for x in poses[n]]) for n in self.names]
        return self._start(links, frame)

    def _stance(self, frame: SensorFrame, contacts: List[str]) -> str:
        return max(contacts, key=lambda n: float(np.sum(frame.forces[self.chain.foot_of_imu(n)])))

    def step(self, frame: SensorFrame) -> FilterBelief:
        if self.belief is None:
            raise ValueError("estimator used before initialization")
        dt = frame.t - self.belief.t
        if not dt > 0:
            raise ValueError(f"non-monotone timestamp {frame.t} after {self.belief.t}")
        start = len(self.diagnostics)
        previous, previous_status = self._previous

        states, transitions = [], []
        for name, x in zip(self.names, self.belief.links):
            imu = ImuSample(previous.gyro[name], previous.accel[name], previous.t)
            st = previous_status.get(name)
            if st is not None and st.in_contact:
                pred = predict_contact(x, imu, st.lever_arm, dt)
            else:
                pred = predict_floating(x, imu, dt, self.gravity)
            states.append(pred.state)
            transitions.append(link_transition(pred, self.noise, dt))
        belief = assemble_and_predict(self.belief, states, transitions, frame.t)

        status = self.classify(frame)
        belief.contacts = status
        tilts = self._tilts(frame, dt)
        contacts = [n for n in self.names if n in status and status[n].in_contact]
        if contacts:
            q = JointState.rigid(self.chain, frame.joint_angles)
            if self.extended:
                q = estimate_deformations(self.chain, q, tilts, self._stance(frame, contacts),
                                          self.diagnostics, frame.t)
            for name in contacts:
                belief = tilt_correction(belief, name, tilts[name], self.noise.tilt_std,
                                         self.diagnostics, self.reset_hook)
            floating = [n for n in self.names if n not in contacts]
            pairs = [(i, j) for i in contacts for j in floating]
            if pairs:
                kinematics = pair_kinematics(self.chain, q, pairs)
                belief = relpose_correction(belief, pairs, kinematics, self.joint_cov,
                                            self.diagnostics, self.reset_hook)

        self.belief = belief
        self._previous = (frame, status)
        self._note(start)
        return belief

    def record(self) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """(R, p, v, marginal std of δθ/δp/δv) per link"""
        std = np.sqrt(np.clip(np.diag(self.belief.covariance), 0.0, None))
        out = {}
        for k, (name, x) in enumerate(zip(self.names, self.belief.links)):
            out[name] = (x.R, x.p, x.v, std[STATE_DIM * k:STATE_DIM * k + 9])
        return out
