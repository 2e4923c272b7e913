# core/gait_simulator.py
"""Synthetic biped walking with heel-toe foot roll.

The pelvis follows a straight or circular path. Feet are scheduled in task
space (toe pivot, swing, heel pivot, flat) and joint angles come from
closed-form leg inverse kinematics, so every link pose is forward
kinematics of the stored joint state.
"""
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from config.run_config import GaitSpec
from core.manifold import so3_exp_batch, so3_log_batch
from core.robot_model import KinematicChain, imu_poses_batch, link_poses_batch, rot_y, rot_z, solve_leg_ik

SWING, TOE, HEEL, FLAT = 0, 1, 2, 3

# deformation injection frequencies (Hz), hip then ankle
HIP_DEFORMATION_HZ = 0.7
ANKLE_DEFORMATION_HZ = 1.3


@dataclass
class GroundTruth:
    """Per-tick truth for every instrumented link and foot"""
    t: np.ndarray                     # (n,)
    names: List[str]                  # instrumented links
    R: np.ndarray                     # (n, N, 3, 3)
    p: np.ndarray                     # (n, N, 3)
    v: np.ndarray                     # (n, N, 3)
    omega: np.ndarray                 # (n, N, 3) body rate held over [t_k, t_k+1)
    accel: np.ndarray                 # (n, N, 3) world acceleration held over [t_k, t_k+1)
    contact: Dict[str, np.ndarray]    # foot -> (n,) bool
    flat: Dict[str, np.ndarray]       # foot -> (n,) bool
    cop: Dict[str, np.ndarray]        # foot -> (n, 3) in the foot link frame
    load: Dict[str, np.ndarray]       # foot -> (n,) N
    cop_fraction: Dict[str, np.ndarray]  # foot -> (n,) heel (0) to toe (1)
    angles: np.ndarray                # (n, n_angles)
    deformations: np.ndarray          # (n, n_deformations, 3) rotation vectors

    @property
    def n(self) -> int:
        return len(self.t)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def pose(self, k: int, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        j = self.index(name)
        return self.R[k, j], self.p[k, j], self.v[k, j]


def smoothstep(x: np.ndarray) -> np.ndarray:
    """Quintic 0→1 with zero first and second derivatives at both ends"""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _smoothstep_integral(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x ** 4 * (2.5 - 3.0 * x + x * x)


def imu_kinematics(t: np.ndarray, R: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Body rate, velocity and world acceleration consistent with a zero-order-hold strapdown step.

    R: (n, ..., 3, 3), p: (n, ..., 3). With ω_k and a_k held over a tick,
    R_{k+1} = R_k Exp(ω_k Δt) and p_{k+1} = p_k + v_k Δt + a_k Δt²/2 hold exactly.
    """
    dt = np.diff(t)
    shape = (-1,) + (1,) * (p.ndim - 1)
    rel = np.swapaxes(R[:-1], -1, -2) @ R[1:]
    omega = np.empty_like(p)
    omega[:-1] = so3_log_batch(rel.reshape(-1, 3, 3)).reshape(rel.shape[:-1]) / dt.reshape(shape)
    omega[-1] = omega[-2]
    # trapezoid recursion v_{k+1} = 2 Δp / Δt - v_k, solved with an alternating sum
    c = 2.0 * np.diff(p, axis=0) / dt.reshape(shape)
    v0 = (-3.0 * p[0] + 4.0 * p[1] - p[2]) / (dt[0] + dt[1])
    sign = (-1.0) ** np.arange(len(t))
    alt = np.concatenate([np.zeros((1,) + p.shape[1:]),
                          np.cumsum(-sign[:-1].reshape(shape) * c, axis=0)])
    v = sign.reshape(shape) * (v0 + alt)
    accel = np.empty_like(p)
    accel[:-1] = np.diff(v, axis=0) / dt.reshape(shape)
    accel[-1] = accel[-2]
    return omega, v, accel


class PelvisPath:
    """Arc length, position and heading of the pelvis over time"""

    def __init__(self, spec: GaitSpec, t_end: float):
        self.spec = spec
        self.t0 = spec.stand_time
        self.t_end = t_end
        self.ramp = spec.ramp_time
        distance = spec.speed * spec.duration
        moving = t_end - self.t0 - self.ramp
        self.cruise = distance / moving if spec.speed > 0 else 0.0

    def envelope(self, t: np.ndarray) -> np.ndarray:
        if self.cruise == 0:
            return np.zeros_like(t)
        if self.ramp == 0:
            return ((t >= self.t0) & (t <= self.t_end)).astype(float)
        return smoothstep((t - self.t0) / self.ramp) * smoothstep((self.t_end - t) / self.ramp)

    def arc_length(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.cruise == 0:
            return np.zeros_like(t)
        if self.ramp == 0:
            return self.cruise * (np.clip(t, self.t0, self.t_end) - self.t0)
        rise = self.ramp * _smoothstep_integral((t - self.t0) / self.ramp)
        cruise = np.clip(np.minimum(t, self.t_end - self.ramp) - (self.t0 + self.ramp), 0.0, None)
        fall = np.where(t > self.t_end - self.ramp,
                        self.ramp * (0.5 - _smoothstep_integral((self.t_end - t) / self.ramp)), 0.0)
        return self.cruise * (rise + cruise + fall)

    def point(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Ground-plane point (…, 3) with z = 0 and heading for arc length s"""
        s = np.asarray(s, dtype=float)
        xy = np.zeros(s.shape + (3,))
        if self.spec.path == "circular":
            r = self.spec.radius
            heading = s / r
            xy[..., 0] = r * np.sin(heading)
            xy[..., 1] = r * (1.0 - np.cos(heading))
        else:
            heading = np.zeros_like(s)
            xy[..., 0] = s
        return xy, heading


def _normal(heading: np.ndarray) -> np.ndarray:
    n = np.zeros(np.shape(heading) + (3,))
    n[..., 0] = -np.sin(heading)
    n[..., 1] = np.cos(heading)
    return n


def step_count(spec: GaitSpec) -> int:
    if spec.speed == 0:
        return 0
    d = spec.double_support_fraction * spec.step_duration
    return max(0, int(np.floor((spec.duration - spec.stand_time - d) / spec.step_duration + 1e-9)))


class FootSchedule:
    """Phase, pose and heel-to-toe CoP fraction of one foot over time"""

    def __init__(self, n: int):
        self.phase = np.full(n, FLAT)
        self.R = np.tile(np.eye(3), (n, 1, 1))
        self.p = np.zeros((n, 3))
        self.u = np.full(n, 0.5)


def _pivot_pose(heading, pitch, edge_world, edge_local) -> Tuple[np.ndarray, np.ndarray]:
    R = rot_z(heading) @ rot_y(pitch)
    return R, edge_world - R @ edge_local


def generate_gait(spec: GaitSpec, chain: KinematicChain) -> GroundTruth:
    """Walk `spec` with `chain`; raises ValueError when a foot target is out of leg reach"""
    spec.validate()
    if set(chain.legs) != {"l", "r"}:
        raise ValueError("gait generation needs a chain with legs 'l' and 'r'")
    n = spec.n_samples
    t = np.arange(n) * spec.dt
    T_s = spec.step_duration
    d = spec.double_support_fraction * T_s
    n_steps = step_count(spec)
    step_times = spec.stand_time + T_s * np.arange(n_steps + 1)
    t_end = step_times[-1] + d if n_steps else spec.duration
    path = PelvisPath(spec, t_end)

    # pelvis: level, heading along the path, sway toward the stance foot, small dip
    s = path.arc_length(t)
    base_xy, heading = path.point(s)
    env = path.envelope(t)
    phase_t = t - spec.stand_time
    sway = -spec.sway_amplitude * env * np.sin(np.pi * phase_t / T_s)
    bob = -spec.bob_amplitude * env * 0.5 * (1.0 - np.cos(2.0 * np.pi * phase_t / T_s))
    p_pelvis = base_xy + sway[:, None] * _normal(heading)
    p_pelvis[:, 2] += bob
    R_pelvis = rot_z(heading)

    feet = {side: chain.legs[side].foot for side in ("l", "r")}
    geometry = {side: chain.feet[feet[side]] for side in ("l", "r")}
    sensors = geometry["l"].sensors
    x_heel, x_toe = float(np.min(sensors[:, 0])), float(np.max(sensors[:, 0]))
    h = -float(np.mean(sensors[:, 2]))
    ground = -spec.pelvis_height
    half_width = {side: float(chain.legs[side].hip_offset[1]) for side in ("l", "r")}
    e_heel = np.array([x_heel, 0.0, -h])
    e_toe = np.array([x_toe, 0.0, -h])

    def foothold(side: str, s_hold: float) -> Tuple[float, np.ndarray]:
        xy, psi = path.point(np.array(s_hold))
        p = xy + half_width[side] * _normal(psi)
        p[2] = ground + h
        return float(psi), p

    schedules = {side: FootSchedule(n) for side in ("l", "r")}
    holds = {side: foothold(side, 0.0) for side in ("l", "r")}
    for side in ("l", "r"):
        psi, p = holds[side]
        schedules[side].R[:] = rot_z(np.array(psi))
        schedules[side].p[:] = p

    for k in range(n_steps):
        side = "l" if k % 2 == 0 else "r"
        sch = schedules[side]
        t_lift, t_land = step_times[k], step_times[k + 1]
        psi0, p0 = holds[side]
        t_mid = t_land + 0.5 * (T_s + d)
        psi1, p1 = foothold(side, float(path.arc_length(np.array(t_mid))))

        toe = (t >= t_lift) & (t < t_lift + d)
        sig = smoothstep((t[toe] - t_lift) / d)
        R, p = _pivot_pose(np.full(sig.shape, psi0), spec.roll_amplitude * sig,
                           p0 + rot_z(np.array(psi0)) @ e_toe, e_toe)
        sch.R[toe], sch.p[toe] = R, p
        sch.phase[toe], sch.u[toe] = TOE, 1.0

        R_start, p_start = _pivot_pose(np.array([psi0]), np.array([spec.roll_amplitude]),
                                       p0 + rot_z(np.array(psi0)) @ e_toe, e_toe)
        R_stop, p_stop = _pivot_pose(np.array([psi1]), np.array([-spec.roll_amplitude]),
                                     p1 + rot_z(np.array(psi1)) @ e_heel, e_heel)
        swing = (t >= t_lift + d) & (t < t_land)
        sigma = (t[swing] - t_lift - d) / (t_land - t_lift - d)
        sig = smoothstep(sigma)
        yaw = psi0 + (np.arctan2(np.sin(psi1 - psi0), np.cos(psi1 - psi0))) * sig
        pitch = spec.roll_amplitude * (1.0 - 2.0 * sig)
        sch.R[swing] = rot_z(yaw) @ rot_y(pitch)
        pos = p_start[0] + (p_stop[0] - p_start[0]) * sig[:, None]
        pos[:, 2] += spec.clearance * 64.0 * sigma ** 3 * (1.0 - sigma) ** 3
        sch.p[swing] = pos
        sch.phase[swing] = SWING

        heel = (t >= t_land) & (t < t_land + d)
        sig = smoothstep((t[heel] - t_land) / d)
        R, p = _pivot_pose(np.full(sig.shape, psi1), -spec.roll_amplitude * (1.0 - sig),
                           p1 + rot_z(np.array(psi1)) @ e_heel, e_heel)
        sch.R[heel], sch.p[heel] = R, p
        sch.phase[heel], sch.u[heel] = HEEL, 0.0

        after = t >= t_land + d
        sch.R[after] = rot_z(np.array(psi1))
        sch.p[after] = p1
        holds[side] = (psi1, p1)

    # CoP rolls heel to toe while flat; it starts at mid-foot when no heel strike precedes
    for side in ("l", "r"):
        sch = schedules[side]
        flat = sch.phase == FLAT
        u = np.full(n, 0.5)
        landings = [step_times[k + 1] for k in range(n_steps) if ("l" if k % 2 == 0 else "r") == side]
        lifts = [step_times[k] for k in range(n_steps) if ("l" if k % 2 == 0 else "r") == side]
        for lift in lifts:
            prior = [x for x in landings if x < lift]
            start = prior[-1] + d if prior else max(lift - (T_s - d), 0.0)
            u0 = 0.0 if prior else 0.5
            window = (t >= start) & (t < lift)
            u[window] = u0 + (1.0 - u0) * (t[window] - start) / (lift - start)
        if landings and (not lifts or landings[-1] > lifts[-1]):
            start = landings[-1] + d
            window = t >= start
            u[window] = 0.5 * np.clip((t[window] - start) / (T_s - d), 0.0, 1.0)
        sch.u[flat] = u[flat]

    # vertical load shared between feet in contact
    w_min = spec.min_load_share
    share = {side: np.where(schedules[side].phase == SWING, 0.0, 1.0) for side in ("l", "r")}
    both = (schedules["l"].phase != SWING) & (schedules["r"].phase != SWING)
    share["l"][both] = share["r"][both] = 0.5
    for k in range(n_steps + 1 if n_steps else 0):
        window = (t >= step_times[k]) & (t < step_times[k] + d) & both
        sig = smoothstep((t[window] - step_times[k]) / d)
        trailing = "l" if k % 2 == 0 else "r"
        leading = "r" if trailing == "l" else "l"
        if k == n_steps:
            # final landing settles to an even split
            leading = "l" if (k - 1) % 2 == 0 else "r"
            trailing = "r" if leading == "l" else "l"
            lead = w_min + (0.5 - w_min) * sig
        else:
            lead = w_min + (1.0 - 2.0 * w_min) * sig
        share[leading][window] = lead
        share[trailing][window] = 1.0 - lead

    # deformations, then inverse kinematics of each leg
    nd = chain.n_deformations
    def_vec = np.zeros((n, nd, 3))
    if spec.deformation_amplitude > 0:
        for idx, side in enumerate(("l", "r")):
            leg = chain.legs[side]
            offset = np.pi * idx
            def_vec[:, leg.hip_deformation, 0] = spec.deformation_amplitude * env * np.sin(
                2.0 * np.pi * HIP_DEFORMATION_HZ * t + offset)
            def_vec[:, leg.ankle_deformation, 1] = spec.deformation_amplitude * env * np.sin(
                2.0 * np.pi * ANKLE_DEFORMATION_HZ * t + offset)
    D = so3_exp_batch(def_vec.reshape(-1, 3)).reshape(n, nd, 3, 3)

    angles = np.zeros((n, chain.n_angles))
    for side in ("l", "r"):
        leg = chain.legs[side]
        sch = schedules[side]
        R_hip = R_pelvis @ D[:, leg.hip_deformation]
        p_hip = p_pelvis + np.einsum("nij,j->ni", R_pelvis, leg.hip_offset)
        R_ankle = sch.R @ np.swapaxes(D[:, leg.ankle_deformation], -1, -2)
        angles[:, list(leg.joints)] = solve_leg_ik(leg, R_hip, p_hip, R_ankle, sch.p)

    R_links, p_links = link_poses_batch(chain, angles, D)
    names = list(chain.imu_names)
    R_rel, p_rel = imu_poses_batch(chain, R_links, p_links, names)
    R = R_pelvis[:, None] @ R_rel
    p = p_pelvis[:, None] + np.einsum("nij,nkj->nki", R_pelvis, p_rel)
    omega, v, accel = imu_kinematics(t, R, p)

    contact, flat, cop, load, fraction = {}, {}, {}, {}, {}
    for side in ("l", "r"):
        foot = feet[side]
        sch = schedules[side]
        contact[foot] = sch.phase != SWING
        flat[foot] = sch.phase == FLAT
        fraction[foot] = np.where(contact[foot], sch.u, 0.0)
        c = np.zeros((n, 3))
        c[:, 0] = x_heel + sch.u * (x_toe - x_heel)
        c[:, 2] = -h
        cop[foot] = np.where(contact[foot][:, None], c, 0.0)
        load[foot] = spec.body_weight * share[side]
    return GroundTruth(t=t, names=names, R=R, p=p, v=v, omega=omega, accel=accel,
                       contact=contact, flat=flat, cop=cop, load=load, cop_fraction=fraction,
                       angles=angles, deformations=def_vec)


def pelvis_heading(truth: GroundTruth, name: str = None) -> np.ndarray:
    """Unwrapped yaw of an instrumented link over the run"""
    j = truth.index(name or truth.names[0])
    return np.unwrap(np.arctan2(truth.R[:, j, 1, 0], truth.R[:, j, 0, 0]))

