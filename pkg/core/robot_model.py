# core/robot_model.py
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.filter_core import Diagnostic
from core.manifold import (ManifoldDomainError, hat, is_rotation, rot_between,
                           so3_exp, so3_exp_batch, so3_log_batch)

SCHEMA_VERSION = 1
JACOBIAN_STEP = 1e-6
# tilt mismatch below this is rounding, not deformation
DEFORMATION_NOISE_FLOOR = 1e-9

# Joint axes of a leg, from the hip outward, that the closed-form IK understands
LEG_AXES = ("z", "x", "y", "y", "y", "x")
_AXIS_VECTORS = {"x": np.array([1.0, 0.0, 0.0]),
                 "y": np.array([0.0, 1.0, 0.0]),
                 "z": np.array([0.0, 0.0, 1.0])}


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # 'revolute' or 'deformation'
    parent: int
    child: int
    index: int  # position among joints of the same kind
    axis: np.ndarray
    offset_rotation: np.ndarray
    offset_translation: np.ndarray


@dataclass(frozen=True)
class ImuMount:
    name: str
    link: int
    rotation: np.ndarray
    translation: np.ndarray


@dataclass(frozen=True)
class FootGeometry:
    name: str
    link: int
    imu: str
    sole: np.ndarray      # (k, 3) polygon in the foot link frame
    sensors: np.ndarray   # (4, 3); pairs (0, 2) and (1, 3) are diagonal


@dataclass(frozen=True)
class LegGeometry:
    side: str
    foot: str
    hip_deformation: int
    ankle_deformation: int
    joints: Tuple[int, ...]  # revolute indices: hip yaw, roll, pitch, knee, ankle pitch, ankle roll
    hip_offset: np.ndarray   # hip center in the root link frame
    thigh: float
    shank: float


@dataclass
class KinematicChain:
    """Tree of links joined by revolute joints and deformation frames"""
    name: str
    links: List[str]
    parents: List[int]
    joints: List[Joint]            # ordered so that joints[k].child == k + 1
    imus: Dict[str, ImuMount]
    feet: Dict[str, FootGeometry]
    base_imu: str
    legs: Dict[str, LegGeometry] = field(default_factory=dict)

    def __post_init__(self):
        self.revolute = sorted((j for j in self.joints if j.kind == "revolute"), key=lambda j: j.index)
        self.deformation = sorted((j for j in self.joints if j.kind == "deformation"), key=lambda j: j.index)
        self.imu_names = list(self.imus)
        self._adjacency = self._build_imu_adjacency()

    @property
    def n_angles(self) -> int:
        return len(self.revolute)

    @property
    def n_deformations(self) -> int:
        return len(self.deformation)

    @property
    def q_dim(self) -> int:
        return self.n_angles + 3 * self.n_deformations

    def link_index(self, name: str) -> int:
        try:
            return self.links.index(name)
        except ValueError:
            raise ValueError(f"unknown link: {name}")

    def imu(self, name: str) -> ImuMount:
        if name not in self.imus:
            raise ValueError(f"unknown instrumented link: {name}")
        return self.imus[name]

    def foot_of_imu(self, imu_name: str) -> Optional[str]:
        for foot in self.feet.values():
            if foot.imu == imu_name:
                return foot.name
        return None

    def _ancestors(self, link: int) -> List[int]:
        chain = [link]
        while self.parents[chain[-1]] >= 0:
            chain.append(self.parents[chain[-1]])
        return chain

    def _path_joints(self, a: int, b: int) -> Tuple[List[int], List[int], List[int]]:
        """Links strictly between a and b, joints climbed from a, joints descended to b"""
        up_a = self._ancestors(a)
        up_b = self._ancestors(b)
        common = next(l for l in up_a if l in up_b)
        side_a = up_a[:up_a.index(common)]
        side_b = up_b[:up_b.index(common)]
        inner = [l for l in side_a[1:] + side_b[1:]]
        if common not in (a, b):
            inner.append(common)
        return inner, [l - 1 for l in side_a], [l - 1 for l in side_b]

    def _build_imu_adjacency(self) -> Dict[str, List[Tuple[str, List[Tuple[int, bool]]]]]:
        """For each IMU, neighbours reachable without crossing another IMU link.

        Each neighbour carries the deformation joints on the path, flagged
        True when the joint is crossed from its child side.
        """
        hosts = {m.link for m in self.imus.values()}
        adjacency = {name: [] for name in self.imus}
        for a in self.imus.values():
            for b in self.imus.values():
                if a.name == b.name:
                    continue
                inner, climbed, descended = self._path_joints(a.link, b.link)
                if any(l in hosts for l in inner):
                    continue
                crossing = [(self.joints[k].index, True) for k in climbed
                            if self.joints[k].kind == "deformation"]
                crossing += [(self.joints[k].index, False) for k in descended
                             if self.joints[k].kind == "deformation"]
                adjacency[a.name].append((b.name, crossing))
        return adjacency

    def traversal(self, start_imu: str) -> List[Tuple[str, str, List[Tuple[int, bool]]]]:
        """Breadth-first IMU-to-IMU steps starting at start_imu"""
        self.imu(start_imu)
        visited = {start_imu}
        queue = deque([start_imu])
        steps = []
        while queue:
            a = queue.popleft()
            for b, crossing in self._adjacency[a]:
                if b in visited:
                    continue
                visited.add(b)
                queue.append(b)
                steps.append((a, b, crossing))
        return steps


@dataclass
class JointState:
    angles: np.ndarray        # (n_angles,) rad
    deformations: np.ndarray  # (n_deformations, 3, 3)

    @classmethod
    def rigid(cls, chain: KinematicChain, angles) -> "JointState":
        angles = np.asarray(angles, dtype=float)
        if angles.shape != (chain.n_angles,):
            raise ValueError(f"expected {chain.n_angles} joint angles, got {angles.shape}")
        return cls(angles, np.tile(np.eye(3), (chain.n_deformations, 1, 1)))

    def with_deformations(self, deformations: np.ndarray) -> "JointState":
        return JointState(self.angles.copy(), np.array(deformations, dtype=float))

    def validate(self, chain: KinematicChain):
        if self.angles.shape != (chain.n_angles,):
            raise ValueError(f"expected {chain.n_angles} joint angles, got {self.angles.shape}")
        if self.deformations.shape != (chain.n_deformations, 3, 3):
            raise ValueError("deformation count does not match the chain")
        for D in self.deformations:
            if not is_rotation(D, 1e-6):
                raise ValueError("deformations must be rotations")


def _vector(value, name: str, size: int = 3) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} components")
    return arr


def chain_from_dict(doc: Dict) -> KinematicChain:
    """Build and validate a chain from a robot description document"""
    allowed = {"schema_version", "name", "links", "joints", "imus", "feet", "base_imu", "legs"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown keys in robot description: {sorted(unknown)}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"robot description schema_version must be {SCHEMA_VERSION}")

    links = list(doc["links"])
    if len(set(links)) != len(links):
        raise ValueError("duplicate link names")
    index = {name: k for k, name in enumerate(links)}
    parents = [-1] * len(links)
    by_child = {}
    counters = {"revolute": 0, "deformation": 0}
    for spec in doc["joints"]:
        kind = spec["kind"]
        if kind not in counters:
            raise ValueError(f"joint {spec['name']}: unknown kind {kind!r}")
        parent, child = spec["parent"], spec["child"]
        if parent not in index or child not in index:
            raise ValueError(f"joint {spec['name']} references an unknown link")
        if index[parent] >= index[child]:
            raise ValueError(f"joint {spec['name']}: links must be listed parents first")
        if child in by_child:
            raise ValueError(f"link {child} has more than one parent joint")
        axis = np.zeros(3)
        if kind == "revolute":
            axis = _vector(spec["axis"], f"{spec['name']} axis")
            axis = axis / np.linalg.norm(axis)
        by_child[child] = Joint(
            name=spec["name"], kind=kind, parent=index[parent], child=index[child],
            index=counters[kind], axis=axis,
            offset_rotation=so3_exp(_vector(spec.get("offset_rotation", [0, 0, 0]), "offset_rotation")),
            offset_translation=_vector(spec.get("offset_translation", [0, 0, 0]), "offset_translation"))
        counters[kind] += 1
        parents[index[child]] = index[parent]
    if len(by_child) != len(links) - 1:
        raise ValueError("every link except the root needs exactly one parent joint")
    # Stored in link order; j.index keeps the declaration order (q1..qn)
    joints = [by_child[name] for name in links[1:]]

    imus = {}
    for spec in doc["imus"]:
        if spec["link"] not in index:
            raise ValueError(f"imu {spec['name']} mounted on unknown link {spec['link']}")
        mount = ImuMount(spec["name"], index[spec["link"]],
                         so3_exp(_vector(spec.get("mount_rotation", [0, 0, 0]), "mount_rotation")),
                         _vector(spec.get("mount_translation", [0, 0, 0]), "mount_translation"))
        if mount.name in imus:
            raise ValueError(f"duplicate imu {mount.name}")
        if any(m.link == mount.link for m in imus.values()):
            raise ValueError(f"link {spec['link']} carries more than one imu")
        imus[mount.name] = mount

    feet = {}
    for spec in doc["feet"]:
        sensors = np.asarray(spec["sensors"], dtype=float)
        if sensors.shape != (4, 3):
            raise ValueError(f"foot {spec['name']} needs exactly four force sensors")
        if spec["imu"] not in imus or imus[spec["imu"]].link != index[spec["link"]]:
            raise ValueError(f"foot {spec['name']} must be instrumented with an imu on its link")
        feet[spec["name"]] = FootGeometry(spec["name"], index[spec["link"]], spec["imu"],
                                          np.asarray(spec["sole"], dtype=float), sensors)
    if len(feet) != 2:
        raise ValueError("a biped description needs exactly two instrumented feet")
    if doc["base_imu"] not in imus:
        raise ValueError(f"base imu {doc['base_imu']} is not declared")

    chain = KinematicChain(doc.get("name", "robot"), links, parents, joints, imus, feet, doc["base_imu"])
    for spec in doc.get("legs", []):
        chain.legs[spec["side"]] = _leg_from_spec(chain, spec)
    return chain


def _leg_from_spec(chain: KinematicChain, spec: Dict) -> LegGeometry:
    by_name = {j.name: j for j in chain.joints}
    names = spec["joints"]
    if len(names) != 6:
        raise ValueError(f"leg {spec['side']} must list six revolute joints")
    joints = [by_name[n] for n in names]
    for j, axis in zip(joints, LEG_AXES):
        if j.kind != "revolute" or not np.allclose(j.axis, _AXIS_VECTORS[axis]):
            raise ValueError(f"leg {spec['side']}: joint {j.name} must rotate about {axis}")
    hip_def = by_name[spec["hip_deformation"]]
    ankle_def = by_name[spec["ankle_deformation"]]
    if hip_def.parent != 0:
        raise ValueError(f"leg {spec['side']}: hip deformation must hang from the root link")
    knee, ankle = joints[3], joints[4]
    for j in joints + [ankle_def]:
        if not np.allclose(j.offset_rotation, np.eye(3)):
            raise ValueError(f"leg {spec['side']}: joint {j.name} must not carry an offset rotation")
        along_leg = j is knee or j is ankle
        if along_leg and (np.any(j.offset_translation[:2] != 0) or j.offset_translation[2] >= 0):
            raise ValueError(f"leg {spec['side']}: joint {j.name} offset must point straight down")
        if not along_leg and np.any(j.offset_translation != 0):
            raise ValueError(f"leg {spec['side']}: joint {j.name} must not carry an offset translation")
    return LegGeometry(side=spec["side"], foot=spec["foot"],
                       hip_deformation=hip_def.index, ankle_deformation=ankle_def.index,
                       joints=tuple(j.index for j in joints),
                       hip_offset=hip_def.offset_translation.copy(),
                       thigh=float(np.linalg.norm(knee.offset_translation)),
                       shank=float(np.linalg.norm(ankle.offset_translation)))


def load_chain(path: str) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as f:
        return chain_from_dict(json.load(f))


def _axis_rotation_batch(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    K = hat(axis)
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def link_poses_batch(chain: KinematicChain, angles: np.ndarray,
                     deformations: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Poses of every link in the root frame for a batch of joint states.

    angles: (b, n_angles); deformations: (b, n_deformations, 3, 3).
    Returns R (b, L, 3, 3) and p (b, L, 3).
    """
    b = angles.shape[0]
    L = len(chain.links)
    R = np.empty((b, L, 3, 3))
    p = np.empty((b, L, 3))
    R[:, 0] = np.eye(3)
    p[:, 0] = 0.0
    for joint in chain.joints:
        Rp = R[:, joint.parent]
        pre = Rp @ joint.offset_rotation
        if joint.kind == "revolute":
            motion = _axis_rotation_batch(joint.axis, angles[:, joint.index])
        else:
            motion = deformations[:, joint.index]
        R[:, joint.child] = pre @ motion
        p[:, joint.child] = p[:, joint.parent] + Rp @ joint.offset_translation
    return R, p


def imu_poses_batch(chain: KinematicChain, R_links: np.ndarray,
                    p_links: np.ndarray, names: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    """IMU frame poses, shape (b, len(names), 3, 3) and (b, len(names), 3)"""
    Rs, ps = [], []
    for name in names:
        m = chain.imu(name)
        Rl = R_links[:, m.link]
        Rs.append(Rl @ m.rotation)
        ps.append(p_links[:, m.link] + Rl @ m.translation)
    return np.stack(Rs, axis=1), np.stack(ps, axis=1)


def forward_kinematics(chain: KinematicChain, q: JointState, i: str, j: str) -> Tuple[np.ndarray, np.ndarray]:
    """Pose of instrumented link j in the frame of instrumented link i"""
    chain.imu(i)
    chain.imu(j)
    R_links, p_links = link_poses_batch(chain, q.angles[None], q.deformations[None])
    R, p = imu_poses_batch(chain, R_links, p_links, [i, j])
    Ri, Rj = R[0, 0], R[0, 1]
    return Ri.T @ Rj, Ri.T @ (p[0, 1] - p[0, 0])


def _perturbation_batch(chain: KinematicChain, q: JointState, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nominal state followed by ± h along every column of the q parametrization"""
    m = chain.q_dim
    n = chain.n_angles
    angles = np.tile(q.angles, (1 + 2 * m, 1))
    defs = np.tile(q.deformations, (1 + 2 * m, 1, 1, 1))
    cols = np.arange(n)
    angles[1 + 2 * cols, cols] += h
    angles[2 + 2 * cols, cols] -= h
    steps = so3_exp_batch(np.concatenate([h * np.eye(3), -h * np.eye(3)]))
    for d in range(chain.n_deformations):
        for k in range(3):
            c = n + 3 * d + k
            defs[1 + 2 * c, d] = q.deformations[d] @ steps[k]
            defs[2 + 2 * c, d] = q.deformations[d] @ steps[3 + k]
    return angles, defs


def pair_kinematics(chain: KinematicChain, q: JointState, pairs: Sequence[Tuple[str, str]],
                    step: float = JACOBIAN_STEP) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """(kin_R, kin_p, J_R, J_p) for each (i, j) pair from one batched sweep"""
    names = sorted({n for pair in pairs for n in pair}, key=chain.imu_names.index)
    angles, defs = _perturbation_batch(chain, q, step)
    R_links, p_links = link_poses_batch(chain, angles, defs)
    R, p = imu_poses_batch(chain, R_links, p_links, names)
    col = {n: k for k, n in enumerate(names)}
    out = []
    for i, j in pairs:
        Ri, Rj = R[:, col[i]], R[:, col[j]]
        RiT = np.swapaxes(Ri, -1, -2)
        rel_R = RiT @ Rj
        rel_p = np.einsum("bij,bj->bi", RiT, p[:, col[j]] - p[:, col[i]])
        R0 = rel_R[0]
        plus, minus = rel_R[1::2], rel_R[2::2]
        J_R = (so3_log_batch(R0.T @ plus) - so3_log_batch(R0.T @ minus)).T / (2.0 * step)
        J_p = (rel_p[1::2] - rel_p[2::2]).T / (2.0 * step)
        out.append((R0, rel_p[0], J_R, J_p))
    return out


def kinematic_jacobians(chain: KinematicChain, q: JointState, i: str, j: str,
                        step: float = JACOBIAN_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians of kin_ij; columns are angles then 3 per deformation"""
    chain.imu(i)
    chain.imu(j)
    _, _, J_R, J_p = pair_kinematics(chain, q, [(i, j)], step)[0]
    return J_R, J_p


def estimate_deformations(chain: KinematicChain, q: JointState, tilts: Dict[str, np.ndarray],
                          stance_imu: str, diagnostics: Optional[List[Diagnostic]] = None,
                          t: float = float("nan")) -> JointState:
    """Deformation rotations explaining measured tilts, walking out from the stance foot.

    Each deformation frame enclosed by two neighbouring IMUs gets the
    minimal rotation that maps the rigid-model tilt onto the measured one,
    so its component about gravity is never touched. Frames without an
    enclosing pair, or whose tilts are antipodal, keep the value in q.
    """
    if stance_imu not in tilts:
        raise ValueError(f"no tilt available for stance imu {stance_imu}")
    result = q.deformations.copy()
    R_links, _ = link_poses_batch(chain, q.angles[None], np.tile(np.eye(3), (1, chain.n_deformations, 1, 1)))
    R_links = R_links[0]

    def imu_rotation(name):
        m = chain.imus[name]
        return R_links[m.link] @ m.rotation

    for a, b, crossing in chain.traversal(stance_imu):
        if len(crossing) != 1 or a not in tilts or b not in tilts:
            continue
        d, from_child_side = crossing[0]
        joint = chain.deformation[d]
        R_pre = R_links[joint.parent] @ joint.offset_rotation
        R_post = R_links[joint.child]
        Ra, Rb = imu_rotation(a), imu_rotation(b)
        t_a = tilts[a] / np.linalg.norm(tilts[a])
        t_b = tilts[b] / np.linalg.norm(tilts[b])
        try:
            if from_child_side:
                u = (Ra.T @ R_post).T @ t_a
                v = (R_pre.T @ Rb) @ t_b
            else:
                u = (R_post.T @ Rb) @ t_b
                v = (Ra.T @ R_pre).T @ t_a
            u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
            if u @ v > 0 and np.linalg.norm(np.cross(u, v)) < DEFORMATION_NOISE_FLOOR:
                result[d] = np.eye(3)
                continue
            result[d] = rot_between(u, v)
        except ManifoldDomainError:
            if diagnostics is not None:
                diagnostics.append(Diagnostic(t, "robot-model",
                                              f"antipodal tilts across {joint.name}, deformation kept"))
    return q.with_deformations(result)


def rot_x(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1.0
    R[..., 1, 1], R[..., 1, 2] = c, -s
    R[..., 2, 1], R[..., 2, 2] = s, c
    return R


def rot_y(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 1, 1] = 1.0
    R[..., 0, 0], R[..., 0, 2] = c, s
    R[..., 2, 0], R[..., 2, 2] = -s, c
    return R


def rot_z(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 2, 2] = 1.0
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    return R


def solve_leg_ik(leg: LegGeometry, R_hip: np.ndarray, p_hip: np.ndarray,
                 R_ankle: np.ndarray, p_ankle: np.ndarray, reach_margin: float = 1e-3) -> np.ndarray:
    """Closed-form joint angles of a yaw-roll-pitch / knee / pitch-roll leg.

    R_hip, p_hip: hip frame (after the hip deformation), shape (N, 3, 3) and (N, 3).
    R_ankle, p_ankle: frame after the ankle roll joint (before the ankle deformation).
    Returns (N, 6) angles in leg joint order; raises ValueError when the
    ankle target is out of reach.
    """
    A, B = leg.thigh, leg.shank
    r = np.einsum("nji,nj->ni", R_ankle, p_hip - p_ankle)
    C = np.linalg.norm(r, axis=1)
    if np.any(C > A + B - reach_margin) or np.any(C < abs(A - B) + reach_margin):
        worst = float(np.max(C))
        raise ValueError(f"leg {leg.side}: ankle target out of reach "
                         f"(hip-ankle distance {worst:.3f} m, leg length {A + B:.3f} m)")
    q4 = np.arccos(np.clip((C ** 2 - A ** 2 - B ** 2) / (2.0 * A * B), -1.0, 1.0))
    q6 = np.arctan2(r[:, 1], r[:, 2])
    phi = np.arctan2(-A * np.sin(q4), A * np.cos(q4) + B)
    q5 = phi - np.arctan2(r[:, 0], np.hypot(r[:, 1], r[:, 2]))
    M = np.swapaxes(R_hip, -1, -2) @ R_ankle @ rot_x(-q6) @ rot_y(-(q4 + q5))
    q1 = np.arctan2(-M[:, 0, 1], M[:, 1, 1])
    q2 = np.arctan2(M[:, 2, 1], np.hypot(M[:, 0, 1], M[:, 1, 1]))
    q3 = np.arctan2(-M[:, 2, 0], M[:, 2, 2])
    return np.column_stack([q1, q2, q3, q4, q5, q6])
