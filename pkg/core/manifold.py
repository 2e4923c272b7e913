# core/manifold.py
"""Perturbation calculus on SO(3), S2 and Euclidean factors.

Rotations are plain 3x3 numpy arrays and unit vectors plain 3-vectors.
R ⊕ δ = R Exp(δ), R1 ⊖ R2 = Log(R2ᵀ R1), u ⊕ δ = Exp(B(u) δ) u.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import polar

SMALL_ANGLE = 1e-6
LOG_DOMAIN_MARGIN = 1e-6
ANTIPODAL_TOL = 1e-8
ORTHONORMAL_TOL = 1e-9
SKEW_TOL = 1e-9
UNIT_TOL = 1e-6

E_Z = np.array([0.0, 0.0, 1.0])


class ManifoldDomainError(ValueError):
    """Raised when an operation leaves its principal domain (log near π, antipodal vectors)"""


def hat(v) -> np.ndarray:
    """Cross-product matrix: hat(v) @ w == np.cross(v, w)"""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"hat expects a 3-vector, got shape {v.shape}")
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def hat_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(M, tol: float = SKEW_TOL) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError(f"vee expects a 3x3 matrix, got shape {M.shape}")
    if np.max(np.abs(M + M.T)) > tol:
        raise ValueError("vee expects a skew-symmetric matrix")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def _exp_coefficients(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """sin(θ)/θ and (1 - cos θ)/θ² with a Taylor branch near zero"""
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(safe) / safe)
    half = np.sin(safe / 2.0)
    b = np.where(small, 0.5 - theta ** 2 / 24.0, 2.0 * half * half / (safe * safe))
    return a, b


def so3_exp(delta) -> np.ndarray:
    """Rodrigues formula"""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (3,):
        raise ValueError(f"so3_exp expects a 3-vector, got shape {delta.shape}")
    theta = np.linalg.norm(delta)
    a, b = _exp_coefficients(np.array(theta))
    K = hat(delta)
    return np.eye(3) + float(a) * K + float(b) * (K @ K)


def so3_exp_batch(deltas: np.ndarray) -> np.ndarray:
    """Vectorized Exp over the leading axes of an (..., 3) array"""
    deltas = np.asarray(deltas, dtype=float)
    theta = np.linalg.norm(deltas, axis=-1)
    a, b = _exp_coefficients(theta)
    K = hat_batch(deltas)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta > np.pi - LOG_DOMAIN_MARGIN:
        raise ManifoldDomainError(f"rotation angle {theta:.9f} outside the principal log domain")
    if theta < SMALL_ANGLE:
        return 0.5 * (1.0 + theta ** 2 / 6.0) * w
    return theta / (2.0 * np.sin(theta)) * w


def so3_log_batch(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = np.stack([R[..., 2, 1] - R[..., 1, 2],
                  R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    if np.any(theta > np.pi - LOG_DOMAIN_MARGIN):
        raise ManifoldDomainError("rotation angle outside the principal log domain")
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    factor = np.where(small, 0.5 * (1.0 + theta ** 2 / 6.0), safe / (2.0 * np.sin(safe)))
    return factor[..., None] * w


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of one or many rotations, valid on the whole of SO(3)"""
    R = np.asarray(R, dtype=float)
    w = np.stack([R[..., 2, 1] - R[..., 1, 2],
                  R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    return np.arctan2(0.5 * np.linalg.norm(w, axis=-1),
                      0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0))


def orthonormality_defect(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def normalize_rotation(R: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    """Polar projection back onto SO(3) once the defect exceeds tol"""
    if orthonormality_defect(R) <= tol:
        return R
    U, _ = polar(R)
    if np.linalg.det(U) < 0:
        raise ValueError("cannot project a reflection onto SO(3)")
    return U


def is_rotation(R, tol: float = ORTHONORMAL_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and orthonormality_defect(R) <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def oplus_so3(R: np.ndarray, delta) -> np.ndarray:
    return normalize_rotation(R @ so3_exp(delta))


def ominus_so3(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    return so3_log(R2.T @ R1)


def _check_unit(u: np.ndarray, name: str = "u") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {u.shape}")
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must have unit norm, got {np.linalg.norm(u):.9f}")
    return u


def tangent_basis(u) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to u.

    Completed from the coordinate axis of smallest |u_k|, so the result is
    deterministic for a given u.
    """
    u = _check_unit(u)
    k = int(np.argmin(np.abs(u)))
    e = np.zeros(3)
    e[k] = 1.0
    b1 = e - np.dot(u, e) * u
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(u, b1)
    return np.column_stack([b1, b2])


def rot_between(u, v) -> np.ndarray:
    """Minimal rotation R with R u = v"""
    u = _check_unit(u, "u")
    v = _check_unit(v, "v")
    c = float(np.dot(u, v))
    if 1.0 + c < ANTIPODAL_TOL:
        raise ManifoldDomainError("undefined rotation between antipodal unit vectors")
    K = hat(np.cross(u, v))
    return np.eye(3) + K + (K @ K) / (1.0 + c)


def oplus_s2(u, delta, basis: Optional[np.ndarray] = None) -> np.ndarray:
    B = tangent_basis(u) if basis is None else basis
    out = so3_exp(B @ np.asarray(delta, dtype=float)) @ np.asarray(u, dtype=float)
    return out / np.linalg.norm(out)


def ominus_s2(v, u, basis: Optional[np.ndarray] = None) -> np.ndarray:
    B = tangent_basis(u) if basis is None else basis
    return B.T @ so3_log(rot_between(u, v))


@dataclass(frozen=True)
class ProductManifold:
    """Ordered list of factors, each 'so3', 's2' or ('euclidean', n)"""
    factors: Tuple

    @staticmethod
    def _factor_dim(factor) -> int:
        if factor == "so3":
            return 3
        if factor == "s2":
            return 2
        kind, n = factor
        if kind != "euclidean":
            raise ValueError(f"unknown manifold factor: {factor!r}")
        return int(n)

    @property
    def tangent_dim(self) -> int:
        return sum(self._factor_dim(f) for f in self.factors)

    def _slices(self):
        start = 0
        for f in self.factors:
            n = self._factor_dim(f)
            yield f, slice(start, start + n)
            start += n

    def oplus(self, x: Sequence[np.ndarray], delta: np.ndarray) -> List[np.ndarray]:
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (self.tangent_dim,):
            raise ValueError(f"perturbation must have shape ({self.tangent_dim},)")
        out = []
        for (f, sl), xi in zip(self._slices(), x):
            if f == "so3":
                out.append(oplus_so3(xi, delta[sl]))
            elif f == "s2":
                out.append(oplus_s2(xi, delta[sl]))
            else:
                out.append(np.asarray(xi, dtype=float) + delta[sl])
        return out

    def ominus(self, y: Sequence[np.ndarray], x: Sequence[np.ndarray]) -> np.ndarray:
        parts = []
        for (f, _), yi, xi in zip(self._slices(), y, x):
            if f == "so3":
                parts.append(ominus_so3(yi, xi))
            elif f == "s2":
                parts.append(ominus_s2(yi, xi))
            else:
                parts.append(np.asarray(yi, dtype=float) - np.asarray(xi, dtype=float))
        return np.concatenate(parts) if parts else np.zeros(0)
