# core/filter_core.py
"""Generic error-state Kalman filter machinery.

The error state lives in the tangent space of a product manifold. The
mean is only ever updated by injection (x̂ ⊕ δx̂); there is no error reset.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, expm

from core.manifold import ProductManifold

CONDITION_LIMIT = 1e12
PSEUDO_INVERSE_RTOL = 1e-9


@dataclass
class Diagnostic:
    t: float
    source: str
    message: str


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class LinearizedDynamics:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    dt: float

    def __post_init__(self):
        n = self.F.shape[0]
        if self.F.shape != (n, n):
            raise ValueError("F must be square")
        if self.G.shape[0] != n:
            raise ValueError("G must have as many rows as F")
        p = self.G.shape[1]
        if self.H.shape != (p, p):
            raise ValueError("H must be p x p with p the number of columns of G")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class LinearizedMeasurement:
    C: np.ndarray
    D: np.ndarray
    R: np.ndarray
    innovation: np.ndarray

    def __post_init__(self):
        m = self.innovation.shape[0]
        if self.C.shape[0] != m or self.D.shape[0] != m:
            raise ValueError("C and D must have one row per innovation component")
        q = self.D.shape[1]
        if self.R.shape != (q, q):
            raise ValueError("R must be q x q with q the number of columns of D")
        if np.max(np.abs(self.R - self.R.T), initial=0.0) > 1e-12:
            raise ValueError("measurement noise covariance must be symmetric")


@dataclass
class GaussianBelief:
    """Mean on a product manifold plus covariance in its tangent space"""
    mean: List[np.ndarray]
    covariance: np.ndarray
    manifold: ProductManifold

    def __post_init__(self):
        n = self.manifold.tangent_dim
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n} for this manifold")


def discretize(dyn: LinearizedDynamics) -> Tuple[np.ndarray, np.ndarray]:
    """First-order discretization A = I + FΔt, Q = G H Gᵀ Δt"""
    n = dyn.F.shape[0]
    A = np.eye(n) + dyn.F * dyn.dt
    Q = symmetrize(dyn.G @ dyn.H @ dyn.G.T * dyn.dt)
    return A, Q


def expm_discretize(dyn: LinearizedDynamics) -> Tuple[np.ndarray, np.ndarray]:
    """Exact discretization with Van Loan's method, used as a reference"""
    n = dyn.F.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -dyn.F
    M[:n, n:] = dyn.G @ dyn.H @ dyn.G.T
    M[n:, n:] = dyn.F.T
    E = expm(M * dyn.dt)
    A = E[n:, n:].T
    Q = symmetrize(A @ E[:n, n:])
    return A, Q


def predict_covariance(P: np.ndarray, A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return symmetrize(A @ P @ A.T + Q)


def _gain(P: np.ndarray, C: np.ndarray, S: np.ndarray, degenerate: str) -> Tuple[Optional[np.ndarray], int]:
    """Kalman gain and the number of innovation directions left out of it"""
    PCt = P @ C.T
    if degenerate == "project":
        w, V = np.linalg.eigh(S)
        if w[-1] <= 0:
            return None, len(w)
        keep = w > PSEUDO_INVERSE_RTOL * w[-1]
        Vk = V[:, keep]
        return PCt @ (Vk / w[keep]) @ Vk.T, int(np.count_nonzero(~keep))
    if degenerate != "skip":
        raise ValueError(f"unknown degenerate-measurement policy: {degenerate!r}")
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
        return None, S.shape[0]
    try:
        factor = cho_factor(S)
    except np.linalg.LinAlgError:
        return None, S.shape[0]
    return cho_solve(factor, PCt.T).T, 0


def kalman_update(P: np.ndarray, C: np.ndarray, D: np.ndarray, R: np.ndarray,
                  innovation: np.ndarray,
                  degenerate: str = "skip",
                  diagnostics: Optional[List[Diagnostic]] = None,
                  t: float = float("nan")) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Return (δx̂, P⁺) or None when the innovation covariance is degenerate.

    degenerate='skip' refuses any S with condition number >= 1e12.
    degenerate='project' inverts S on its numerically nonzero eigenspace,
    which handles stacked measurements that are exactly redundant; dropped
    directions are recorded in diagnostics.
    """
    n = P.shape[0]
    if innovation.shape[0] == 0:
        return np.zeros(n), P.copy()
    S = symmetrize(C @ P @ C.T + D @ R @ D.T)
    K, dropped = _gain(P, C, S, degenerate)
    if K is None:
        return None
    if dropped and diagnostics is not None:
        diagnostics.append(Diagnostic(t, "filter-core",
                                      f"{dropped} of {S.shape[0]} innovation directions dropped as redundant"))
    dx = K @ innovation
    P_new = symmetrize((np.eye(n) - K @ C) @ P)
    return dx, P_new


def correct(belief: GaussianBelief, meas: LinearizedMeasurement,
            reset_hook: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
            diagnostics: Optional[List[Diagnostic]] = None,
            t: float = float("nan"),
            degenerate: str = "skip") -> GaussianBelief:
    """Kalman correction with mean injection via ⊕.

    A degenerate innovation covariance leaves the belief unchanged and,
    when a diagnostics list is given, records why.
    """
    result = kalman_update(belief.covariance, meas.C, meas.D, meas.R,
                           meas.innovation, degenerate, diagnostics, t)
    if result is None:
        if diagnostics is not None:
            diagnostics.append(Diagnostic(t, "filter-core",
                                          "ill-conditioned innovation covariance, correction skipped"))
        return belief
    dx, P = result
    if reset_hook is not None:
        P = reset_hook(dx, P)
    mean = belief.manifold.oplus(belief.mean, dx)
    return GaussianBelief(mean=mean, covariance=P, manifold=belief.manifold)


def noop_reset(dx: np.ndarray, P: np.ndarray) -> np.ndarray:
    return P
