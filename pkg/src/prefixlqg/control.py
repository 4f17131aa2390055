"""Plant model, control Riccati equation and Kalman filter covariance recursions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonStabilizable

__all__ = [
    "PlantModel",
    "ControlSolution",
    "EstimatorGains",
    "solve_control_dare",
    "filter_prior_sequence",
    "is_stabilizable",
    "spectral_radius",
]

RANK_TOL = 1e-10


def _as_matrix(x, name):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def spectral_radius(M):
    M = np.atleast_2d(M)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stabilizable(A, B, tol=RANK_TOL):
    """PBH test: rank [A - lam I, B] = m for every eigenvalue with |lam| >= 1."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    m = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        sv = np.linalg.svd(np.hstack([A - lam * np.eye(m), B]), compute_uv=False)
        if np.sum(sv > tol * max(1.0, sv[0])) < m:
            return False
    return True


def _is_psd(M, tol=1e-10):
    return bool(np.min(np.linalg.eigvalsh(M)) >= -tol * max(1.0, np.abs(M).max()))


@dataclass(frozen=True)
class PlantModel:
    """x_{t+1} = A x_t + B u_t + w_t with w_t ~ N(0, W), x_0 ~ N(0, X0).

    ``Q`` and ``Rcost`` weight the stage cost ||x_{t+1}||_Q^2 + ||u_t||_R^2 and
    ``gamma`` is the admissible time-average LQG cost.
    """

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    X0: np.ndarray
    Q: np.ndarray
    Rcost: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("A", "B", "W", "X0", "Q", "Rcost"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        m = self.A.shape[0]
        if self.A.shape != (m, m):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != m:
            raise ValueError(f"B must have {m} rows, got {self.B.shape}")
        nu = self.B.shape[1]
        for name, shape in (("W", (m, m)), ("X0", (m, m)), ("Q", (m, m)), ("Rcost", (nu, nu))):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must be {shape}, got {getattr(self, name).shape}")
        for name in ("W", "X0", "Q", "Rcost"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if not _is_psd(M):
                raise ValueError(f"{name} must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.W)) <= 0:
            raise ValueError("W must be positive definite")
        if np.min(np.linalg.eigvalsh(self.Rcost)) <= 0:
            raise ValueError("Rcost must be positive definite")
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]

    @classmethod
    def scalar(cls, a, b, w, q, r, gamma, x0=1.0):
        return cls(A=[[a]], B=[[b]], W=[[w]], X0=[[x0]], Q=[[q]], Rcost=[[r]], gamma=gamma)

    def with_gamma(self, gamma):
        return PlantModel(self.A, self.B, self.W, self.X0, self.Q, self.Rcost, gamma)


@dataclass(frozen=True)
class ControlSolution:
    S: np.ndarray
    K: np.ndarray
    Theta: np.ndarray
    minCost: float
    iterations: int = 0


@dataclass(frozen=True)
class EstimatorGains:
    """Test-channel measurement y = C x + v, v ~ (0, V), and the steady-state filter."""

    C: np.ndarray
    V: np.ndarray
    J: np.ndarray
    L: np.ndarray
    Rcl: np.ndarray
    Phat: np.ndarray
    PhatPlus: np.ndarray
    extra: dict = field(default_factory=dict, compare=False)


def _riccati_map(A, B, Q, R, S):
    BtS = B.T @ S
    G = BtS @ B + R
    return Q + A.T @ S @ A - (A.T @ S @ B) @ np.linalg.solve(G, BtS @ A)


def solve_control_dare(plant, rtol=1e-12, max_iter=1_000_000):
    """Stabilizing solution of A'SA - S - A'SB(B'SB+R)^-1 B'SA + Q = 0.

    Solved by fixed-point iteration of the Riccati map started at ``Q``.
    Returns ``K = -(B'SB+R)^-1 B'SA`` and ``Theta = K'(B'SB+R)K``.
    """
    A, B, Q, R = plant.A, plant.B, plant.Q, plant.Rcost
    if not is_stabilizable(A, B):
        raise NonStabilizable("(A, B) fails the PBH stabilizability test")
    S = Q.copy()
    for it in range(1, max_iter + 1):
        S_new = _riccati_map(A, B, Q, R, S)
        S_new = 0.5 * (S_new + S_new.T)
        if not np.all(np.isfinite(S_new)):
            raise NonStabilizable("Riccati iteration diverged")
        delta = np.linalg.norm(S_new - S)
        S = S_new
        if delta <= rtol * max(1.0, np.linalg.norm(S)):
            break
    else:
        raise NonStabilizable(f"Riccati iteration did not converge in {max_iter} steps")
    # one polishing step keeps the residual at rounding level
    S = _riccati_map(A, B, Q, R, S)
    S = 0.5 * (S + S.T)
    G = B.T @ S @ B + R
    K = -np.linalg.solve(G, B.T @ S @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NonStabilizable("A + BK is not stable; (Q, A) is likely not detectable")
    Theta = K.T @ G @ K
    Theta = 0.5 * (Theta + Theta.T)
    return ControlSolution(S=S, K=K, Theta=Theta, minCost=float(np.trace(S @ plant.W)),
                           iterations=it)


def dare_residual(plant, S):
    """Frobenius norm of the control DARE residual at ``S``."""
    A, B, Q, R = plant.A, plant.B, plant.Q, plant.Rcost
    res = A.T @ S @ A - S - A.T @ S @ B @ np.linalg.solve(B.T @ S @ B + R, B.T @ S @ A) + Q
    return float(np.linalg.norm(res))


def filter_prior_sequence(plant, gains, T, gain="riccati"):
    """Prior error covariances P_{t|t-1} for t = 0..T, starting from P_{0|-1} = X0.

    ``gain="riccati"`` runs the optimal (time-varying gain) Kalman recursion.
    ``gain="fixed"`` propagates the covariance of the filter that always uses
    the steady-state gain J, which is what the closed loop actually runs.
    Both converge to ``gains.PhatPlus``.
    """
    A, W = plant.A, plant.W
    C, V = gains.C, gains.V
    m = A.shape[0]
    P = plant.X0.copy()
    out = [P]
    if gain == "fixed":
        IJC = np.eye(m) - gains.J @ C
        JVJ = gains.J @ V @ gains.J.T
    for _ in range(T):
        if gain == "riccati":
            S = C @ P @ C.T + V
            post = P - P @ C.T @ np.linalg.solve(S, C @ P)
        elif gain == "fixed":
            post = IJC @ P @ IJC.T + JVJ
        else:
            raise ValueError(f"unknown gain mode {gain!r}")
        P = A @ post @ A.T + W
        P = 0.5 * (P + P.T)
        out.append(P)
    return out
