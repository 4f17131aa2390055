"""Directed-information rate lower bound R(gamma) and its optimal test channel.

The bound is the value of

    min  1/2 (-log2 det Pi + log2 det W)
    s.t. Tr(Theta P) + Tr(W S) <= gamma,
         P <= A P A' + W,
         [[P - Pi, P A'], [A P, A P A' + W]] >= 0,

whose optimum equals 1/2 log2(det Phat_+ / det Phat) with Phat_+ = A Phat A' + W.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .control import ControlSolution, EstimatorGains, PlantModel, solve_control_dare
from .errors import DegenerateChannel, InfeasibleBudget, NumericalFailure

__all__ = [
    "RdfSolution",
    "solve_rdf_siso",
    "solve_rdf_mimo",
    "extract_test_channel",
    "determinant_identity_error",
    "constraint_residuals",
    "control_cost",
]


@dataclass(frozen=True)
class RdfSolution:
    Phat: np.ndarray
    PhatPlus: np.ndarray
    Pi: np.ndarray
    rate: float
    gamma: float
    gains: EstimatorGains | None
    controlSol: ControlSolution
    delta: float
    v: float
    gap: float = 0.0
    method: str = "closed-form"

    @property
    def degenerate(self):
        return self.gains is None


def control_cost(sol, plant):
    """Tr(SW) + Tr(Theta Phat): the LQG cost attained by the test channel."""
    cs = sol.controlSol
    return float(np.trace(cs.S @ plant.W) + np.trace(cs.Theta @ sol.Phat))


def _check_budget(plant, cs):
    if not plant.gamma > cs.minCost:
        raise InfeasibleBudget(
            f"gamma={plant.gamma!r} must exceed the minimum LQG cost Tr(SW)={cs.minCost!r}")


def extract_test_channel(Phat, plant, v=1.0, eig_floor=1e-12):
    """Factor Phat^-1 - (A Phat A' + W)^-1 = C' V^-1 C with V = v I.

    Raises DegenerateChannel when the factor is (numerically) zero, i.e. the
    optimum needs no measurement at all.
    """
    if not v > 0:
        raise ValueError("v must be positive")
    A, W = plant.A, plant.W
    m = A.shape[0]
    Phat = np.atleast_2d(np.asarray(Phat, dtype=float))
    PhatPlus = A @ Phat @ A.T + W
    PhatPlus = 0.5 * (PhatPlus + PhatPlus.T)
    Pinv = np.linalg.inv(Phat)
    M = Pinv - np.linalg.inv(PhatPlus)
    M = 0.5 * (M + M.T)
    lam, U = np.linalg.eigh(M)
    scale = np.linalg.norm(Pinv, 2)
    lam = np.where(lam < eig_floor * max(1.0, scale), 0.0, lam)
    if np.all(lam == 0.0):
        raise DegenerateChannel("Phat^-1 - Phat_+^-1 vanishes: the optimum is zero rate")
    C = math.sqrt(v) * np.diag(np.sqrt(lam)) @ U.T
    if m == 1:
        C = np.abs(C)
    V = v * np.eye(m)
    J = PhatPlus @ C.T @ np.linalg.inv(C @ PhatPlus @ C.T + V)
    L = A @ J
    Rcl = A - L @ C
    return EstimatorGains(C=C, V=V, J=J, L=L, Rcl=Rcl, Phat=Phat, PhatPlus=PhatPlus,
                          extra={"M": M, "reconstruction_error":
                                 float(np.linalg.norm(M - C.T @ C / v))})


def _rate_bits(Phat, PhatPlus):
    _, ld_plus = np.linalg.slogdet(PhatPlus)
    _, ld = np.linalg.slogdet(Phat)
    return max(0.0, 0.5 * (ld_plus - ld) / math.log(2.0))


def _finish(plant, cs, Phat, Pi, v, gap, method):
    PhatPlus = plant.A @ Phat @ plant.A.T + plant.W
    PhatPlus = 0.5 * (PhatPlus + PhatPlus.T)
    try:
        gains = extract_test_channel(Phat, plant, v)
        rate = _rate_bits(Phat, PhatPlus)
    except DegenerateChannel:
        gains = None
        rate = 0.0
    return RdfSolution(Phat=Phat, PhatPlus=PhatPlus, Pi=Pi, rate=rate, gamma=plant.gamma, gains=gains,
                       controlSol=cs, delta=math.sqrt(12.0 * v), v=v, gap=gap, method=method)


def solve_rdf_siso(plant, v=1.0, control=None):
    """Closed-form optimum for m = u = 1."""
    if plant.m != 1 or plant.nu != 1:
        raise ValueError("solve_rdf_siso needs a scalar plant")
    cs = control or solve_control_dare(plant)
    _check_budget(plant, cs)
    a = float(plant.A[0, 0])
    w = float(plant.W[0, 0])
    theta = float(cs.Theta[0, 0])
    p_cost = (plant.gamma - cs.minCost) / theta if theta > 0 else math.inf
    p_stab = w / (1.0 - a * a) if abs(a) < 1 else math.inf
    p = min(p_cost, p_stab)
    if not math.isfinite(p):
        raise InfeasibleBudget("unbounded problem: no cost on the unstable direction")
    Pi = p * w / (a * a * p + w)
    return _finish(plant, cs, np.array([[p]]), np.array([[Pi]]), v, 0.0, "closed-form")


# ---------------------------------------------------------------------------
# barrier method

def _sym_basis(m):
    basis = []
    for i in range(m):
        for j in range(i, m):
            E = np.zeros((m, m))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def _lmis(plant, cs, t):
    """Affine LMIs F(x) = F0 + sum_k x_k F_k as (weight, F0, Fk-stack)."""
    A, W = plant.A, plant.W
    m = A.shape[0]
    basis = _sym_basis(m)
    ns = len(basis)
    n = 2 * ns
    Z = np.zeros((m, m))

    budget = plant.gamma - cs.minCost
    F_cost = np.zeros((n, 1, 1))
    F_stab = np.zeros((n, m, m))
    F_schur = np.zeros((n, 2 * m, 2 * m))
    F_obj = np.zeros((n, m, m))
    for k, E in enumerate(basis):
        F_cost[k, 0, 0] = -np.trace(cs.Theta @ E)
        F_stab[k] = A @ E @ A.T - E
        F_schur[k] = np.block([[E, E @ A.T], [A @ E, A @ E @ A.T]])
        F_schur[ns + k] = np.block([[-E, Z], [Z, Z]])
        F_obj[ns + k] = E
    return [
        (t, np.zeros((m, m)), F_obj),
        (1.0, np.array([[budget]]), F_cost),
        (1.0, W.copy(), F_stab),
        (1.0, np.block([[Z, Z], [Z, W]]), F_schur),
    ]


def _evaluate(lmis, x):
    out = []
    for w, F0, Fk in lmis:
        F = F0 + np.tensordot(x, Fk, axes=1)
        out.append(0.5 * (F + F.T))
    return out


def _newton_system(lmis, Fs):
    n = lmis[0][2].shape[0]
    g = np.zeros(n)
    H = np.zeros((n, n))
    chols = []
    for (w, _, Fk), F in zip(lmis, Fs):
        c = np.linalg.cholesky(F)
        chols.append(c)
        Finv = sla.cho_solve((c, True), np.eye(F.shape[0]))
        Y = np.einsum("ij,kjl->kil", Finv, Fk)
        g -= w * np.einsum("kii->k", Y)
        H += w * np.einsum("kij,lji->kl", Y, Y)
    return g, 0.5 * (H + H.T), chols


def _whitened_eigs(lmis, chols, dx):
    """Eigenvalues of L^-1 dF L^-T per LMI; phi(s) = -sum w log1p(s mu)."""
    eigs = []
    for (w, _, Fk), c in zip(lmis, chols):
        dF = np.tensordot(dx, Fk, axes=1)
        dF = 0.5 * (dF + dF.T)
        X = sla.solve_triangular(c, dF, lower=True)
        X = sla.solve_triangular(c, X.T, lower=True)
        eigs.append((w, np.linalg.eigvalsh(0.5 * (X + X.T))))
    return eigs


def _phi(eigs, s):
    total = 0.0
    for w, mu in eigs:
        arg = s * mu
        if np.any(arg <= -1.0):
            return math.inf
        total -= w * float(np.sum(np.log1p(arg)))
    return total


def _initial_point(plant, cs):
    A, W = plant.A, plant.W
    m = A.shape[0]
    budget = plant.gamma - cs.minCost
    tr_theta = float(np.trace(cs.Theta))
    tau = 0.5 * budget / tr_theta if tr_theta > 0 else 1.0
    grow = np.max(np.linalg.eigvalsh(np.eye(m) - A @ A.T))
    if grow > 0:
        tau = min(tau, 0.5 * np.min(np.linalg.eigvalsh(W)) / grow)
    P = tau * np.eye(m)
    Pp = A @ P @ A.T + W
    schur = P - P @ A.T @ np.linalg.solve(Pp, A @ P)
    Pi = 0.25 * (schur + schur.T)
    basis_idx = [(i, j) for i in range(m) for j in range(i, m)]
    p = np.array([P[i, j] for i, j in basis_idx])
    pi = np.array([Pi[i, j] for i, j in basis_idx])
    return np.concatenate([p, pi])


def _unpack(x, m):
    ns = m * (m + 1) // 2
    P = np.zeros((m, m))
    Pi = np.zeros((m, m))
    k = 0
    for i in range(m):
        for j in range(i, m):
            P[i, j] = P[j, i] = x[k]
            Pi[i, j] = Pi[j, i] = x[ns + k]
            k += 1
    return P, Pi


def solve_rdf_mimo(plant, v=1.0, control=None, gap_tol=1e-9, t0=1.0, mu=10.0,
                   newton_tol=1e-11, alpha=0.3, beta=0.8, max_newton=200):
    """Barrier-method solution of the log-det program for any m.

    Log-det barriers on the three constraints, damped Newton centering with
    backtracking, barrier weight multiplied by ``mu`` per outer stage, and
    termination once the duality-gap bound (3m+1)/t drops below ``gap_tol``
    (in nats of the -log det Pi objective).
    """
    cs = control or solve_control_dare(plant)
    _check_budget(plant, cs)
    A, W = plant.A, plant.W
    m = A.shape[0]

    # zero-rate clamp: the open-loop stationary covariance already meets the budget
    if np.max(np.abs(np.linalg.eigvals(A))) < 1.0:
        Sigma = sla.solve_discrete_lyapunov(A, W)
        Sigma = 0.5 * (Sigma + Sigma.T)
        if np.trace(cs.Theta @ Sigma) + cs.minCost <= plant.gamma:
            # largest Pi allowed by the Schur constraint at P = Sigma
            Pi = Sigma - Sigma @ A.T @ np.linalg.solve(Sigma, A @ Sigma)
            return _finish(plant, cs, Sigma, 0.5 * (Pi + Pi.T), v, 0.0, "zero-rate")

    x = _initial_point(plant, cs)
    degree = 3 * m + 1
    t = t0
    stage = 0
    while True:
        lmis = _lmis(plant, cs, t)
        prev = math.inf
        for it in range(max_newton):
            Fs = _evaluate(lmis, x)
            g, H, chols = _newton_system(lmis, Fs)
            # Jacobi scaling tames the conditioning at large t
            dsc = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-300))
            Hs = H * np.outer(dsc, dsc)
            try:
                dx = -dsc * sla.cho_solve(sla.cho_factor(Hs), dsc * g)
            except np.linalg.LinAlgError:
                dx = -dsc * np.linalg.lstsq(Hs, dsc * g, rcond=None)[0]
            lam2 = float(-g @ dx)
            if lam2 / 2.0 <= newton_tol:
                break
            # rounding floor: a small decrement that no longer shrinks. The
            # objective error it leaves is lam2 / (2 t), far below the gap.
            if lam2 / 2.0 < 1e-4 and lam2 > 0.25 * prev:
                break
            prev = lam2
            eigs = _whitened_eigs(lmis, chols, dx)
            s = 1.0
            slope = float(g @ dx)
            while True:
                val = _phi(eigs, s)
                if val <= alpha * s * slope:
                    break
                s *= beta
                if s < 1e-14:
                    break
            if s < 1e-14:
                if lam2 / 2.0 < 1e-7:
                    break
                raise NumericalFailure(
                    "line search stalled",
                    state={"t": t, "stage": stage, "newton_iter": it, "decrement": lam2,
                           "x": x.copy()})
            x = x + s * dx
        else:
            raise NumericalFailure("centering did not converge",
                                   state={"t": t, "stage": stage, "x": x.copy()})
        if degree / t < gap_tol:
            break
        t *= mu
        stage += 1

    P, Pi = _unpack(x, m)
    return _finish(plant, cs, P, Pi, v, degree / t, "barrier")


def solve_rdf(plant, v=1.0, control=None):
    """Closed form for scalar plants, barrier method otherwise."""
    if plant.m == 1 and plant.nu == 1:
        return solve_rdf_siso(plant, v, control)
    return solve_rdf_mimo(plant, v, control)


def determinant_identity_error(gains):
    """Relative error of det(C P+ C' + V) = det(P+) det(V) det(Phat^-1)."""
    lhs = np.linalg.det(gains.C @ gains.PhatPlus @ gains.C.T + gains.V)
    rhs = np.linalg.det(gains.PhatPlus) * np.linalg.det(gains.V) / np.linalg.det(gains.Phat)
    return abs(lhs - rhs) / abs(rhs)


def constraint_residuals(sol, plant):
    """Signed slacks of the three constraints (>= -tol means feasible)."""
    A, W = plant.A, plant.W
    P, Pi = sol.Phat, sol.Pi
    budget = plant.gamma - control_cost(sol, plant)
    stab = np.min(np.linalg.eigvalsh(A @ P @ A.T + W - P))
    block = np.block([[P - Pi, P @ A.T], [A @ P, A @ P @ A.T + W]])
    schur = np.min(np.linalg.eigvalsh(0.5 * (block + block.T)))
    return {"budget": float(budget), "stability": float(stab), "schur": float(schur),
            "Pi_min_eig": float(np.min(np.linalg.eigvalsh(Pi)))}
