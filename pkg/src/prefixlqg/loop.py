"""Closed-loop simulation of the quantized-innovation LQG architecture.

The encoder sees the plant state, runs a Kalman filter driven by its own
quantized innovations and transmits the dithered quantizer cell of
C (x_t - xbar_{t|t-1}) through a prefix-free code. The decoder runs an
identical filter on the decoded cells and applies the certainty-equivalent
control u_t = K xbar_{t|t}. Both sides keep separate state; any disagreement
raises ``SyncLoss``.

Four codec modes are supported:

* ``tv-si``   Gaussian-model code for P[q | d], rebuilt every step.
* ``tv-nosi`` Gaussian-model code for the dither-averaged P[q].
* ``ti-si``   fixed conditional model from the invariant law (SISO).
* ``ti-nosi`` one fixed code from the invariant marginal (SISO).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .codec import BitReader, BitWriter, FinitePmf, build_codebook_arrays, decode, encode_to
from .control import PlantModel
from .errors import SyncLoss
from .quantizer import SPACE_FILLING_LOSS, DitherStream, quantize_scalar
from .rdf import RdfSolution, control_cost

__all__ = [
    "MODES",
    "LoopConfig",
    "LoopTrace",
    "LoopSummary",
    "run_loop",
    "run_trial",
    "gaussian_conditional_pmf",
    "gaussian_marginal_pmf",
    "bits_bound",
    "trial_seeds",
]

MODES = ("tv-si", "tv-nosi", "ti-si", "ti-nosi")
TAIL_MASS = 2.0 ** -41          # per side, so the escape mass stays below 2^-40
_TAIL_Z = float(-ndtri(TAIL_MASS))
_BLOCK = 8192
_TINY_VAR = 1e-300
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_HALF = math.sqrt(0.5)


# ---------------------------------------------------------------------------
# Gaussian model PMFs

def _cell_masses_conditional(sigma2, d, delta):
    """(first cell, masses, escape) for q = Q(z + d), z ~ N(0, sigma2).

    Each edge contributes the Gaussian tail beyond it, so every cell mass is a
    difference of small numbers (or one minus two tails) with no cancellation.
    """
    if sigma2 <= _TINY_VAR:
        return 0, [1.0], 0.0
    s = math.sqrt(sigma2)
    lo = math.floor((d - _TAIL_Z * s) / delta + 0.5)
    hi = math.ceil((d + _TAIL_Z * s) / delta - 0.5)
    c = _SQRT_HALF / s
    erfc = math.erfc
    edges = [((lo + j - 0.5) * delta - d) for j in range(hi - lo + 2)]
    tails = [0.5 * erfc(abs(e) * c) for e in edges]
    mass = []
    for j in range(hi - lo + 1):
        ea, eb = edges[j], edges[j + 1]
        if ea >= 0.0:
            mass.append(tails[j] - tails[j + 1])
        elif eb <= 0.0:
            mass.append(tails[j + 1] - tails[j])
        else:
            mass.append(1.0 - tails[j] - tails[j + 1])
    return lo, mass, tails[0] + tails[-1]


def _psi_neg(x):
    """psi(-x) = phi(x) - x Phi(-x), where psi(x) = x Phi(x) + phi(x)."""
    return np.exp(-0.5 * x * x) * _INV_SQRT_2PI - x * ndtr(-x)


def _cell_masses_marginal(sigma2, delta):
    """(first cell, masses, escape) for q = Q(z + d), z ~ N(0, sigma2), d ~ U[-delta/2, delta/2)."""
    if sigma2 <= _TINY_VAR:
        return 0, np.ones(1), 0.0
    s = math.sqrt(sigma2)
    a = delta / s
    K = max(1, math.ceil(_TAIL_Z * s / delta))
    k = np.arange(0, K + 2, dtype=float)
    pn = _psi_neg(k * a)                      # psi(-k a), k = 0..K+1
    # P[k] = (s/delta) [psi(-(k+1)a) - 2 psi(-k a) + psi(-(k-1)a)] for k >= 1
    pos = (s / delta) * (pn[2:] - 2.0 * pn[1:-1] + pn[:-2])
    p0 = (s / delta) * (a + 2.0 * pn[1] - 2.0 * pn[0])
    mass = np.concatenate([pos[::-1], [p0], pos])
    esc = float(2.0 * (s / delta) * (pn[K] - pn[K + 1]))
    return -K, mass, esc


def _to_pmf(lo, mass, esc):
    mass = np.asarray(mass, dtype=float)
    cells = np.arange(lo, lo + len(mass))
    keep = mass > 0
    cells, mass = cells[keep], mass[keep]
    mass = mass * ((1.0 - esc) / math.fsum(mass))
    return FinitePmf(tuple(cells.tolist()), tuple(mass.tolist()), esc)


def gaussian_conditional_pmf(sigma2, d, delta):
    """P[q = k | d] for q = Q_delta(z + d) with z ~ N(0, sigma2), tails below 2^-40 escaped."""
    return _to_pmf(*_cell_masses_conditional(float(sigma2), float(d), float(delta)))


def gaussian_marginal_pmf(sigma2, delta):
    """P[q = k] with the dither averaged out (Gaussian smoothed by a uniform)."""
    return _to_pmf(*_cell_masses_marginal(float(sigma2), float(delta)))


def _book_from_masses(lo, mass, esc, kind):
    cells = range(lo, lo + len(mass))
    return build_codebook_arrays(cells, mass if isinstance(mass, list) else mass.tolist(), esc, kind)


@lru_cache(maxsize=512)
def _marginal_book(sigma2, delta, kind):
    return _book_from_masses(*_cell_masses_marginal(sigma2, delta), kind)


# ---------------------------------------------------------------------------
# bounds

def bits_bound(rate, m, mode, code="shannon"):
    """Per-step length guaranteed by the architecture: R + m (space-filling + code overhead [+1 without SI])."""
    overhead = {"shannon": 1.0, "fano": 2.0}[code]
    if mode.endswith("nosi"):
        overhead += 1.0
    return rate + m * (SPACE_FILLING_LOSS + overhead)


# ---------------------------------------------------------------------------
# configuration and results

@dataclass(frozen=True)
class LoopConfig:
    plant: PlantModel
    rdf: RdfSolution
    codecMode: str = "tv-nosi"
    horizon: int = 1000
    seed: int = 0
    trials: int = 1
    code: str = "shannon"
    record: bool = False
    invariant: object = None    # optional prebuilt InvariantCodec for ti-* modes

    def __post_init__(self):
        if self.codecMode not in MODES:
            raise ValueError(f"codecMode must be one of {MODES}, got {self.codecMode!r}")
        if self.code not in ("shannon", "fano"):
            raise ValueError(f"code must be 'shannon' or 'fano', got {self.code!r}")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")
        if int(self.trials) < 1:
            raise ValueError("trials must be at least 1")
        if self.codecMode.startswith("ti") and self.plant.m != 1:
            raise ValueError("time-invariant codecs are only defined for scalar plants")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class LoopTrace:
    """Per-step record of one trial. ``stream`` holds all codewords back to back."""

    x: np.ndarray
    u: np.ndarray
    q: np.ndarray
    lengths: np.ndarray
    cost: np.ndarray
    z: np.ndarray
    vrec: np.ndarray
    stream: bytes
    nbits: int

    def bits(self, t):
        """Codeword sent at step t as a '0'/'1' string."""
        ends = np.cumsum(self.lengths)
        start = int(ends[t] - self.lengths[t])
        reader_bits = []
        for i in range(start, int(ends[t])):
            reader_bits.append("1" if (self.stream[i >> 3] >> (7 - (i & 7))) & 1 else "0")
        return "".join(reader_bits)

    def to_csv(self, path):
        m = self.x.shape[1]
        nu = self.u.shape[1]
        header = (["t"] + [f"x{i}" for i in range(m)] + [f"u{i}" for i in range(nu)]
                  + [f"q{i}" for i in range(m)] + ["len", "cost"])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for t in range(len(self.lengths)):
                row = ([str(t)] + [f"{v:.17g}" for v in self.x[t]] + [f"{v:.17g}" for v in self.u[t]]
                       + [str(int(v)) for v in self.q[t]] + [str(int(self.lengths[t])), f"{self.cost[t]:.17g}"])
                fh.write(",".join(row) + "\n")


@dataclass
class LoopSummary:
    avg_cost: float
    avg_bits: float
    bound_bits: float
    rate_lower: float
    sync_ok: bool
    trials: int
    horizon: int
    cost_target: float
    gamma: float
    avg_info: float
    max_divergence: float
    trial_bits: list = field(default_factory=list)
    trial_costs: list = field(default_factory=list)
    component_bits: list = field(default_factory=list)

    @property
    def model_redundancy(self):
        """Average code length minus average model self-information."""
        return self.avg_bits - self.avg_info

    @property
    def bits_ok(self):
        return self.avg_bits <= self.bound_bits

    def to_dict(self):
        return {
            "avg_cost": self.avg_cost,
            "avg_bits": self.avg_bits,
            "bound_bits": self.bound_bits,
            "rate_lower": self.rate_lower,
            "sync_ok": self.sync_ok,
            "trials": self.trials,
            "horizon": self.horizon,
            "cost_target": self.cost_target,
            "gamma": self.gamma,
            "avg_info": self.avg_info,
            "model_redundancy": self.model_redundancy,
            "max_divergence": self.max_divergence,
            "component_bits": list(self.component_bits),
            "bits_pass": bool(self.bits_ok),
        }


# ---------------------------------------------------------------------------
# per-side model providers

class _GaussianCoder:
    """Codebooks from the Gaussian innovation model, tracking C P_{t|t-1} C'."""

    def __init__(self, plant, gains, delta, si, kind):
        self.delta = delta
        self.si = si
        self.kind = kind
        self._A = plant.A
        self._W = plant.W
        self._C = gains.C
        m = plant.m
        self._IJC = np.eye(m) - gains.J @ gains.C
        self._JVJ = gains.J @ gains.V @ gains.J.T
        self._P = plant.X0.copy()
        self._frozen = False
        self._set_sigma()

    def _set_sigma(self):
        self.sigma2 = [float(v) for v in np.diag(self._C @ self._P @ self._C.T)]

    def step(self):
        if self._frozen:
            return
        P = self._A @ (self._IJC @ self._P @ self._IJC.T + self._JVJ) @ self._A.T + self._W
        P = 0.5 * (P + P.T)
        if np.array_equal(P, self._P):
            self._frozen = True
        self._P = P
        self._set_sigma()

    def book(self, i, d):
        s2 = self.sigma2[i]
        if self.si:
            return _book_from_masses(*_cell_masses_conditional(s2, d, self.delta), self.kind)
        return _marginal_book(s2, self.delta, self.kind)


class _InvariantCoder:
    """Fixed codebooks derived from the invariant law of the scalar error chain."""

    def __init__(self, inv, si, kind):
        self.inv = inv
        self.si = si
        self.kind = kind
        self._book = None if si else inv.marginal_codebook(kind)

    def step(self):
        pass

    def book(self, i, d):
        if self.si:
            return self.inv.conditional_codebook(d, self.kind)
        return self._book


def _make_coder(cfg, invariant):
    mode = cfg.codecMode
    si = mode.endswith("-si")
    if mode.startswith("tv"):
        return _GaussianCoder(cfg.plant, cfg.rdf.gains, cfg.rdf.delta, si, cfg.code)
    return _InvariantCoder(invariant, si, cfg.code)


def trial_seeds(seed, trial):
    """(noise generator, dither key) for one trial; the two seed domains never overlap."""
    base = (int(seed) + int(trial)) % (2 ** 64)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([base, 1])))
    key = int(np.random.SeedSequence([base, 2]).generate_state(1, np.uint64)[0])
    return rng, key


# ---------------------------------------------------------------------------
# simulation kernels

def _trial_scalar(cfg, trial, invariant):
    plant, sol = cfg.plant, cfg.rdf
    T = int(cfg.horizon)
    a, b = float(plant.A[0, 0]), float(plant.B[0, 0])
    qw, rw = float(plant.Q[0, 0]), float(plant.Rcost[0, 0])
    sw = math.sqrt(float(plant.W[0, 0]))
    Kc = float(sol.controlSol.K[0, 0])
    rng, key = trial_seeds(cfg.seed, trial)
    x = math.sqrt(float(plant.X0[0, 0])) * float(rng.standard_normal())

    degenerate = sol.degenerate
    if not degenerate:
        g = sol.gains
        C, J, delta = float(g.C[0, 0]), float(g.J[0, 0]), sol.delta
        dither = DitherStream(key, delta, 1)
        enc = _make_coder(cfg, invariant)
        dec = _make_coder(cfg, invariant)
        writer = BitWriter()
        reader = BitReader(writer)

    rec = cfg.record
    if rec:
        xs, us, qs, lens, zs, vs = (np.zeros(T) for _ in range(6))
    costs = np.empty(T)
    total_bits = 0
    info = []
    xe = xd = 0.0
    for t0 in range(0, T, _BLOCK):
        n = min(_BLOCK, T - t0)
        noise = (sw * rng.standard_normal(n)).tolist()
        dith = dither.block(t0, n)[:, 0].tolist() if not degenerate else None
        for j in range(n):
            t = t0 + j
            if degenerate:
                xe_post, xd_post, k, nb, z, vr = xe, xd, 0, 0, 0.0, 0.0
            else:
                d = dith[j]
                z = C * (x - xe)
                k = quantize_scalar(z + d, delta)
                book = enc.book(0, d)
                nb = encode_to(book, k, writer)
                info.append(book.model_info(k))
                kd = decode(dec.book(0, d), reader)
                if kd != k or reader.pos != writer.nbits:
                    raise SyncLoss(f"decoder read {kd} for {k} at step {t}")
                qt = k * delta - d
                vr = qt - z
                xe_post = xe + J * qt
                xd_post = xd + J * (kd * delta - d)
                total_bits += nb
            if xe_post != xd_post:
                raise SyncLoss(f"filter states differ at step {t}")
            u = Kc * xd_post
            ue = Kc * xe_post
            if rec:
                xs[t], us[t], qs[t], lens[t], zs[t], vs[t] = x, u, k, nb, z, vr
            x = a * x + b * u + noise[j]
            costs[t] = qw * x * x + rw * u * u
            xe = a * xe_post + b * ue
            xd = a * xd_post + b * u
            if not degenerate:
                enc.step()
                dec.step()

    trace = None
    if rec:
        stream = writer.getvalue() if not degenerate else b""
        trace = LoopTrace(x=xs[:, None], u=us[:, None], q=qs.astype(np.int64)[:, None],
                          lengths=lens.astype(np.int64), cost=costs, z=zs[:, None], vrec=vs[:, None],
                          stream=stream, nbits=total_bits)
    return trace, {
        "cost": math.fsum(costs) / T,
        "bits": total_bits / T,
        "info": math.fsum(info) / T,
        "component_bits": [total_bits / T],
        "divergence": abs(xe - xd),
    }


def _trial_matrix(cfg, trial, invariant):
    plant, sol = cfg.plant, cfg.rdf
    T = int(cfg.horizon)
    m, nu = plant.m, plant.nu
    A, B, Q, R = plant.A, plant.B, plant.Q, plant.Rcost
    Kc = sol.controlSol.K
    sqW = np.linalg.cholesky(plant.W)
    rng, key = trial_seeds(cfg.seed, trial)
    x = _psd_sqrt(plant.X0) @ rng.standard_normal(m)

    degenerate = sol.degenerate
    if not degenerate:
        g = sol.gains
        C, J, delta = g.C, g.J, sol.delta
        dither = DitherStream(key, delta, m)
        enc = _make_coder(cfg, invariant)
        dec = _make_coder(cfg, invariant)
        writer = BitWriter()
        reader = BitReader(writer)

    rec = cfg.record
    if rec:
        xs, us, qs = np.zeros((T, m)), np.zeros((T, nu)), np.zeros((T, m), dtype=np.int64)
        zs, vs, lens = np.zeros((T, m)), np.zeros((T, m)), np.zeros(T, dtype=np.int64)
    costs = np.empty(T)
    comp_bits = [0] * m
    info = []
    xe = np.zeros(m)
    xd = np.zeros(m)
    for t0 in range(0, T, _BLOCK):
        n = min(_BLOCK, T - t0)
        noise = rng.standard_normal((n, m)) @ sqW.T
        dith = dither.block(t0, n) if not degenerate else None
        for j in range(n):
            t = t0 + j
            nb = 0
            if degenerate:
                xe_post, xd_post = xe, xd
                k = np.zeros(m, dtype=np.int64)
                z = vr = np.zeros(m)
            else:
                d = dith[j]
                z = C @ (x - xe)
                k = np.array([quantize_scalar(zi + di, delta) for zi, di in zip(z.tolist(), d.tolist())],
                             dtype=np.int64)
                kd = np.empty(m, dtype=np.int64)
                for i in range(m):
                    book = enc.book(i, float(d[i]))
                    ki = int(k[i])
                    li = encode_to(book, ki, writer)
                    info.append(book.model_info(ki))
                    comp_bits[i] += li
                    nb += li
                    kd[i] = decode(dec.book(i, float(d[i])), reader)
                if not np.array_equal(kd, k) or reader.pos != writer.nbits:
                    raise SyncLoss(f"decoder read {kd} for {k} at step {t}")
                qt = k * delta - d
                vr = qt - z
                xe_post = xe + J @ qt
                xd_post = xd + J @ (kd * delta - d)
            if not np.array_equal(xe_post, xd_post):
                raise SyncLoss(f"filter states differ at step {t}")
            u = Kc @ xd_post
            ue = Kc @ xe_post
            if rec:
                xs[t], us[t], qs[t], lens[t], zs[t], vs[t] = x, u, k, nb, z, vr
            x = A @ x + B @ u + noise[j]
            costs[t] = float(x @ Q @ x + u @ R @ u)
            xe = A @ xe_post + B @ ue
            xd = A @ xd_post + B @ u
            if not degenerate:
                enc.step()
                dec.step()

    total_bits = sum(comp_bits)
    trace = None
    if rec:
        stream = writer.getvalue() if not degenerate else b""
        trace = LoopTrace(x=xs, u=us, q=qs, lengths=lens, cost=costs, z=zs, vrec=vs,
                          stream=stream, nbits=total_bits)
    return trace, {
        "cost": math.fsum(costs) / T,
        "bits": total_bits / T,
        "info": math.fsum(info) / T,
        "component_bits": [c / T for c in comp_bits],
        "divergence": float(np.max(np.abs(xe - xd))),
    }


def _psd_sqrt(M):
    lam, U = np.linalg.eigh(M)
    return U @ np.diag(np.sqrt(np.clip(lam, 0.0, None)))


def _invariant_for(cfg):
    if not cfg.codecMode.startswith("ti") or cfg.rdf.degenerate:
        return None
    if cfg.invariant is not None:
        return cfg.invariant
    from .invariant import InvariantCodec
    return InvariantCodec.from_solution(cfg.rdf)


def run_trial(cfg, trial=0, invariant=None):
    """Simulate one trial; returns (trace or None, per-trial statistics)."""
    invariant = invariant if invariant is not None else _invariant_for(cfg)
    kernel = _trial_scalar if cfg.plant.m == 1 and cfg.plant.nu == 1 else _trial_matrix
    return kernel(cfg, trial, invariant)


def run_loop(cfg):
    """Run ``cfg.trials`` independent trials; returns (trace of trial 0 or None, LoopSummary)."""
    invariant = _invariant_for(cfg)
    first = None
    stats = []
    for i in range(int(cfg.trials)):
        trace, st = run_trial(cfg, i, invariant)
        if i == 0:
            first = trace
        stats.append(st)
    n = len(stats)
    m = cfg.plant.m
    summary = LoopSummary(
        avg_cost=math.fsum(s["cost"] for s in stats) / n,
        avg_bits=math.fsum(s["bits"] for s in stats) / n,
        bound_bits=float(bits_bound(cfg.rdf.rate, m, cfg.codecMode, cfg.code)),
        rate_lower=float(cfg.rdf.rate),
        sync_ok=all(s["divergence"] == 0.0 for s in stats),
        trials=n,
        horizon=int(cfg.horizon),
        cost_target=control_cost(cfg.rdf, cfg.plant),
        gamma=cfg.plant.gamma,
        avg_info=math.fsum(s["info"] for s in stats) / n,
        max_divergence=max(s["divergence"] for s in stats),
        trial_bits=[s["bits"] for s in stats],
        trial_costs=[s["cost"] for s in stats],
        component_bits=[math.fsum(s["component_bits"][i] for s in stats) / n for i in range(m)],
    )
    return first, summary
