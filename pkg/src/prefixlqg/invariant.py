"""Invariant law of the scalar prediction-error chain and the fixed codec built from it.

For a scalar plant the filter error e_t = x_t - xbar_{t|t-1} obeys

    e_{t+1} = R e_t - L v_t + w_t,    v_t = Q(C e_t + d_t) - d_t - C e_t,

where v_t is uniform on [-delta/2, delta/2] and independent of e_t. With
|R| < 1 the chain forgets its start, and its stationary law is that of
sum_i R^i (w_i - L v_i). The time-invariant codec codes every q_t with one
Shannon code built from the stationary PMF of q.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .codec import FinitePmf, build_codebook_arrays, build_codebook, kl_bits
from .errors import UnstableChain
from .loop import gaussian_marginal_pmf, trial_seeds
from .quantizer import DitherStream, quantize, quantize_scalar

__all__ = [
    "ChainParams",
    "DensityGrid",
    "InvariantCodec",
    "invariant_density_series",
    "invariant_density_mc",
    "invariant_codebooks",
    "invariant_variance",
    "kl_decay_curve",
    "gaussian_start_kl",
    "nstep_gaussian_oracle",
    "chain_map",
    "simulate_conditioned",
]

GRID_CELLS = 2 ** 14
GRID_WIDTH = 8.0
MC_BINS = 2 ** 9
ESCAPE_FLOOR = 2.0 ** -48


@dataclass(frozen=True)
class ChainParams:
    Rcl: float
    L: float
    C: float
    W: float
    delta: float

    def __post_init__(self):
        for name in ("Rcl", "L", "C", "W", "delta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not abs(self.Rcl) < 1.0:
            raise UnstableChain(f"|Rcl| = {abs(self.Rcl)!r} >= 1: the error chain has no invariant law")
        if not self.W > 0 or not self.delta > 0:
            raise ValueError("W and delta must be positive")

    @classmethod
    def from_solution(cls, sol):
        g = sol.gains
        if g is None:
            raise ValueError("zero-rate solution has no test channel")
        if g.C.shape != (1, 1):
            raise ValueError("the invariant machinery is defined for scalar plants only")
        # Rcl = A - L C and PhatPlus = A Phat A + W
        A = float(g.Rcl[0, 0] + g.L[0, 0] * g.C[0, 0])
        W = float(sol.PhatPlus[0, 0] - A * A * sol.Phat[0, 0])
        return cls(Rcl=float(g.Rcl[0, 0]), L=float(g.L[0, 0]), C=float(g.C[0, 0]), W=W, delta=sol.delta)


def invariant_variance(p):
    """Fixed point of E = W + R^2 E + L^2 delta^2 / 12."""
    return (p.W + p.L ** 2 * p.delta ** 2 / 12.0) / (1.0 - p.Rcl ** 2)


@dataclass(frozen=True)
class DensityGrid:
    """Cell masses of a scalar law on n equal cells spanning [lo, hi]."""

    lo: float
    hi: float
    n: int
    mass: np.ndarray
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        if mass.shape != (self.n,):
            raise ValueError("mass must have n entries")
        if np.any(mass < 0):
            raise ValueError("masses must be non-negative")
        object.__setattr__(self, "mass", mass)

    @property
    def dx(self):
        return (self.hi - self.lo) / self.n

    @property
    def centers(self):
        return self.lo + (np.arange(self.n) + 0.5) * self.dx

    @property
    def edges(self):
        return np.linspace(self.lo, self.hi, self.n + 1)

    @property
    def total(self):
        return math.fsum(self.mass)

    def mean(self):
        return float(np.dot(self.mass, self.centers) / self.total)

    def var(self):
        """Variance of the piecewise-constant density (includes the within-cell dx^2/12)."""
        mu = self.mean()
        return float(np.dot(self.mass, (self.centers - mu) ** 2) / self.total + self.dx ** 2 / 12.0)

    def density(self):
        return self.mass / self.dx

    def cdf(self, x):
        """CDF of the piecewise-constant density, exact between edges."""
        cum = np.concatenate([[0.0], np.cumsum(self.mass)])
        cum /= cum[-1]
        return np.interp(x, self.edges, cum, left=0.0, right=1.0)

    def coarsen(self, factor):
        """Merge groups of ``factor`` adjacent cells."""
        if self.n % factor:
            raise ValueError("factor must divide the cell count")
        return DensityGrid(self.lo, self.hi, self.n // factor,
                           self.mass.reshape(-1, factor).sum(axis=1), dict(self.extra))

    def tv_distance(self, other):
        if (self.lo, self.hi, self.n) != (other.lo, other.hi, other.n):
            raise ValueError("grids differ")
        return 0.5 * float(np.sum(np.abs(self.mass / self.total - other.mass / other.total)))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,mass\n")
            for x, m in zip(self.centers, self.mass):
                fh.write(f"{x:.17g},{m:.17g}\n")


def _series_window(p):
    s = math.sqrt(invariant_variance(p))
    return -GRID_WIDTH * s, GRID_WIDTH * s


def _box_kernel(h, dx):
    """Cell-integrated kernel of a uniform law of width h, centered on a cell."""
    half = 0.5 * h
    r = int(math.ceil(half / dx + 0.5))
    j = np.arange(-r, r + 1)
    lo = np.maximum((j - 0.5) * dx, -half)
    hi = np.minimum((j + 0.5) * dx, half)
    k = np.clip(hi - lo, 0.0, None) / h
    return k / k.sum()


def invariant_density_series(p, tol=1e-10, n=GRID_CELLS, window=None):
    """Law of sum_{i<=N} R^i (w_i - L nu_i) tabulated on a grid.

    All Gaussian terms are merged into one exact Gaussian with variance
    W sum R^{2i}; each uniform term R^i L nu_i is then applied as an
    analytically integrated box kernel by FFT convolution. N is the first
    index where the dropped tail variance falls below tol^2.
    """
    if not abs(p.Rcl) < 1.0:
        raise UnstableChain("|Rcl| >= 1")
    lo, hi = window if window is not None else _series_window(p)
    r2 = p.Rcl ** 2
    unit = p.W + p.L ** 2 * p.delta ** 2 / 12.0
    N = 0
    while r2 ** (N + 1) / (1.0 - r2) * unit >= tol ** 2 and N < 10_000:
        N += 1
    gvar = p.W * sum(r2 ** i for i in range(N + 1))
    edges = np.linspace(lo, hi, n + 1)
    cdf = ndtr(edges / math.sqrt(gvar))
    mass = np.diff(cdf)
    dx = (hi - lo) / n
    for i in range(N + 1):
        h = abs(p.Rcl ** i * p.L) * p.delta
        if h <= 0.0:
            continue
        k = _box_kernel(h, dx)
        if len(k) > 1:
            mass = fftconvolve(mass, k, mode="same")
    mass = np.clip(mass, 0.0, None)
    captured = float(mass.sum())
    mass /= captured
    return DensityGrid(lo, hi, n, mass, extra={"terms": N + 1, "captured": captured,
                                                "gaussian_var": gvar})


def chain_map(p, e, d):
    """(R e - L v, v) for the dithered quantization of C e with dither d."""
    z = p.C * e
    k = quantize_scalar(z + d, p.delta)
    v = k * p.delta - d - z
    return p.Rcl * e - p.L * v, v


def invariant_density_mc(p, steps=10 ** 7, burnin=1000, seed=0, grid=None, bins=MC_BINS, chunk=1 << 16):
    """Histogram of the simulated chain over steps [burnin, steps).

    ``grid`` fixes the window (defaults to the series window) and ``bins`` the
    histogram resolution. A 10^7-sample histogram on 2^14 cells carries a
    multinomial TV noise floor near 0.01 by itself, so comparisons with the
    series grid are made after coarsening it to ``bins`` cells. The summary in
    ``extra`` has the sample mean and variance, corr(e_t, d_t), the dither KS
    statistic and p-value, and the count of samples outside the window.
    """
    from scipy.stats import kstest

    if not abs(p.Rcl) < 1.0:
        raise UnstableChain("|Rcl| >= 1")
    lo, hi = (grid.lo, grid.hi) if grid is not None else _series_window(p)
    n = int(bins)
    rng, key = trial_seeds(seed, 0)
    dither = DitherStream(key, p.delta, 1)
    sw = math.sqrt(p.W)
    R, L, C, delta = p.Rcl, p.L, p.C, p.delta
    counts = np.zeros(n)
    outside = 0
    s_e = s_ee = s_ed = s_d = s_dd = 0.0
    kept = 0
    d_all = []
    e = 0.0
    for t0 in range(0, steps, chunk):
        m = min(chunk, steps - t0)
        ds = dither.block(t0, m)[:, 0]
        ws = (sw * rng.standard_normal(m)).tolist()
        es = [0.0] * m
        dl = ds.tolist()
        for j in range(m):
            es[j] = e
            d = dl[j]
            z = C * e
            v = quantize_scalar(z + d, delta) * delta - d - z
            e = R * e - L * v + ws[j]
        start = max(0, burnin - t0)
        if start >= m:
            continue
        ea = np.asarray(es[start:])
        da = ds[start:]
        h, _ = np.histogram(ea, bins=n, range=(lo, hi))
        counts += h
        outside += int(len(ea) - h.sum())
        kept += len(ea)
        s_e += math.fsum(ea)
        s_ee += float(np.dot(ea, ea))
        s_ed += float(np.dot(ea, da))
        s_d += float(da.sum())
        s_dd += float(np.dot(da, da))
        d_all.append(da)
    mean_e = s_e / kept
    var_e = s_ee / kept - mean_e ** 2
    mean_d = s_d / kept
    var_d = s_dd / kept - mean_d ** 2
    corr = (s_ed / kept - mean_e * mean_d) / math.sqrt(var_e * var_d)
    d_all = np.concatenate(d_all)
    ks = kstest(d_all, "uniform", args=(-0.5 * delta, delta))
    return DensityGrid(lo, hi, n, counts / counts.sum(), extra={
        "samples": kept, "mean": mean_e, "var": var_e, "corr_ed": corr,
        "dither_ks": float(ks.statistic), "dither_ks_pvalue": float(ks.pvalue), "outside": outside,
    })


class InvariantCodec:
    """Conditional and marginal PMFs of q under the invariant law, and their codebooks."""

    def __init__(self, grid, p, n_dither=1024, escape_floor=ESCAPE_FLOOR):
        if n_dither < 1000:
            raise ValueError("the marginal needs at least 1000 dither points")
        self.grid = grid
        self.p = p
        self.n_dither = n_dither
        self.escape_floor = escape_floor
        cum = np.concatenate([[0.0], np.cumsum(grid.mass)])
        self._cum = cum / cum[-1]
        self._edges = grid.edges
        zlo, zhi = sorted((p.C * grid.lo, p.C * grid.hi))
        self._kmin = math.floor((zlo - 0.5 * p.delta) / p.delta + 0.5)
        self._kmax = math.ceil((zhi + 0.5 * p.delta) / p.delta - 0.5)
        self._cells = np.arange(self._kmin, self._kmax + 1)
        self._marginal = None
        self._books = {}

    @classmethod
    def from_solution(cls, sol, **kw):
        p = ChainParams.from_solution(sol)
        return cls(invariant_density_series(p), p, **kw)

    def _cell_masses(self, d):
        """P[q = k | d] over the table cells, d a scalar or an array of dithers."""
        p = self.p
        d = np.atleast_1d(np.asarray(d, dtype=float))
        zl = (self._cells[None, :] - 0.5) * p.delta - d[:, None]
        zh = zl + p.delta
        el, eh = zl / p.C, zh / p.C
        if p.C < 0:
            el, eh = eh, el
        return (np.interp(eh, self._edges, self._cum, left=0.0, right=1.0)
                - np.interp(el, self._edges, self._cum, left=0.0, right=1.0))

    def _pmf(self, masses):
        masses = np.clip(masses, 0.0, None)
        keep = masses > 0
        probs = masses[keep] * ((1.0 - self.escape_floor) / math.fsum(masses[keep]))
        return FinitePmf(tuple(self._cells[keep].tolist()), tuple(probs.tolist()), self.escape_floor)

    def conditional_pmf(self, d):
        return self._pmf(self._cell_masses(d)[0])

    def marginal_pmf(self):
        if self._marginal is None:
            delta = self.p.delta
            dgrid = -0.5 * delta + (np.arange(self.n_dither) + 0.5) * delta / self.n_dither
            self._marginal = self._pmf(self._cell_masses(dgrid).mean(axis=0))
        return self._marginal

    def marginal_codebook(self, kind="shannon"):
        if kind not in self._books:
            self._books[kind] = build_codebook(self.marginal_pmf(), kind)
        return self._books[kind]

    def conditional_codebook(self, d, kind="shannon"):
        masses = np.clip(self._cell_masses(d)[0], 0.0, None)
        keep = masses > 0
        probs = masses[keep] * ((1.0 - self.escape_floor) / math.fsum(masses[keep]))
        return build_codebook_arrays(self._cells[keep].tolist(), probs.tolist(), self.escape_floor, kind)

    def conditional_entropy(self, n_dither=10_000):
        """H(q | d) averaged over a midpoint dither grid."""
        delta = self.p.delta
        dgrid = -0.5 * delta + (np.arange(n_dither) + 0.5) * delta / n_dither
        P = self._cell_masses(dgrid)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(P > 0, P * np.log2(P), 0.0).sum(axis=1)
        return float(h.mean())


def invariant_codebooks(g, p, kind="shannon", n_dither=1024):
    """(conditional model, fixed marginal codebook) built from a density grid."""
    codec = InvariantCodec(g, p, n_dither=n_dither)
    return codec, codec.marginal_codebook(kind)


# ---------------------------------------------------------------------------
# convergence of q_t to the invariant marginal

def _kl_counts(counts_by_cell, marginal):
    n = sum(counts_by_cell.values())
    total = 0.0
    for k, c in counts_by_cell.items():
        ph = c / n
        q = marginal.prob(k) or marginal.escapeMass
        total += ph * math.log2(ph / q)
    return total


def kl_decay_curve(cfg, checkpoints=(1, 5, 20, 100), rollouts=10 ** 5, n_boot=200, seed=None,
                   invariant=None):
    """Plug-in D(q_t || q_inf) in bits at each checkpoint with bootstrap standard errors.

    q_t depends only on the error chain, which the control does not affect, so
    the rollouts simulate e_t directly from e_0 ~ N(0, X0). Returns a list of
    (t, kl, err).
    """
    if cfg.plant.m != 1:
        raise ValueError("KL decay is defined for scalar plants only")
    if rollouts < 10 ** 4:
        raise ValueError("use at least 10^4 rollouts")
    inv = invariant or cfg.invariant or InvariantCodec.from_solution(cfg.rdf)
    p = inv.p
    marginal = inv.marginal_pmf()
    seed = cfg.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 3])))
    boot_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 4])))
    e = math.sqrt(float(cfg.plant.X0[0, 0])) * rng.standard_normal(rollouts)
    todo = sorted(set(int(t) for t in checkpoints))
    out = []
    sw = math.sqrt(p.W)
    for t in range(todo[-1] + 1):
        d = rng.uniform(-0.5 * p.delta, 0.5 * p.delta, rollouts)
        z = p.C * e
        k = quantize(z + d, p.delta)
        if t in todo:
            cells, counts = np.unique(k, return_counts=True)
            kl = _kl_counts(dict(zip(cells.tolist(), counts.tolist())), marginal)
            boots = []
            probs = counts / rollouts
            for _ in range(n_boot):
                bc = boot_rng.multinomial(rollouts, probs)
                nz = bc > 0
                boots.append(_kl_counts(dict(zip(cells[nz].tolist(), bc[nz].tolist())), marginal))
            out.append((t, kl, float(np.std(boots, ddof=1))))
        v = k * p.delta - d - z
        e = p.Rcl * e - p.L * v + sw * rng.standard_normal(rollouts)
    return out


def gaussian_start_kl(inv, variance):
    """Exact D(q_0 || q_inf) when e_0 ~ N(0, variance)."""
    marginal = inv.marginal_pmf()
    q0 = gaussian_marginal_pmf(inv.p.C ** 2 * variance, inv.p.delta)
    cells = sorted(set(q0.cells) | set(marginal.cells))
    pa = np.array([q0.prob(c) for c in cells])
    qa = np.array([marginal.prob(c) or marginal.escapeMass for c in cells])
    return kl_bits(pa, qa)


# ---------------------------------------------------------------------------
# n-step conditional law

def nstep_gaussian_oracle(p, e0, d0, vseq):
    """Mean and variance of e_n given (e_0, d_0, v_1, ..., v_{n-1}), n = len(vseq) + 1.

    mu_n = R^{n-1} M(e0, d0) - sum_{i=0}^{n-2} R^i L v_{n-1-i}
    sigma_n^2 = W sum_{i=0}^{n-1} R^{2i}
    """
    R, L = p.Rcl, p.L
    n = len(vseq) + 1
    M, _ = chain_map(p, e0, d0)
    mu = R ** (n - 1) * M
    for i in range(n - 1):
        mu -= R ** i * L * vseq[n - 2 - i]
    sigma2 = p.W * math.fsum(R ** (2 * i) for i in range(n))
    return mu, sigma2


def simulate_conditioned(p, e0, d0, n, draws, seed=0, force_zero=False):
    """Draw e_n from (e_0, d_0) ``draws`` times; returns (e_n, v) with v of shape (draws, n-1).

    With ``force_zero`` the quantization error after step 0 is replaced by 0.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 5])))
    sw = math.sqrt(p.W)
    M, _ = chain_map(p, e0, d0)
    e = M + sw * rng.standard_normal(draws)
    vs = np.zeros((draws, n - 1))
    for j in range(n - 1):
        if force_zero:
            v = np.zeros(draws)
        else:
            d = rng.uniform(-0.5 * p.delta, 0.5 * p.delta, draws)
            z = p.C * e
            v = quantize(z + d, p.delta) * p.delta - d - z
        vs[:, j] = v
        e = p.Rcl * e - p.L * v + sw * rng.standard_normal(draws)
    return e, vs
