"""Acceptance criteria on the reference scalar instance.

Each test appends one PASS/FAIL line to the acceptance log, which is printed
in the terminal summary, then asserts. Tolerances and runtime limits are the
pinned targets.
"""
import math
import time

import numpy as np
import pytest
from scipy.stats import kstest

from prefixlqg.codec import property_suite
from prefixlqg.control import PlantModel, solve_control_dare, spectral_radius
from prefixlqg.invariant import (ChainParams, InvariantCodec, invariant_density_mc,
                                 invariant_density_series, kl_decay_curve,
                                 nstep_gaussian_oracle, simulate_conditioned)
from prefixlqg.loop import LoopConfig, gaussian_marginal_pmf, run_loop
from prefixlqg.quantizer import DitherStream, dither_quantize
from prefixlqg.rdf import determinant_identity_error, solve_rdf, solve_rdf_mimo, solve_rdf_siso

from conftest import REF1_GAMMA

pytestmark = pytest.mark.slow

BITS_NOSI = 4.1583
BITS_SI = 3.1583
# the four-decimal bounds are rounded; compare against the unrounded values
BOUND_SLACK = 5e-5


def report(log, n, ok, text, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    log.append(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {text} ({elapsed:.1f} s, limit {limit:g} s)")
    assert ok, text


def batch_se(x, batches=100):
    """Standard error of a long-run mean from batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x) // batches
    means = x[: n * batches].reshape(batches, n).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))


def test_01_scalar_dare(acceptance_log, ref1):
    plant = ref1[0]
    t0 = time.perf_counter()
    cs = solve_control_dare(plant)
    el = time.perf_counter() - t0
    S, K = float(cs.S[0, 0]), float(cs.K[0, 0])
    eS, eK = abs(S - (2 + math.sqrt(5))), abs(K - (-1.6180340))
    ok = eS <= 1e-9 and abs(K - (-(1 + math.sqrt(5)) / 2)) <= 1e-9 and eK <= 1e-7
    report(acceptance_log, 1, ok, f"scalar DARE: |S - (2+sqrt5)| = {eS:.1e}, |K + 1.6180340| = {eK:.1e}",
           el, 1)


def test_02_closed_form_vs_barrier(acceptance_log, ref1):
    plant = ref1[0]
    t0 = time.perf_counter()
    cs = solve_control_dare(plant)
    base = float(np.trace(cs.S @ plant.W))
    worst = 0.0
    for g in np.linspace(base, 3 * base, 21)[1:]:
        p = plant.with_gamma(float(g))
        worst = max(worst, abs(solve_rdf_siso(p).rate - solve_rdf_mimo(p).rate))
    el = time.perf_counter() - t0
    report(acceptance_log, 2, worst <= 1e-6,
           f"closed-form vs barrier rate over 20 budgets: max diff {worst:.1e} <= 1e-6", el, 10)


def test_03_determinant_identity(acceptance_log, ref1):
    t0 = time.perf_counter()
    errs = [determinant_identity_error(ref1[1].gains)]
    rng = np.random.default_rng(2024)
    while len(errs) < 11:
        A = rng.normal(size=(2, 2))
        A *= rng.uniform(1.1, 2.0) / spectral_radius(A)
        G = rng.normal(size=(2, 2))
        W = G @ G.T + 0.2 * np.eye(2)
        I = np.eye(2)
        plant = PlantModel(A=A, B=I, W=W, X0=I, Q=I, Rcost=I, gamma=1.0)
        cs = solve_control_dare(plant)
        sol = solve_rdf_mimo(plant.with_gamma(1.5 * cs.minCost), control=cs)
        errs.append(determinant_identity_error(sol.gains))
    el = time.perf_counter() - t0
    worst = max(errs)
    report(acceptance_log, 3, worst <= 1e-8,
           f"determinant identity on the reference and 10 random 2x2 instances: max rel err {worst:.1e}",
           el, 5)


def test_04_codec_property_suite(acceptance_log):
    t0 = time.perf_counter()
    r = property_suite(seed=0, count=50, streams=10 ** 5)
    el = time.perf_counter() - t0
    ok = (r["pmfs"] == 50 and r["prefix_free"] and r["kraft_ok"] and r["bounds_ok"] and r["sorted_ok"]
          and r["mismatches"] == 0 and r["streams"] >= 10 ** 5)
    report(acceptance_log, 4, ok,
           f"codec suite: {r['codebooks']} books prefix-free, Kraft and length bounds hold, "
           f"{r['streams']} streams with {r['mismatches']} mismatches", el, 30)


def test_05_quantizer_statistics(acceptance_log):
    t0 = time.perf_counter()
    N, delta = 10 ** 6, 0.8
    rng = np.random.default_rng(5)
    z = rng.standard_t(5, size=N) * 3.0 + 0.37
    d = DitherStream(11, delta).block(0, N)[:, 0]
    _, v = dither_quantize(z, d, delta)
    mean_ok = abs(v.mean()) <= 4 * (delta / math.sqrt(12)) / math.sqrt(N)
    var_rel = abs(v.var() / (delta ** 2 / 12) - 1)
    corr = abs(np.corrcoef(v, z)[0, 1])
    ks = kstest(v, "uniform", args=(-delta / 2, delta)).pvalue
    el = time.perf_counter() - t0
    ok = mean_ok and var_rel <= 0.01 and corr <= 4 / math.sqrt(N) and ks > 1e-3
    report(acceptance_log, 5, ok,
           f"dithered quantizer error: mean {v.mean():.1e}, var rel err {var_rel:.1e}, "
           f"|corr| {corr:.1e}, KS p {ks:.2f}", el, 10)


@pytest.fixture(scope="module")
def nosi_run(ref1):
    plant, sol = ref1
    t0 = time.perf_counter()
    trace, s = run_loop(LoopConfig(plant, sol, "tv-nosi", horizon=10 ** 6, seed=2026, record=True))
    return trace, s, time.perf_counter() - t0


def test_06_closed_loop_nosi(acceptance_log, nosi_run):
    _, s, el = nosi_run
    cost_err = abs(s.avg_cost / REF1_GAMMA - 1)
    ok = cost_err <= 0.02 and s.avg_bits <= BITS_NOSI + BOUND_SLACK and s.sync_ok and s.max_divergence == 0
    report(acceptance_log, 6, ok,
           f"tv-nosi loop: cost {s.avg_cost:.4f} ({100 * cost_err:.2f}% off), "
           f"bits {s.avg_bits:.4f} <= {BITS_NOSI}, sync exact", el, 120)


def test_07_closed_loop_si(acceptance_log, ref1, nosi_run):
    plant, sol = ref1
    t0 = time.perf_counter()
    trace, s = run_loop(LoopConfig(plant, sol, "tv-si", horizon=10 ** 6, seed=2026, record=True))
    el = time.perf_counter() - t0
    nosi_trace, nosi, _ = nosi_run
    noise = 4 * math.hypot(batch_se(trace.lengths), batch_se(nosi_trace.lengths))
    ok = s.avg_bits <= BITS_SI + BOUND_SLACK and s.avg_bits <= nosi.avg_bits + noise and s.sync_ok
    report(acceptance_log, 7, ok,
           f"tv-si loop: bits {s.avg_bits:.4f} <= {BITS_SI} and <= tv-nosi {nosi.avg_bits:.4f} + {noise:.4f}",
           el, 120)


def test_08_invariant_measure(acceptance_log, ref1):
    t0 = time.perf_counter()
    p = ChainParams.from_solution(ref1[1])
    series = invariant_density_series(p)
    mc = invariant_density_mc(p, steps=10 ** 7, seed=0, grid=series)
    tv = mc.tv_distance(series.coarsen(series.n // mc.n))
    el = time.perf_counter() - t0
    var_err = abs(series.var() - 1.4)
    report(acceptance_log, 8, var_err <= 1e-3 and tv <= 0.01,
           f"invariant law: series variance {series.var():.6f} (err {var_err:.1e}), "
           f"MC TV {tv:.4f} <= 0.01 on {mc.n} bins", el, 180)


def test_09_time_invariant_codec(acceptance_log, ref1, ref1_invariant):
    plant, sol = ref1
    t0 = time.perf_counter()
    inv = InvariantCodec.from_solution(sol)
    _, single = run_loop(LoopConfig(plant, sol, "ti-nosi", horizon=10 ** 6, seed=2026, invariant=inv))
    _, multi = run_loop(LoopConfig(plant, sol, "ti-nosi", horizon=10 ** 4, seed=7, trials=100, invariant=inv))
    stationary = inv.marginal_codebook().expected_length()
    el = time.perf_counter() - t0
    bound = BITS_NOSI + BOUND_SLACK
    ok = single.avg_bits <= bound and multi.avg_bits <= bound and stationary <= bound and single.sync_ok
    report(acceptance_log, 9, ok,
           f"ti-nosi codec: single run {single.avg_bits:.4f}, 100-trial mean {multi.avg_bits:.4f}, "
           f"stationary E[len] {stationary:.4f}, all <= {BITS_NOSI}", el, 300)


def test_10_kl_decay(acceptance_log, ref1, ref1_invariant):
    plant, sol = ref1
    t0 = time.perf_counter()
    cfg = LoopConfig(plant, sol, "ti-nosi", seed=0, invariant=ref1_invariant)
    curve = kl_decay_curve(cfg, checkpoints=(1, 5, 20, 100), rollouts=10 ** 5)
    el = time.perf_counter() - t0
    monotone = all(b[1] <= a[1] + 2 * math.hypot(a[2], b[2]) for a, b in zip(curve, curve[1:]))
    final = curve[-1][1]
    text = ", ".join(f"t={t}: {kl:.1e}+-{err:.0e}" for t, kl, err in curve)
    report(acceptance_log, 10, monotone and final <= 0.01,
           f"KL decay non-increasing within error and final <= 0.01 bits ({text})", el, 600)


def test_11_side_information_gap(acceptance_log, ref1, ref1_invariant):
    sol = ref1[1]
    t0 = time.perf_counter()
    sigma2 = float(sol.gains.C[0, 0] ** 2 * sol.PhatPlus[0, 0])
    delta = sol.delta
    from prefixlqg.loop import _cell_masses_conditional

    ds = -delta / 2 + (np.arange(10 ** 4) + 0.5) * delta / 10 ** 4
    hs = []
    for d in ds:
        _, mass, esc = _cell_masses_conditional(sigma2, float(d), delta)
        hs.append(-math.fsum(p * math.log2(p) for p in mass + [esc] if p > 0))
    gap_gauss = gaussian_marginal_pmf(sigma2, delta).entropy() - float(np.mean(hs))
    inv = ref1_invariant
    gap_inv = inv.marginal_pmf().entropy() - inv.conditional_entropy(10 ** 4)
    el = time.perf_counter() - t0
    ok = 0 <= gap_gauss <= 1 and 0 <= gap_inv <= 1
    report(acceptance_log, 11, ok,
           f"H(q) - H(q|d) on a 10^4-point dither grid: Gaussian model {gap_gauss:.4f}, "
           f"invariant model {gap_inv:.4f}, both <= 1", el, 30)


def test_12_nstep_oracle(acceptance_log, ref1):
    t0 = time.perf_counter()
    p = ChainParams.from_solution(ref1[1])
    e0, d0, n, draws = 0.7, -0.4, 10, 10 ** 5
    # zero-error path: every draw shares v_1..v_9 = 0
    e, _ = simulate_conditioned(p, e0, d0, n, draws, seed=1, force_zero=True)
    mu, s2 = nstep_gaussian_oracle(p, e0, d0, [0.0] * (n - 1))
    p_zero = kstest(e, "norm", args=(mu, math.sqrt(s2))).pvalue
    # in-loop path: each draw is standardized by the law given its own v_1..v_9
    e, vs = simulate_conditioned(p, e0, d0, n, draws, seed=2)
    mus = np.array([nstep_gaussian_oracle(p, e0, d0, row)[0] for row in vs.tolist()])
    p_loop = kstest((e - mus) / math.sqrt(s2), "norm").pvalue
    el = time.perf_counter() - t0
    report(acceptance_log, 12, p_zero > 1e-3 and p_loop > 1e-3,
           f"10-step conditional law vs Gaussian oracle over 10^5 draws: KS p {p_zero:.3f} (v = 0 path), "
           f"{p_loop:.3f} (in-loop v)", el, 60)
