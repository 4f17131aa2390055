"""Stationary law of the scalar prediction error and the fixed codebook.

Compares the series construction of the invariant density against a chain
simulation, prints the entropy of the quantizer output with and without the
dither, and shows how fast the law of q_t approaches the stationary one.
"""
from prefixlqg import LoopConfig, PlantModel, solve_rdf
from prefixlqg.invariant import (ChainParams, InvariantCodec, invariant_density_mc,
                                 invariant_density_series, kl_decay_curve)

plant = PlantModel.scalar(a=2.0, b=1.0, w=1.0, q=1.0, r=1.0, gamma=5.6068884)
sol = solve_rdf(plant)
p = ChainParams.from_solution(sol)

series = invariant_density_series(p)
mc = invariant_density_mc(p, steps=10 ** 6, grid=series)
print(f"variance: series {series.var():.5f}, chain {mc.extra['var']:.5f}, "
      f"filter {sol.PhatPlus[0, 0]:.5f}")
print(f"TV distance (chain vs series, {mc.n} bins): {mc.tv_distance(series.coarsen(series.n // mc.n)):.4f}")

inv = InvariantCodec(series, p)
H = inv.marginal_pmf().entropy()
Hd = inv.conditional_entropy()
book = inv.marginal_codebook()
print(f"H(q) = {H:.4f}, H(q|d) = {Hd:.4f}, fixed code E[len] = {book.expected_length():.4f}")
for k in book.order[:7]:
    print(f"  q = {k:+d}: {book.word(k)}")

cfg = LoopConfig(plant, sol, "ti-nosi", invariant=inv)
for t, kl, err in kl_decay_curve(cfg, checkpoints=(0, 1, 5, 20), rollouts=10 ** 5):
    print(f"t = {t:3d}: D(q_t || q) = {kl:.2e} +- {err:.0e} bits")
