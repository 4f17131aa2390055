"""Rate lower bound and achievable bitrate as the LQG budget loosens.

Sweeps the cost budget of the reference scalar plant, solves the log-det
program at each point and runs a short closed loop with the time-varying
codec. Prints a table: budget, rate bound, measured bits/step, bits bound.
"""
import numpy as np

from prefixlqg import LoopConfig, PlantModel, run_loop, solve_control_dare, solve_rdf

plant = PlantModel.scalar(a=2.0, b=1.0, w=1.0, q=1.0, r=1.0, gamma=1.0)
floor = solve_control_dare(plant).minCost

print(f"{'gamma':>8} {'R(gamma)':>9} {'bits':>7} {'bound':>7}")
for gamma in floor * np.array([1.02, 1.1, 1.25, 1.5, 2.0, 3.0]):
    p = plant.with_gamma(float(gamma))
    sol = solve_rdf(p)
    _, s = run_loop(LoopConfig(p, sol, "tv-nosi", horizon=20_000, seed=1))
    print(f"{gamma:8.4f} {sol.rate:9.4f} {s.avg_bits:7.4f} {s.bound_bits:7.4f}")
