"""Command-line entry point: ``prefixlqg {solve,simulate,invariant,codec-check}``.

Exit codes: 0 success, 1 invalid configuration, 2 infeasible budget or
unsupported scope, 3 internal invariant violation (encoder/decoder sync or
codec property failure).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from .codec import property_suite
from .control import PlantModel
from .errors import InfeasibleBudget, NonStabilizable, SyncLoss
from .rdf import control_cost, solve_rdf

DEFAULT_SIM = {
    "mode": "tv-nosi",
    "code": "shannon",
    "horizon": 100_000,
    "trials": 1,
    "seed": 0,
    "checkpoints": [1, 5, 20, 100],
    "rollouts": 100_000,
    "mc_steps": 10_000_000,
    "burnin": 1000,
    "cost_tol": 0.02,
}


class ConfigError(Exception):
    pass


class ScopeError(Exception):
    pass


# ---------------------------------------------------------------------------
# output formatting

def _fmt(obj):
    """JSON text with every float written to 17 significant digits."""
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in sorted(obj.items())) + "}"
    return json.dumps(obj)


def _emit(report, out):
    text = _fmt(report) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# configuration

def _schema():
    return json.loads(resources.files("prefixlqg").joinpath("config_schema.json").read_text())


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {exc.message}") from exc
    return cfg


def _matrix(value, name):
    if isinstance(value, list) and len({len(r) for r in value}) != 1:
        raise ConfigError(f"config field plant/{name}: rows have different lengths")
    return np.atleast_2d(np.asarray(value, dtype=float))


def plant_from_config(cfg):
    pb = cfg["plant"]
    mats = {k: _matrix(pb[k], k) for k in ("A", "B", "W", "Q", "R")}
    m = mats["A"].shape[0]
    X0 = _matrix(pb["X0"], "X0") if "X0" in pb else np.eye(m)
    try:
        return PlantModel(A=mats["A"], B=mats["B"], W=mats["W"], X0=X0, Q=mats["Q"],
                          Rcost=mats["R"], gamma=pb["gamma"])
    except ValueError as exc:
        raise ConfigError(f"config field plant: {exc}") from exc


def _sim(cfg, seed):
    sim = dict(DEFAULT_SIM)
    sim.update(cfg.get("sim", {}))
    if seed is not None:
        sim["seed"] = seed
    return sim


def _solve(cfg, plant):
    sv = cfg.get("solver", {})
    return solve_rdf(plant, v=sv.get("v", 1.0))


# ---------------------------------------------------------------------------
# commands

def _rdf_report(sol, plant):
    g = sol.gains
    cs = sol.controlSol
    return {
        "rate_bits": sol.rate,
        "gamma": sol.gamma,
        "Phat": sol.Phat,
        "PhatPlus": sol.PhatPlus,
        "Pi": sol.Pi,
        "C": None if g is None else g.C,
        "V": None if g is None else g.V,
        "J": None if g is None else g.J,
        "L": None if g is None else g.L,
        "Rcl": None if g is None else g.Rcl,
        "delta": sol.delta,
        "S": cs.S,
        "K": cs.K,
        "Theta": cs.Theta,
        "min_cost": cs.minCost,
        "attained_cost": control_cost(sol, plant),
        "method": sol.method,
        "degenerate": sol.degenerate,
    }


def cmd_solve(args):
    cfg = load_config(args.config)
    plant = plant_from_config(cfg)
    sol = _solve(cfg, plant)
    _emit(_rdf_report(sol, plant), args.out)
    return 0


def cmd_simulate(args):
    from .loop import LoopConfig, run_loop

    cfg = load_config(args.config)
    plant = plant_from_config(cfg)
    sim = _sim(cfg, args.seed)
    if sim["mode"].startswith("ti") and plant.m != 1:
        raise ScopeError("time-invariant codecs are defined for scalar (SISO) plants only")
    sol = _solve(cfg, plant)
    lc = LoopConfig(plant, sol, sim["mode"], sim["horizon"], sim["seed"], sim["trials"],
                    code=sim["code"], record=bool(args.trace))
    trace, summary = run_loop(lc)
    if args.trace and trace is not None:
        trace.to_csv(args.trace)
    report = summary.to_dict()
    report.update({
        "mode": sim["mode"],
        "code": sim["code"],
        "seed": sim["seed"],
        "cost_pass": summary.avg_cost <= plant.gamma * (1.0 + sim["cost_tol"]),
        "pass": bool(summary.bits_ok and summary.sync_ok
                     and summary.avg_cost <= plant.gamma * (1.0 + sim["cost_tol"])),
    })
    _emit(report, args.out)
    return 0


def cmd_invariant(args):
    from .invariant import (ChainParams, InvariantCodec, invariant_density_mc,
                            invariant_density_series, kl_decay_curve)
    from .loop import LoopConfig

    cfg = load_config(args.config)
    plant = plant_from_config(cfg)
    if plant.m != 1 or plant.nu != 1:
        raise ScopeError("the invariant analysis is defined for scalar (SISO) plants only")
    sim = _sim(cfg, args.seed)
    sol = _solve(cfg, plant)
    if sol.degenerate:
        raise ScopeError("zero-rate solution: there is no quantized channel to analyse")
    p = ChainParams.from_solution(sol)
    series = invariant_density_series(p)
    mc = invariant_density_mc(p, steps=sim["mc_steps"], burnin=sim["burnin"], seed=sim["seed"], grid=series)
    coarse = series.coarsen(series.n // mc.n)
    inv = InvariantCodec(series, p)
    lc = LoopConfig(plant, sol, "ti-nosi", 1, sim["seed"], invariant=inv)
    curve = kl_decay_curve(lc, sim["checkpoints"], sim["rollouts"])
    summary = {
        "var_series": series.var(),
        "var_mc": mc.extra["var"],
        "mean_mc": mc.extra["mean"],
        "phat_plus": float(sol.PhatPlus[0, 0]),
        "tv_distance": mc.tv_distance(coarse),
        "tv_bins": mc.n,
        "corr_ed": mc.extra["corr_ed"],
        "dither_ks_pvalue": mc.extra["dither_ks_pvalue"],
        "marginal_entropy": inv.marginal_pmf().entropy(),
        "conditional_entropy": inv.conditional_entropy(),
        "kl_curve": [list(row) for row in curve],
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        series.to_csv(os.path.join(args.out, "density_series.csv"))
        mc.to_csv(os.path.join(args.out, "density_mc.csv"))
        with open(os.path.join(args.out, "kl_curve.csv"), "w") as fh:
            fh.write("t,kl,err\n")
            for t, kl, err in curve:
                fh.write(f"{t},{kl:.17g},{err:.17g}\n")
        _emit(summary, os.path.join(args.out, "summary.json"))
    else:
        _emit(summary, None)
    return 0


def cmd_codec_check(args):
    seed = 0 if args.seed is None else args.seed
    report = property_suite(seed=seed)
    ok = (report["prefix_free"] and report["kraft_ok"] and report["bounds_ok"]
          and report["sorted_ok"] and report["mismatches"] == 0)
    report["pass"] = ok
    _emit(report, args.out)
    return 0 if ok else 3


def build_parser():
    parser = argparse.ArgumentParser(prog="prefixlqg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, needs_config in (("solve", cmd_solve, True), ("simulate", cmd_simulate, True),
                                     ("invariant", cmd_invariant, True),
                                     ("codec-check", cmd_codec_check, False)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, help="JSON experiment configuration")
        p.add_argument("--out", help="output file (directory for 'invariant')")
        p.add_argument("--trace", help="per-step CSV trace (simulate only)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InfeasibleBudget, NonStabilizable, ScopeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SyncLoss as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
