import json
import math
import subprocess
import sys

import pytest

from prefixlqg.cli import _fmt, main

from conftest import REF1_GAMMA, REF1_RATE

REF1 = {"plant": {"A": 2, "B": 1, "W": 1, "X0": 1, "Q": 1, "R": 1, "gamma": REF1_GAMMA}}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_ref1(tmp_path, capsys):
    code, out, _ = _run(["solve", "--config", _write(tmp_path, REF1)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["rate_bits"] == pytest.approx(REF1_RATE, abs=1e-7)
    for key in ("Phat", "PhatPlus", "C", "V", "delta", "S", "K", "min_cost"):
        assert key in rep
    assert rep["S"][0][0] == pytest.approx(2 + math.sqrt(5), abs=1e-9)


def test_infeasible_budget_exit_2(tmp_path, capsys):
    cfg = json.loads(json.dumps(REF1))
    cfg["plant"]["gamma"] = 4.0
    code, _, err = _run(["solve", "--config", _write(tmp_path, cfg)], capsys)
    assert code == 2 and "error" in err


def test_bad_matrix_exit_1(tmp_path, capsys):
    cfg = {"plant": {"A": [[1, 0], [0]], "B": 1, "W": 1, "Q": 1, "R": 1, "gamma": 5}}
    code, _, err = _run(["solve", "--config", _write(tmp_path, cfg)], capsys)
    assert code == 1 and "plant" in err
    cfg = {"plant": {"A": [[1, 0], [0, 1]], "B": 1, "W": 1, "Q": 1, "R": 1, "gamma": 5}}
    code, _, err = _run(["solve", "--config", _write(tmp_path, cfg)], capsys)
    assert code == 1 and "plant" in err


def test_schema_error_names_field(tmp_path, capsys):
    cfg = dict(REF1, sim={"trials": 0})
    code, _, err = _run(["simulate", "--config", _write(tmp_path, cfg)], capsys)
    assert code == 1 and "sim/trials" in err
    code, _, err = _run(["solve", "--config", str(tmp_path / "missing.json")], capsys)
    assert code == 1


def test_simulate_and_determinism(tmp_path, capsys):
    cfg = dict(REF1, sim={"mode": "tv-nosi", "horizon": 3000, "seed": 7})
    path = _write(tmp_path, cfg)
    outs = []
    for i in range(2):
        code, out, _ = _run(["simulate", "--config", path, "--trace", str(tmp_path / f"t{i}.csv"),
                             "--out", str(tmp_path / f"s{i}.json")], capsys)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
    assert (tmp_path / "s0.json").read_text() == outs[0]
    rep = json.loads(outs[0])
    for key in ("avg_cost", "avg_bits", "bound_bits", "rate_lower", "sync_ok", "trials", "horizon"):
        assert key in rep
    assert rep["sync_ok"] is True and rep["avg_bits"] <= 4.1583
    code, other, _ = _run(["simulate", "--config", path, "--seed", "8"], capsys)
    assert json.loads(other)["seed"] == 8 and other != outs[0]


def test_invariant_requires_scalar(tmp_path, capsys):
    cfg = {"plant": {"A": [[2, 0], [0, 1.5]], "B": [[1, 0], [0, 1]], "W": [[1, 0], [0, 1]],
                     "Q": [[1, 0], [0, 1]], "R": [[1, 0], [0, 1]], "gamma": 30}}
    code, _, err = _run(["invariant", "--config", _write(tmp_path, cfg)], capsys)
    assert code == 2 and "SISO" in err
    cfg["sim"] = {"mode": "ti-nosi"}
    code, _, _ = _run(["simulate", "--config", _write(tmp_path, cfg)], capsys)
    assert code == 2


def test_invariant_small_budget(tmp_path, capsys):
    cfg = dict(REF1, sim={"mc_steps": 100_000, "rollouts": 10_000, "checkpoints": [1, 5]})
    out_dir = tmp_path / "inv"
    code, out, _ = _run(["invariant", "--config", _write(tmp_path, cfg), "--out", str(out_dir)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert abs(rep["var_series"] - 1.4) <= 1e-3
    for key in ("var_mc", "phat_plus", "tv_distance"):
        assert key in rep
    for name in ("density_series.csv", "density_mc.csv", "kl_curve.csv", "summary.json"):
        assert (out_dir / name).exists()
    assert (out_dir / "density_series.csv").read_text().startswith("x,mass\n")
    assert (out_dir / "kl_curve.csv").read_text().startswith("t,kl,err\n")


def test_codec_check_small(monkeypatch, capsys):
    import prefixlqg.cli as cli
    from prefixlqg.codec import property_suite

    monkeypatch.setattr(cli, "property_suite", lambda seed: property_suite(seed, count=6, streams=600))
    code, out, _ = _run(["codec-check"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["pass"] and rep["mismatches"] == 0


def test_float_format_round_trips():
    x = 0.1 + 0.2
    text = _fmt({"b": x, "a": [1, True, None]})
    assert text == '{"a": [1, true, null], "b": 0.30000000000000004}'
    assert json.loads(text)["b"] == x


def test_bad_seed(capsys):
    code, _, _ = _run(["codec-check", "--seed", str(2 ** 64)], capsys)
    assert code == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "prefixlqg", "solve", "--config", _write(tmp_path, REF1)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["rate_bits"] == pytest.approx(REF1_RATE, abs=1e-7)
