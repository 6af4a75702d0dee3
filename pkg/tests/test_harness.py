import csv
import json
import math

import numpy as np
import pytest

from rankdecomp.cli import main
from rankdecomp.harness import (
    SUMMARY_COLUMNS,
    ConfigError,
    ExperimentConfig,
    sweep_rate,
    tree_sum,
)
from rankdecomp.identities import REGISTRY


def read_summary(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def write_cfg(tmp_path, **doc):
    base = {"model": {"kind": "brownian"}, "grid": {"T": 1.0, "n_steps": 128}, "n_paths": 3,
            "replications": 10, "seed": 3, "chunk": 4}
    base.update(doc)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(base))
    return p


def test_single_path_all_zero(tmp_path):
    cfg = write_cfg(tmp_path, n_paths=1, model={"kind": "affine_diffusion", "a": 0.1, "c": 0.5})
    rc = main(["verify", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == 0
    rows = read_summary(tmp_path / "out" / "summary.csv")
    assert len(rows) == len(REGISTRY)
    assert all(float(r["rel_residual"]) == 0.0 for r in rows)
    assert list(rows[0]) == list(SUMMARY_COLUMNS)


def test_fixture_config_zero(tmp_path):
    cfg = write_cfg(tmp_path, model={"kind": "fixture", "fixture": "separated_cross"}, n_paths=3,
                    identities=["thm31_indicator"], replications=2,
                    acceptance={"thm31_indicator": {"max_mean_sup_residual": 0.0}})
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_summary(tmp_path / "o" / "summary.csv")
    assert float(rows[0]["mean_sup_residual"]) == 0.0


def test_threshold_failure_exit(tmp_path):
    cfg = write_cfg(tmp_path, identities=["thm32_ltsum"], acceptance={"thm32_ltsum": {"max_mean_sup_residual": 0.0}})
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    doc = json.loads((tmp_path / "o" / "acceptance.json").read_text())
    assert doc["passed"] is False


def test_sweep_three_rows_per_identity(tmp_path):
    cfg = write_cfg(tmp_path, n_paths=5, replications=120, chunk=40, sweep=[256, 1024, 4096],
                    identities=["thm32_ltsum", "cor33_yan_ouknine"],
                    acceptance={"thm32_ltsum": {"nonincreasing": True}})
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--workers", "4"]) == 0
    rows = read_summary(tmp_path / "s" / "summary.csv")
    lt = [float(r["mean_sup_residual"]) for r in rows if r["identity"] == "thm32_ltsum"]
    assert len(lt) == 3 and lt[0] > lt[1] > lt[2]
    rates = json.loads((tmp_path / "s" / "rates.json").read_text())
    assert rates["thm32_ltsum"] > 0


def test_sweep_needs_three_levels(tmp_path):
    cfg = write_cfg(tmp_path, sweep=[64, 128])
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 2


def test_worker_count_does_not_change_output(tmp_path):
    cfg = write_cfg(tmp_path, model={"kind": "jump_diffusion", "lam": 3.0, "rho": 0.4}, replications=17, chunk=3,
                    identities=sorted(set(REGISTRY) - {"cor31_ranked_diff", "rem21_max"}))
    outs = []
    for w in ("1", "8"):
        out = tmp_path / f"w{w}"
        assert main(["verify", "--config", str(cfg), "--out", str(out), "--workers", w]) == 0
        outs.append(out)
    for name in ["summary.csv"] + sorted(p.name for p in (outs[0] / "reports").iterdir()):
        a = outs[0] / name if name == "summary.csv" else outs[0] / "reports" / name
        b = outs[1] / name if name == "summary.csv" else outs[1] / "reports" / name
        assert a.read_bytes() == b.read_bytes(), name


def test_summary_reproducible_from_saved_paths(tmp_path):
    cfg = write_cfg(tmp_path, model={"kind": "jump_diffusion", "lam": 2.0}, replications=9, chunk=4,
                    identities=["thm22_original", "thm32_ltsum"])
    main(["verify", "--config", str(cfg), "--out", str(tmp_path / "a"), "--save-paths"])
    main(["verify", "--config", str(cfg), "--out", str(tmp_path / "b"), "--from-paths", str(tmp_path / "a" / "paths")])
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_cli_overrides(tmp_path):
    cfg = write_cfg(tmp_path, identities=["thm31_indicator"])
    main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o"), "--n-steps", "64", "--seed", "9",
          "--policy", "band:0.25"])
    doc = json.loads((tmp_path / "o" / "config.json").read_text())
    assert doc["grid"]["n_steps"] == 64 and doc["seed"] == 9 and doc["policy"] == "band:0.25"
    rows = read_summary(tmp_path / "o" / "summary.csv")
    assert float(rows[0]["dt"]) == 1 / 64


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"identities": ["thm99"]}, "unknown identities"),
        ({"sweep": [256, 128, 512]}, "strictly increasing"),
        ({"model": {"kind": "levy"}}, "model"),
        ({"colour": 1}, "unknown config keys"),
        ({"acceptance": {"rem21_max": {"max_rel_residual": 1}}, "identities": ["thm32_ltsum"]}, "not in the identity"),
    ],
)
def test_invalid_config(tmp_path, capsys, doc, msg):
    cfg = write_cfg(tmp_path, **doc)
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert msg in capsys.readouterr().err


def test_jumps_with_continuous_only_identity(tmp_path, capsys):
    cfg = write_cfg(tmp_path, model={"kind": "jump_diffusion", "lam": 5.0}, identities=["rem21_max"])
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "continuous" in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"model": {"kind": "brownian"},,}')
    assert main(["verify", "--config", str(p)]) == 2
    assert "c.json:1:" in capsys.readouterr().err


def test_simulate_rank_localtime_roundtrip(tmp_path, capsys):
    cfg = write_cfg(tmp_path, model={"kind": "jump_diffusion", "lam": 4.0})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    stem = str(tmp_path / "sim" / "ensemble")
    assert main(["roundtrip-check", "--ensemble", stem]) == 0
    assert main(["rank", "--ensemble", stem, "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "ranked.occupancy.csv").exists()
    assert main(["localtime", "--ensemble", stem, "--out", str(tmp_path / "lt")]) == 0
    assert len(list((tmp_path / "lt").glob("localtime_*.csv"))) == 3
    (tmp_path / "sim" / "ensemble.json").unlink()
    assert main(["roundtrip-check", "--ensemble", stem]) == 2


def test_lattice_crossing_cli(tmp_path):
    cfg = write_cfg(tmp_path, model={"kind": "lattice_walk", "h": "sqrt_dt"}, grid={"T": 1.0, "n_steps": 64})
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")])
    assert main(["localtime", "--ensemble", str(tmp_path / "sim" / "ensemble"), "--estimator", "crossing",
                 "--h", "0.125", "--out", str(tmp_path / "lt")]) == 0


def test_sweep_rate_synthetic():
    dts = [2.0**-8, 2.0**-10, 2.0**-12]
    rows = [{"dt": d, "mean_sup_residual": 3.0 * d} for d in dts]
    assert sweep_rate(rows) == pytest.approx(1.0, abs=1e-6)
    rows = [{"dt": d, "mean_sup_residual": 0.2} for d in dts]
    assert sweep_rate(rows) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        sweep_rate(rows[:2])


def test_tree_sum_fixed_topology():
    x = np.random.default_rng(0).standard_normal(37)
    assert tree_sum(x) == tree_sum(x.copy())
    assert math.isclose(tree_sum(x), float(np.sum(x)), rel_tol=1e-12)
    assert tree_sum([]) == 0.0


def test_default_policy_by_kind():
    assert str(ExperimentConfig.from_dict({"model": {"kind": "brownian"}}).policy) == "band:0.5"
    assert str(ExperimentConfig.from_dict({"model": {"kind": "lattice_walk"}}).policy) == "exact"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"grid": {}})
