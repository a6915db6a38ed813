import csv
import json

import numpy as np
import pytest

from pfiaudit import cli, data, pipeline, simgen
from pfiaudit.forest import Hyperparams

from conftest import WINE

FAST = ["--trees", "20", "--reps", "3", "--pi", "99"]


def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path)])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_csvs_and_manifest(tmp_path):
    assert run(tmp_path, "simulate", "--kind", "two_correlated", "--runs", "3", "--n", "50") == 0
    files = sorted(p.name for p in tmp_path.glob("*.csv"))
    assert files == [f"two_correlated_seed{s}.csv" for s in range(3)]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"] == [0, 1, 2]
    ds = data.load_csv(tmp_path / files[0], "y")
    assert (ds.n, ds.p) == (50, 8)


def test_simulate_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(out, "simulate", "--kind", "circle", "--seed", "4", "--n", "30") == 0
    for name in ("circle_seed4.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_cod(tmp_path):
    assert run(tmp_path, "simulate", "--kind", "cod", "--n-list", "20",
               "--p-list", "10,20") == 0
    assert len(list(tmp_path.glob("cod_*.csv"))) == 2
    assert run(tmp_path / "all", "simulate", "--kind", "cod") == 0
    assert len(list((tmp_path / "all").glob("cod_*.csv"))) == 18


def test_audit_two_correlated(tmp_path):
    assert run(tmp_path, "audit", "--kind", "two_correlated", "--n", "120", "--relearn", "V1",
               *FAST) == 0
    per_run = rows(tmp_path / "run_seed0" / "pvalues.csv")
    assert len(per_run) == 8 * 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "relearn" in summary["features"]["V1"]
    for name in ("importances.csv", "importances.json", "alcd.csv", "alcd.json"):
        assert (tmp_path / "run_seed0" / name).is_file()


def test_audit_rerun_identical(tmp_path):
    for out in ("a", "b"):
        assert run(tmp_path / out, "audit", "--kind", "circle", "--n", "80", *FAST) == 0
    for name in ("pvalues.csv", "importances.csv", "summary.json", "manifest.json",
                 "run_seed0/alcd.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_audit_wine_csv(tmp_path):
    assert run(tmp_path, "audit", "--csv", str(WINE), "--target", "cultivar", "--task",
               "classification", *FAST) == 0
    feats = {r["feature"] for r in rows(tmp_path / "run_seed0" / "pvalues.csv")}
    assert len(feats) == 13 and "BASELINE" not in feats
    imp = {r["feature"] for r in rows(tmp_path / "run_seed0" / "importances.csv")}
    assert len(imp) == 14


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "circle", "n": 60, "reps": 2, "trees": 10, "pi": 50,
                               "seed": 7}))
    assert run(tmp_path / "o", "audit", "--config", str(cfg), "--reps", "4") == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["reps"] == 4 and man["config"]["seed"] == 7
    assert len(rows(tmp_path / "o" / "run_seed7" / "pvalues.csv")) == 8 * 4


@pytest.mark.parametrize("args", [
    ["audit", "--csv", "/nonexistent/file.csv", "--target", "y"],
    ["audit", "--csv", "EMPTY", "--target", "y"],
    ["audit"],
    ["audit", "--kind", "circle", "--config", "/nonexistent.json"],
    ["audit", "--kind", "circle", "--trees", "0"],
])
def test_input_errors_exit_2(tmp_path, args, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    args = [str(empty) if a == "EMPTY" else a for a in args]
    assert run(tmp_path / "o", *args) == 2
    assert "error" in capsys.readouterr().err


def test_numerical_error_exit_3(tmp_path):
    code = run(tmp_path, "audit", "--kind", "equal_blocks", "--rho", "-0.9", "--k", "3",
               *FAST)
    assert code == 3


def test_cod_command(tmp_path):
    assert run(tmp_path, "cod", "--n-list", "40", "--p-list", "10", "--exponents", "1,2",
               *FAST) == 0
    out = rows(tmp_path / "cod.csv")
    assert len(out) == 2
    assert list(out[0]) == ["n", "p", "exponent", "mean_p_dependent", "mean_p_independent"]


def test_spca_audit_rank_one(tmp_path):
    rng = np.random.default_rng(0)
    X = np.outer(rng.normal(size=60), rng.normal(size=5)) + 1e-3 * rng.normal(size=(60, 5))
    ds = data.Dataset(X, X.sum(axis=1), [f"g{j}" for j in range(5)])
    ds.to_csv(tmp_path / "r1.csv")
    code = run(tmp_path / "o", "spca-audit", "--csv", str(tmp_path / "r1.csv"), "--target",
               "y", "--components", "1", *FAST)
    assert code == 0
    p = rows(tmp_path / "o" / "run_seed0" / "pvalues.csv")
    assert {r["feature"] for r in p} == {"PC1"}
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["spca"][0]["nonzeros"] >= 1


def test_spca_audit_strict_nonconvergence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 40, "p": 12, "k": 4, "train_size": 30}))
    args = ["spca-audit", "--config", str(cfg), "--kind", "equal_blocks", "--components",
            "3", *FAST]
    assert run(tmp_path / "ok", *args) == 0
    # a single outer iteration cannot meet the tolerance; strict mode makes that fatal
    assert run(tmp_path / "loose", *args, "--max-iter", "1") == 0
    assert run(tmp_path / "strict", *args, "--max-iter", "1", "--strict") == 4


def test_pipeline_baseline_shared_across_splits():
    ds = simgen.generate(simgen.GeneratorSpec("circle", n=40, seed=0))
    cfg = pipeline.AuditConfig(Hyperparams(5), repetitions=2, n_perm=20)
    res = pipeline.audit_dataset(ds, cfg, seed=3)
    assert res.train.feature_names[-1] == "BASELINE"
    full = data.add_baseline(ds, 3).features[:, -1]
    both = np.concatenate([res.train.features[:, -1], res.test.features[:, -1]])
    np.testing.assert_array_equal(np.sort(both), np.sort(full))


def test_audit_config_round_trip():
    cfg = pipeline.AuditConfig(Hyperparams(7, 2), relearn=("V1",))
    assert pipeline.AuditConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_top_variance_columns():
    X = np.column_stack([np.arange(10.0) * s for s in (1, 5, 2, 4)])
    ds = data.Dataset(X, np.zeros(10), list("abcd"))
    np.testing.assert_array_equal(pipeline.top_variance_columns(ds, 0.5), [1, 3])
