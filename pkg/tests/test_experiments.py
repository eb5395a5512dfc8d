import json

import numpy as np
import pytest

from feddag import FitResult
from feddag.errors import DimensionMismatch, LabelMismatch, ParseError
from feddag.experiments import (
    ExperimentSpec,
    analyze,
    build_config,
    ingest_csv_sites,
    read_csv,
    read_site_csv,
    replicate_seed,
    run_sweep,
    write_csv,
)
from feddag.types import BinaryGraph, WeightedAdjacency

FAST = {"admm_max_iter": 15}


def tiny_spec(out, **kw):
    base = dict(kind="sweep_d", grid=[4, 5], replicates=2, estimators=["pfl", "sig"],
                overrides=FAST, out=str(out), seed=11)
    base.update(kw)
    return ExperimentSpec(**base)


def test_sweep_outputs_and_determinism(tmp_path):
    a = run_sweep(tiny_spec(tmp_path / "a"))
    b = run_sweep(tiny_spec(tmp_path / "b"))
    lines = (tmp_path / "a" / "runs.jsonl").read_text().splitlines()
    assert len(lines) == 2 * 2 * 2
    assert all(json.loads(x)["status"] == "ok" for x in lines)
    strip = lambda recs: [{k: v for k, v in r.items() if k != "seconds"} for r in recs]  # noqa: E731
    assert strip(a["records"]) == strip(b["records"])
    rows = read_csv(tmp_path / "a" / "results.csv")
    assert len(rows) == 4 and {r["estimator"] for r in rows} == {"PFL", "SIG"}
    assert all(r["n_ok"] == r["n_runs"] == 2 for r in rows)
    assert (tmp_path / "a" / "spec.json").exists()


def test_estimators_share_problems(tmp_path):
    recs = run_sweep(tiny_spec(tmp_path, grid=[4], replicates=1))["records"]
    assert len({r["problem_seed"] for r in recs}) == 1
    assert replicate_seed(0, 0, 0) != replicate_seed(0, 0, 1)


def test_spec_validation_and_config_split():
    with pytest.raises(ValueError):
        ExperimentSpec(kind="nope")
    with pytest.raises(ValueError):
        ExperimentSpec(overrides={"bogus": 1})
    cfg = build_config("sig", {"lambda1": 0.2, "gamma1": 1.5}, seed=3)
    assert cfg.penalties.lambda1 == 0.2 and cfg.gamma1 == 1.5 and cfg.seed == 3
    spec = ExperimentSpec(kind="sweep_K", grid=[2])
    sc = spec.synth_config(2, 0)
    assert (sc.d, sc.K, sc.n_total) == (50, 2, 256)
    assert ExperimentSpec().synth_config(20, 0).n_total == 60


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1 + 0.2, "c": "x"}, {"a": 2, "b": 1e-300, "c": "y"}]
    write_csv(tmp_path / "t.csv", rows)
    back = read_csv(tmp_path / "t.csv")
    assert back == rows


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "site_a.csv"
    p.write_text("x,y\n1,2\n3,oops\n")
    with pytest.raises(ParseError) as info:
        read_site_csv(p)
    assert info.value.line == 3 and info.value.column == 2
    p.write_text("x,y\n1,2,3\n")
    with pytest.raises(ParseError):
        read_site_csv(p)


def test_ingest_standardizes_and_checks_dims(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(3.0, 5.0, size=(40, 3))
    np.savetxt(tmp_path / "site_0.csv", X, delimiter=",", header="a,b,c", comments="")
    np.savetxt(tmp_path / "site_1.csv", X[:, :3] * 2, delimiter=",", header="a,b,c", comments="")
    ds = ingest_csv_sites(tmp_path)
    assert [d.site_id for d in ds] == ["site_0", "site_1"]
    np.testing.assert_allclose(ds[0].data.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(ds[0].data.std(axis=0), 1, atol=1e-12)
    raw = ingest_csv_sites(tmp_path, standardize=False)
    np.testing.assert_allclose(raw[0].data, X)
    np.savetxt(tmp_path / "site_2.csv", X[:, :2], delimiter=",", header="a,b", comments="")
    with pytest.raises(DimensionMismatch):
        ingest_csv_sites(tmp_path)
    with pytest.raises(FileNotFoundError):
        ingest_csv_sites(tmp_path / "missing")


def saved_fit(path, graphs):
    d = graphs[0].dim
    res = FitResult(Z_final=[WeightedAdjacency(np.zeros((d, d)))] * len(graphs), graphs=graphs,
                    h_values=[0.0] * len(graphs), iterations_used=1, primal_residuals=[0.0],
                    dual_residuals=[0.0], converged=True,
                    site_ids=[f"s{k}" for k in range(len(graphs))])
    res.save(path)
    return path


def test_analyze_tables_and_proportion_tests(tmp_path):
    edge = np.zeros((3, 3), dtype=bool)
    edge[0, 1] = True
    with_edge, without = BinaryGraph(edge), BinaryGraph(np.zeros((3, 3)))
    a = saved_fit(tmp_path / "a.json", [with_edge] * 9 + [without])
    b = saved_fit(tmp_path / "b.json", [with_edge] + [without] * 9)
    (tmp_path / "labels.txt").write_text("A\nB\nC\n")
    out = analyze(a, tmp_path / "labels.txt", out=tmp_path / "out", group_b=[b])
    tests = read_csv(out["proportion_tests"])
    assert len(tests) == 1 and tests[0]["source"] == "A" and tests[0]["target"] == "B"
    assert tests[0]["p_value"] < 0.01
    degrees = read_csv(out["degrees"])
    assert len(degrees) == 30
    assert read_csv(out["overlap"]) == []
    (tmp_path / "bad.txt").write_text("A\nB\n")
    with pytest.raises(LabelMismatch):
        analyze(a, tmp_path / "bad.txt", out=tmp_path / "o2")
    (tmp_path / "junk.json").write_text("not json")
    with pytest.raises(ParseError):
        analyze(tmp_path / "junk.json", out=tmp_path / "o3")
