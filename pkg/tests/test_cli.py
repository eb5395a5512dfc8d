import json

import numpy as np
import pytest

from feddag import FitResult
from feddag.cli import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_OK, main


@pytest.fixture
def problem_dir(tmp_path):
    out = tmp_path / "prob"
    assert main(["gen", "--d", "4", "--K", "2", "--n-per-site", "50", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_gen_writes_sites(problem_dir):
    assert sorted(p.name for p in problem_dir.glob("site_*.csv")) == ["site_0.csv", "site_1.csv"]
    meta = json.loads((problem_dir / "meta.json").read_text())
    assert meta["config"]["d"] == 4 and meta["config"]["seed"] == 1


def test_fit_round_trip_and_exit_code(problem_dir, tmp_path):
    out = tmp_path / "fit.json"
    code = main(["fit", "--data", str(problem_dir), "--admm-max-iter", "200", "--out", str(out)])
    res = FitResult.load(out)
    assert code == (EXIT_OK if res.converged else EXIT_NONCONVERGED)
    assert res.site_ids == ["site_0", "site_1"]


def test_config_precedence(problem_dir, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[estimator]\nlambda1 = 0.01\nadmm_max_iter = 3\nadmm_tol = 1e-12\n[pfl]\nlambda2 = 0.3\n")
    out = tmp_path / "fit.json"
    main(["fit", "--config", str(cfg), "--data", str(problem_dir), "--out", str(out)])
    assert FitResult.load(out).iterations_used == 3
    main(["fit", "--config", str(cfg), "--data", str(problem_dir), "--admm-max-iter", "4", "--out", str(out)])
    assert FitResult.load(out).iterations_used == 4
    # a huge L1 weight from the flag wipes out every edge
    main(["fit", "--config", str(cfg), "--data", str(problem_dir), "--lambda1", "50", "--out", str(out)])
    assert all(g.n_edges == 0 for g in FitResult.load(out).graphs)


def test_config_errors_exit_2(problem_dir, tmp_path):
    assert main(["fit", "--data", str(tmp_path / "none")]) == EXIT_CONFIG
    assert main(["fit", "--config", str(tmp_path / "missing.ini"), "--data", str(problem_dir)]) == EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[estimator]\nnot_a_setting = 1\n")
    assert main(["fit", "--config", str(bad), "--data", str(problem_dir)]) == EXIT_CONFIG
    (problem_dir / "site_9.csv").write_text("a,b,c,d\n1,2,x,4\n")
    assert main(["fit", "--data", str(problem_dir)]) == EXIT_CONFIG
    assert main(["fit"]) == 2
    assert main(["gen", "--p-l", "2", "--out", str(tmp_path / "g")]) == EXIT_CONFIG


def test_sweep_and_analyze(tmp_path, capsys):
    out = tmp_path / "sw"
    code = main(["sweep", "--kind", "sweep_d", "--grid", "4", "--replicates", "1",
                 "--estimators", "pfl,sig", "--admm-max-iter", "10", "--out", str(out), "-q"])
    assert code == EXIT_OK
    assert len((out / "runs.jsonl").read_text().splitlines()) == 2
    gen = tmp_path / "p"
    main(["gen", "--d", "4", "--K", "3", "--n-per-site", "30", "--out", str(gen)])
    fit_path = tmp_path / "f.json"
    main(["fit", "--data", str(gen), "--admm-max-iter", "5", "--out", str(fit_path)])
    assert main(["analyze", "--fit", str(fit_path), "--out", str(tmp_path / "an")]) == EXIT_OK
    assert (tmp_path / "an" / "top_degrees.csv").exists()
    assert "overlap" in capsys.readouterr().out


def test_site_csv_files_match_generated_data(problem_dir):
    X = np.loadtxt(problem_dir / "site_0.csv", delimiter=",", skiprows=1)
    assert X.shape == (50, 4)
