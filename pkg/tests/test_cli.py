import json
import math

import numpy as np
import pytest

from nnfn import cli
from nnfn.cli import (
    ExperimentConfig,
    emit_trace,
    grid_search,
    main,
    prepare_data,
    read_trace,
    run_experiment,
)
from nnfn.oracles import SuiteResult
from nnfn.solvers import SolveTrace, Status, TraceRecord


def tiny(**kw):
    base = dict(m=30, k_star=2, sparsity_multiplier=2.0, lambdas=[0.01], steps=[0.01],
                ranks=[2], seeds=[0, 1], max_iters=300)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert len(cfg.lambdas) == len(cfg.steps) == 6
        assert cfg.noise_std == pytest.approx(math.sqrt(0.1))

    @pytest.mark.parametrize("field,value,match", [
        ("solver", "admm", "solver"),
        ("reg", "schatten", "reg"),
        ("metric", "MAE", "metric"),
        ("lambdas", [], "lambdas"),
        ("steps", [5.0], "steps"),
        ("lambdas", [1e3], "lambdas"),
        ("workers", 0, "workers"),
    ])
    def test_rejects_bad_values(self, field, value, match):
        with pytest.raises(ValueError, match=f"config field '{match}'"):
            tiny(**{field: value})

    def test_factored_needs_explicit_k(self):
        with pytest.raises(ValueError, match="ranks"):
            tiny(ranks=[None])
        tiny(solver="proximal", ranks=[None])

    def test_factored_only_for_nnfn_and_nuclear(self):
        with pytest.raises(ValueError, match="reg"):
            tiny(reg="mcp")
        tiny(reg="mcp", solver="proximal", thetas=[2.0])

    def test_lambda_zero_needs_override(self):
        with pytest.raises(ValueError, match="outside"):
            tiny(lambdas=[0.0])
        assert tiny(lambdas=[0.0], allow_out_of_range=True).lambdas == [0.0]
        with pytest.raises(ValueError, match=">= 0"):
            tiny(lambdas=[-1.0], allow_out_of_range=True)

    def test_triplet_source_requirements(self):
        with pytest.raises(ValueError, match="triplets"):
            tiny(source="triplets")
        with pytest.raises(ValueError, match="split"):
            tiny(source="triplets", triplets="x.csv", rows=3, cols=3, split=[0.5, 0.5, 0.5])

    def test_yaml_and_noise_variance(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("m: 40\nnoise_variance: 0.25\nlambdas: [0.1, 1.0]\n")
        cfg = ExperimentConfig.from_yaml(p)
        assert (cfg.m, cfg.noise_std, cfg.lambdas) == (40, 0.5, [0.1, 1.0])

    def test_unknown_key_and_conflict(self):
        with pytest.raises(ValueError, match="unknown config field"):
            ExperimentConfig.from_dict({"lambda": 1})
        with pytest.raises(ValueError, match="not both"):
            ExperimentConfig.from_dict({"noise_std": 0.1, "noise_variance": 0.1})

    def test_grid_completeness_and_theta_collapse(self):
        cfg = tiny(lambdas=[0.01, 0.1, 1.0], steps=[0.01, 0.1], ranks=[1, 2], thetas=[1.0, 2.0])
        pts = cfg.grid_points()
        assert len(pts) == 3 * 2 * 2
        assert all(p["theta"] is None for p in pts)
        cfg = tiny(solver="proximal", reg="lsp", lambdas=[0.01, 0.1], steps=[1.0],
                   ranks=[None], thetas=[0.5, 1.0, 2.0])
        pts = cfg.grid_points()
        assert len(pts) == 2 * 1 * 1 * 3
        assert len({tuple(p.values()) for p in pts}) == len(pts)


class TestSelection:
    def _row(self, val, lam=1.0, rank=5, step=0.1, theta=None):
        return {"val_metric": val, "lam": lam, "rank": rank, "step": step, "theta": theta}

    def test_argmin(self):
        rows = [self._row(0.3), self._row(0.1, lam=10.0), self._row(0.2)]
        assert min(rows, key=cli._selection_key)["lam"] == 10.0

    def test_tie_breaks_lambda_then_rank_then_step(self):
        rows = [self._row(0.1, lam=1.0, rank=5), self._row(0.1, lam=0.1, rank=20)]
        assert min(rows, key=cli._selection_key)["lam"] == 0.1
        rows = [self._row(0.1, rank=10, step=0.001), self._row(0.1, rank=5, step=0.1)]
        assert min(rows, key=cli._selection_key)["rank"] == 5
        rows = [self._row(0.1, step=0.1), self._row(0.1, step=0.01)]
        assert min(rows, key=cli._selection_key)["step"] == 0.01

    def test_nan_never_wins(self):
        rows = [self._row(math.nan, lam=0.001), self._row(5.0)]
        assert min(rows, key=cli._selection_key)["val_metric"] == 5.0


class TestGridSearch:
    def test_single_point_returns_itself(self):
        cfg = tiny()
        res = grid_search(cfg)
        assert res.best == cfg.grid_points()[0]
        assert len(res.rows) == 1

    def test_rows_in_grid_order_and_best_is_argmin(self):
        cfg = tiny(lambdas=[0.001, 0.1, 10.0], steps=[0.01, 0.1], ranks=[2, 4])
        res = grid_search(cfg)
        assert [(r["lam"], r["step"], r["rank"]) for r in res.rows] == \
            [(p["lam"], p["step"], p["rank"]) for p in cfg.grid_points()]
        finite = [r for r in res.rows if math.isfinite(r["val_metric"])]
        assert res.best_row()["val_metric"] == min(r["val_metric"] for r in finite)

    def test_failed_points_are_reported_not_selected(self):
        cfg = tiny(steps=[0.01, 1.0])
        res = grid_search(cfg)
        statuses = {r["step"]: r["status"] for r in res.rows}
        assert statuses[1.0] == Status.NUMERICAL_FAILURE.value
        assert res.best["step"] == 0.01

    def test_all_failed_raises(self):
        with pytest.raises(RuntimeError, match="every grid point"):
            grid_search(tiny(steps=[1.0]))

    def test_parallel_matches_serial(self):
        cfg = tiny(lambdas=[0.01, 1.0])
        serial = grid_search(cfg)
        parallel = grid_search(tiny(lambdas=[0.01, 1.0], workers=2))
        assert serial.best == parallel.best
        for a, b in zip(serial.rows, parallel.rows):
            assert a["val_metric"] == b["val_metric"]


class TestTrace:
    def test_roundtrip(self, tmp_path):
        t = SolveTrace([TraceRecord(0, 2.5, 0.0, 0.75, 0), TraceRecord(1, 1.25, 0.01, None, 3)])
        emit_trace(t, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iter,objective,elapsed_s,val_error,rank"
        assert len(lines) == 3
        assert lines[2].split(",")[3] == ""
        assert read_trace(tmp_path / "t.csv") == t.records

    def test_empty_trace_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_trace(SolveTrace(), tmp_path / "t.csv")

    def test_unwritable(self, tmp_path):
        t = SolveTrace([TraceRecord(0, 1.0, 0.0, None, 0)])
        with pytest.raises(OSError, match="cannot write"):
            emit_trace(t, tmp_path / "missing" / "t.csv")


class TestExperiment:
    def test_summary_statistics_and_files(self, tmp_path):
        cfg = tiny(lambdas=[0.01, 0.1], seeds=[0, 1, 2], out=str(tmp_path))
        summary, results = run_experiment(cfg)
        vals = [r.test_metric for r in results]
        assert summary["mean"] == pytest.approx(np.mean(vals))
        assert summary["stddev"] == pytest.approx(np.std(vals, ddof=1))
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk["mean"] == pytest.approx(summary["mean"])
        assert [r["seed"] for r in on_disk["runs"]] == [0, 1, 2]
        assert on_disk["config"]["lambdas"] == [0.01, 0.1]
        for s in (0, 1, 2):
            recs = read_trace(tmp_path / f"trace_seed{s}.csv")
            assert recs[0].iteration == 0
        assert (tmp_path / "grid.csv").read_text().count("\n") == 3

    def test_first_seed_reuses_tuning_run(self):
        cfg = tiny(lambdas=[0.01, 0.1])
        summary, results = run_experiment(cfg)
        again = cli.run_point(cfg, prepare_data(cfg, 0), summary["selected"], 0)
        assert results[0].test_metric == again.test_metric
        assert results[0].n_iters == again.n_iters

    def test_deterministic(self):
        a, _ = run_experiment(tiny())
        b, _ = run_experiment(tiny())
        assert [r["test_metric"] for r in a["runs"]] == [r["test_metric"] for r in b["runs"]]

    def test_lambda_zero_baseline_runs(self):
        summary, results = run_experiment(tiny(lambdas=[0.0], allow_out_of_range=True))
        assert all(math.isfinite(r.test_metric) for r in results)
        assert summary["selected"]["lam"] == 0.0

    def test_proximal_with_rank_cap(self):
        summary, results = run_experiment(tiny(solver="proximal", steps=[1.0], ranks=[3],
                                               lambdas=[0.1]))
        assert all(0 <= r.rank <= 3 for r in results)

    def test_triplet_source_split(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = [f"{i},{j},{rng.integers(1, 6)}" for i in range(20) for j in range(15)
                 if rng.random() < 0.5]
        p = tmp_path / "r.csv"
        p.write_text("\n".join(lines) + "\n")
        cfg = tiny(source="triplets", triplets=str(p), rows=20, cols=15, metric="RMSE")
        data = prepare_data(cfg, 0)
        assert data.train.nnz + data.validation.nnz + data.test.nnz == len(lines)
        summary, _ = run_experiment(cfg)
        assert summary["mean"] > 0


class TestMain:
    def test_synth(self, tmp_path, capsys):
        rc = main(["synth", "--m", "30", "--k-star", "2", "--sparsity-multiplier", "2",
                   "--lambda", "0.01", "--step", "0.01", "--rank-k", "2", "--seed", "0",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert "NMSE mean=" in capsys.readouterr().out
        assert (tmp_path / "summary.json").exists()

    def test_noise_variance_flag(self, tmp_path):
        rc = main(["synth", "--m", "30", "--k-star", "2", "--lambda", "0.01", "--step", "0.01",
                   "--rank-k", "2", "--seed", "0", "--noise-variance", "0.04",
                   "--out", str(tmp_path)])
        assert rc == 0
        cfgd = json.loads((tmp_path / "summary.json").read_text())["config"]
        assert cfgd["noise_std"] == pytest.approx(0.2)

    def test_complete_writes_solution(self, tmp_path):
        p = tmp_path / "r.csv"
        rng = np.random.default_rng(1)
        p.write_text("".join(f"{i} {j} {rng.normal():.3f}\n" for i in range(12) for j in range(10)
                             if rng.random() < 0.6))
        out = tmp_path / "out"
        rc = main(["complete", "--triplets", str(p), "--rows", "12", "--cols", "10",
                   "--lambda", "0.1", "--step", "0.01", "--rank-k", "2", "--seed", "0",
                   "--metric", "RMSE", "--out", str(out)])
        assert rc == 0
        with np.load(out / "solution.npz") as z:
            assert z["W"].shape == (12, 2) and z["H"].shape == (10, 2)

    def test_grid(self, tmp_path, capsys):
        rc = main(["grid", "--m", "30", "--k-star", "2", "--lambda", "0.01", "1",
                   "--step", "0.01", "--rank-k", "2", "--out", str(tmp_path)])
        assert rc == 0
        assert "best:" in capsys.readouterr().out
        assert (tmp_path / "grid.csv").read_text().count("\n") == 3

    def test_config_file_with_flag_override(self, tmp_path):
        c = tmp_path / "c.yaml"
        c.write_text("m: 30\nk_star: 2\nlambdas: [0.01]\nsteps: [0.01]\nranks: [2]\nseeds: [0]\n")
        rc = main(["synth", "--config", str(c), "--m", "25", "--out", str(tmp_path)])
        assert rc == 0
        assert json.loads((tmp_path / "summary.json").read_text())["config"]["m"] == 25

    def test_bad_config_exits_2(self, capsys):
        assert main(["synth", "--lambda", "1000"]) == 2
        assert "config field 'lambdas'" in capsys.readouterr().err

    def test_missing_triplet_file_exits_2(self, tmp_path, capsys):
        rc = main(["complete", "--triplets", str(tmp_path / "nope.csv"), "--rows", "3",
                   "--cols", "3", "--lambda", "0.1", "--step", "0.01", "--rank-k", "1"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_prox_check_exit_code(self, monkeypatch, capsys):
        import nnfn.oracles as oracles

        def fake(seed=0, progress=None):
            rs = [SuiteResult("a", True, 1, 0, ""), SuiteResult("b", seed == 0, 1, 0, "")]
            for r in rs:
                progress(r)
            return rs

        monkeypatch.setattr(oracles, "run_all", fake)
        assert main(["prox-check"]) == 0
        assert main(["prox-check", "--seed", "1"]) == 1
        assert "FAIL" in capsys.readouterr().out
