"""Experiment runner: config handling, grid search, repeated runs and report files.

Configs are flat YAML mappings whose keys are the fields of
:class:`ExperimentConfig`. Every key can be overridden on the command line as
``--key-name`` (underscores become dashes); a few short aliases such as
``--lambda`` and ``--step`` are also accepted.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .data import build_laplacian, generate_synthetic, load_affinity, load_triplets, split_observations
from .linalg import FactorPair, ObservedMatrix
from .metrics import EvaluationReport, MetricName, nmse, numerical_rank, rmse
from .regularizers import RegularizerKind, RegularizerSpec
from .solvers import SolverConfig, SolveTrace, Status, TraceRecord, solve_factored, solve_proximal

log = logging.getLogger(__name__)

LAMBDA_RANGE = (1e-3, 1e2)
STEP_RANGE = (1e-5, 1.0)
TRACE_HEADER = ["iter", "objective", "elapsed_s", "val_error", "rank"]


def _log_grid(lo, hi, n=6):
    return [float(f"{v:.6g}") for v in np.logspace(math.log10(lo), math.log10(hi), n)]


@dataclass
class ExperimentConfig:
    # data
    source: str = "synthetic"            # synthetic | triplets
    m: int = 500
    k_star: int = 5
    noise_std: float = math.sqrt(0.1)
    sparsity_multiplier: float = 1.0
    triplets: Optional[str] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    one_based: bool = False
    split: list = field(default_factory=lambda: [0.5, 0.25, 0.25])
    # solver
    solver: str = "factored"             # proximal | factored
    reg: str = "nnfn"
    lambdas: list = field(default_factory=lambda: _log_grid(*LAMBDA_RANGE))
    steps: list = field(default_factory=lambda: _log_grid(*STEP_RANGE))
    ranks: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50])
    thetas: list = field(default_factory=lambda: [1.0])
    max_iters: int = 10000
    tol: float = 1e-4
    eval_every: int = 1
    zero_guard_eps: float = 1e-12
    rank_tol: float = 1e-8
    laplacian: Optional[str] = None
    laplacian_weight: float = 0.0
    # protocol
    metric: str = "NMSE"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: Optional[str] = None
    workers: int = 1
    allow_out_of_range: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(name, msg):
            raise ValueError(f"config field '{name}': {msg}")

        if self.source not in ("synthetic", "triplets"):
            bad("source", "must be 'synthetic' or 'triplets'")
        if self.solver not in ("proximal", "factored"):
            bad("solver", "must be 'proximal' or 'factored'")
        try:
            kind = RegularizerKind(self.reg)
        except ValueError:
            bad("reg", f"unknown regularizer {self.reg!r}")
        if self.solver == "factored" and kind not in (RegularizerKind.NNFN, RegularizerKind.NUCLEAR):
            bad("reg", "the factored solver supports nnfn and nuclear only")
        try:
            MetricName(self.metric)
        except ValueError:
            bad("metric", "must be NMSE or RMSE")
        for name in ("lambdas", "steps", "ranks", "seeds"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)) or len(v) == 0:
                bad(name, "must be a non-empty list")
        if kind.needs_theta and not self.thetas:
            bad("thetas", "must be a non-empty list")
        if not self.allow_out_of_range:
            lo, hi = LAMBDA_RANGE
            for v in self.lambdas:
                if not lo <= v <= hi:
                    bad("lambdas", f"{v} outside [{lo:g}, {hi:g}] (set allow_out_of_range to override)")
            lo, hi = STEP_RANGE
            for v in self.steps:
                if not lo <= v <= hi:
                    bad("steps", f"{v} outside [{lo:g}, {hi:g}] (set allow_out_of_range to override)")
        for v in self.lambdas:
            if not v >= 0:
                bad("lambdas", "values must be >= 0")
        for v in self.steps:
            if not v > 0:
                bad("steps", "values must be > 0")
        for v in self.ranks:
            if v is not None and int(v) < 1:
                bad("ranks", "values must be >= 1")
            if v is None and self.solver == "factored":
                bad("ranks", "the factored solver needs an explicit k")
        if self.source == "synthetic":
            if not self.m >= self.k_star >= 1:
                bad("k_star", "need m >= k_star >= 1")
            if self.noise_std < 0:
                bad("noise_std", "must be >= 0")
        else:
            if not self.triplets:
                bad("triplets", "required when source is 'triplets'")
            if not self.rows or not self.cols:
                bad("rows", "rows and cols are required when source is 'triplets'")
            if len(self.split) != 3 or abs(sum(self.split) - 1) > 1e-9:
                bad("split", "must be three fractions summing to 1")
        if self.laplacian_weight < 0:
            bad("laplacian_weight", "must be >= 0")
        if self.workers < 1:
            bad("workers", "must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "noise_variance" in d:
            if "noise_std" in d:
                raise ValueError("config field 'noise_variance': give noise_std or noise_variance, not both")
            d["noise_std"] = math.sqrt(float(d.pop("noise_variance")))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            d = yaml.safe_load(fh) or {}
        if not isinstance(d, dict):
            raise ValueError(f"{path}: expected a mapping at top level")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def kind(self) -> RegularizerKind:
        return RegularizerKind(self.reg)

    def grid_points(self) -> list[dict]:
        """Grid in deterministic order; the theta axis collapses when unused."""
        thetas = self.thetas if self.kind.needs_theta else [None]
        return [dict(lam=float(lam), step=float(step), rank=None if k is None else int(k),
                     theta=None if th is None else float(th))
                for lam, step, k, th in itertools.product(self.lambdas, self.steps, self.ranks, thetas)]


# Data preparation -------------------------------------------------------------------

@dataclass
class PreparedData:
    train: ObservedMatrix
    validation: ObservedMatrix
    test: ObservedMatrix
    ground_truth: Optional[np.ndarray] = None
    test_mask: Optional[np.ndarray] = None
    laplacian: Optional[np.ndarray] = None


def prepare_data(cfg: ExperimentConfig, seed: int, _cache: dict | None = None) -> PreparedData:
    """Synthetic instance or split triplet file for one repetition."""
    lap = None
    if cfg.laplacian:
        lap = build_laplacian(load_affinity(cfg.laplacian))
    if cfg.source == "synthetic":
        inst = generate_synthetic(cfg.m, cfg.k_star, cfg.noise_std, cfg.sparsity_multiplier, seed)
        mask = inst.test_mask
        test = ObservedMatrix.from_dense(inst.ground_truth, mask)
        data = PreparedData(inst.train, inst.validation, test, inst.ground_truth, mask, lap)
    else:
        key = (cfg.triplets, cfg.rows, cfg.cols, cfg.one_based)
        if _cache is not None and key in _cache:
            obs = _cache[key]
        else:
            obs = load_triplets(cfg.triplets, cfg.rows, cfg.cols, cfg.one_based)
            if _cache is not None:
                _cache[key] = obs
        tr, va, te = split_observations(obs, cfg.split, seed)
        data = PreparedData(tr, va, te, laplacian=lap)
    if lap is not None and lap.shape[0] != data.train.shape[0]:
        raise ValueError(f"config field 'laplacian': size {lap.shape[0]} does not match "
                         f"{data.train.shape[0]} rows")
    return data


def score(X, target: ObservedMatrix, metric: str) -> float:
    """Metric of ``X`` against the values stored in ``target``."""
    if MetricName(metric) is MetricName.RMSE:
        return rmse(X, target)
    return nmse(X, target.to_dense(), target)


def heldout_score(X, data: PreparedData, metric: str) -> float:
    if data.ground_truth is not None and MetricName(metric) is MetricName.NMSE:
        return nmse(X, data.ground_truth, data.test_mask)
    return score(X, data.test, metric)


# Single runs ----------------------------------------------------------------------------

@dataclass
class RunResult:
    point: dict
    seed: int
    status: str
    val_metric: float
    test_metric: float
    rank: int
    wall_time: float
    n_iters: int
    trace: SolveTrace = field(repr=False, default=None)
    solution: object = field(repr=False, default=None)

    def row(self) -> dict:
        return {**self.point, "seed": self.seed, "status": self.status,
                "val_metric": self.val_metric, "test_metric": self.test_metric,
                "recovered_rank": self.rank, "wall_time": self.wall_time, "n_iters": self.n_iters}


def solver_config(cfg: ExperimentConfig, point: dict, seed: int) -> SolverConfig:
    spec = RegularizerSpec(cfg.kind, point["lam"], point["theta"])
    common = dict(regularizer=spec, stepsize=point["step"], max_iters=cfg.max_iters,
                  rel_tol=cfg.tol, seed=seed, laplacian_weight=cfg.laplacian_weight,
                  zero_guard_eps=cfg.zero_guard_eps, eval_every=cfg.eval_every)
    if cfg.solver == "factored":
        return SolverConfig(rank_k=point["rank"], **common)
    return SolverConfig(rank_cap=point["rank"], **common)


def run_point(cfg: ExperimentConfig, data: PreparedData, point: dict, seed: int,
              keep_solution: bool = False) -> RunResult:
    scfg = solver_config(cfg, point, seed)
    solve = solve_factored if cfg.solver == "factored" else solve_proximal
    X, trace = solve(data.train, scfg, data.validation, laplacian=data.laplacian)
    if trace.status is Status.NUMERICAL_FAILURE:
        val = test = math.inf
    else:
        val = score(X, data.validation, cfg.metric) if data.validation.nnz else math.nan
        test = heldout_score(X, data, cfg.metric) if data.test.nnz else math.nan
    rank = numerical_rank(X, cfg.rank_tol) if trace.status is not Status.NUMERICAL_FAILURE else -1
    return RunResult(point, seed, trace.status.value, float(val), float(test), int(rank),
                     trace.wall_time, trace.n_iters, trace, X if keep_solution else None)


def _grid_task(args):
    cfg, seed, point = args
    data = prepare_data(cfg, seed)
    res = run_point(cfg, data, point, seed)
    res.trace = None
    return res


# Grid search ----------------------------------------------------------------------------

@dataclass
class GridResult:
    best: dict
    rows: list
    runs: list = field(default_factory=list, repr=False)

    def best_run(self) -> RunResult | None:
        """The run at the selected point, if it was kept (serial search only)."""
        for res in self.runs:
            if res.point == self.best and res.trace is not None:
                return res
        return None

    def best_row(self) -> dict:
        for r in self.rows:
            if all(r[k] == v for k, v in self.best.items()):
                return r
        raise KeyError("best point missing from report")


def _selection_key(r: dict):
    val = r["val_metric"]
    if not math.isfinite(val):
        val = math.inf
    rank = math.inf if r["rank"] is None else r["rank"]
    theta = -math.inf if r["theta"] is None else r["theta"]
    return (val, r["lam"], rank, r["step"], theta)


def grid_search(cfg: ExperimentConfig, seed: int | None = None,
                data: PreparedData | None = None) -> GridResult:
    """Evaluate every grid point on the validation metric and pick the argmin.

    Ties are broken by smaller lambda, then smaller k, then smaller stepsize.
    Rows are reported in grid order whatever order the points finish in.

    Raises
    ------
    RuntimeError
        If every grid point failed numerically.
    """
    seed = cfg.seeds[0] if seed is None else seed
    points = cfg.grid_points()
    if cfg.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_grid_task, [(cfg, seed, p) for p in points]))
    else:
        data = data if data is not None else prepare_data(cfg, seed)
        if data.validation.nnz == 0:
            raise ValueError("grid search needs a non-empty validation split")
        results = [run_point(cfg, data, p, seed) for p in points]
    rows = [res.row() for res in results]
    ok = [r for r in rows if r["status"] != Status.NUMERICAL_FAILURE.value
          and math.isfinite(r["val_metric"])]
    if not ok:
        raise RuntimeError("every grid point failed numerically")
    best = min(ok, key=_selection_key)
    best_point = {k: best[k] for k in ("lam", "step", "rank", "theta")}
    return GridResult(best_point, rows, results)


def write_grid_report(result: GridResult, path) -> None:
    cols = ["lam", "step", "rank", "theta", "status", "val_metric", "test_metric",
            "recovered_rank", "wall_time", "n_iters"]
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in result.rows:
                w.writerow(["" if r[c] is None else r[c] for c in cols])
    except OSError as exc:
        raise OSError(f"cannot write grid report {path}: {exc}") from exc


# Trace files ------------------------------------------------------------------------------

def emit_trace(trace: SolveTrace, path) -> None:
    """Write ``trace`` as CSV with header ``iter,objective,elapsed_s,val_error,rank``."""
    if not trace.records:
        raise ValueError("cannot emit an empty trace")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for r in trace.records:
                w.writerow([r.iteration, repr(r.objective), repr(r.elapsed_s),
                            "" if r.val_error is None else repr(r.val_error), r.rank])
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc}") from exc


def read_trace(path) -> list[TraceRecord]:
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [TraceRecord(int(it), float(obj), float(t), None if v == "" else float(v), int(rk))
                for it, obj, t, v, rk in rd]


# Repeated runs -----------------------------------------------------------------------------

def _mean_std(values):
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def run_experiment(cfg: ExperimentConfig, point: dict | None = None, keep_solutions: bool = False):
    """Tune (if the grid has more than one point) on the first seed, then run every seed.

    Returns
    -------
    summary : dict
        Config echo, selected point, per-seed metrics, mean and stddev.
    results : list of RunResult
    """
    cache: dict = {}
    grid = None
    if point is None:
        points = cfg.grid_points()
        if len(points) == 1:
            point = points[0]
        else:
            grid = grid_search(cfg, cfg.seeds[0], prepare_data(cfg, cfg.seeds[0], cache))
            point = grid.best
    results = []
    for seed in cfg.seeds:
        # The solvers are deterministic, so the tuning run at the chosen point
        # already is the first seed's result.
        reuse = grid.best_run() if grid is not None and seed == cfg.seeds[0] else None
        if reuse is not None and not keep_solutions:
            results.append(reuse)
            continue
        data = prepare_data(cfg, seed, cache)
        res = run_point(cfg, data, point, seed, keep_solution=keep_solutions)
        if res.status == Status.NUMERICAL_FAILURE.value:
            log.warning("seed %d failed numerically", seed)
        results.append(res)

    finite = [r for r in results if r.status != Status.NUMERICAL_FAILURE.value]
    mean, std = _mean_std([r.test_metric for r in finite])
    tmean, tstd = _mean_std([r.wall_time for r in finite])
    summary = {
        "config": cfg.to_dict(),
        "selected": point,
        "metric": cfg.metric,
        "runs": [{k: v for k, v in r.row().items() if k not in ("lam", "step", "rank", "theta")}
                 for r in results],
        "mean": mean,
        "stddev": std,
        "wall_time_mean": tmean,
        "wall_time_stddev": tstd,
        "n_failed": len(results) - len(finite),
    }
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            if r.trace is not None and r.trace.records:
                emit_trace(r.trace, out / f"trace_seed{r.seed}.csv")
        if grid is not None:
            write_grid_report(grid, out / "grid.csv")
        with (out / "summary.json").open("w") as fh:
            json.dump(_jsonable(summary), fh, indent=2)
    return summary, results


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def evaluation_report(result: RunResult, cfg: ExperimentConfig, data: PreparedData) -> EvaluationReport:
    nnz = int(data.test_mask.sum()) if data.ground_truth is not None else data.test.nnz
    return EvaluationReport(cfg.metric, result.test_metric, nnz, result.rank, result.wall_time)


# Command line ---------------------------------------------------------------------------------

_ALIASES = {"lambdas": ["--lambda"], "steps": ["--step"], "ranks": ["--rank-k"],
            "thetas": ["--theta"], "seeds": ["--seed"], "tol": [], "max_iters": []}


def _parse_optional_int(s: str):
    return None if s.lower() in ("none", "full") else int(s)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file with ExperimentConfig fields")
    p.add_argument("--noise-variance", type=float, dest="noise_variance",
                   help="alternative to --noise-std")
    p.add_argument("-v", "--verbose", action="store_true")
    for f in dataclasses.fields(ExperimentConfig):
        flags = [f"--{f.name.replace('_', '-')}"] + _ALIASES.get(f.name, [])
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            p.add_argument(*flags, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, list):
            typ = {"ranks": _parse_optional_int, "seeds": int}.get(f.name, float)
            p.add_argument(*flags, dest=f.name, nargs="+", type=typ, default=None)
        else:
            typ = type(default) if default is not None else str
            if f.name in ("rows", "cols"):
                typ = int
            p.add_argument(*flags, dest=f.name, type=typ, default=None)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = yaml.safe_load(fh) or {}
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    if getattr(args, "noise_variance", None) is not None:
        base.pop("noise_std", None)
        base["noise_variance"] = args.noise_variance
    return ExperimentConfig.from_dict(base)


def _print_summary(summary: dict) -> None:
    print(f"selected: {summary['selected']}")
    for r in summary["runs"]:
        print(f"  seed {r['seed']}: {summary['metric']}={r['test_metric']:.6g} "
              f"rank={r['recovered_rank']} time={r['wall_time']:.3f}s iters={r['n_iters']} [{r['status']}]")
    print(f"{summary['metric']} mean={summary['mean']:.6g} std={summary['stddev']:.3g} "
          f"time mean={summary['wall_time_mean']:.3f}s")


def _cmd_run(args) -> int:
    cfg = config_from_args(args)
    if args.command == "complete" and cfg.source != "triplets":
        cfg = dataclasses.replace(cfg, source="triplets")
    summary, results = run_experiment(cfg, keep_solutions=args.command == "complete")
    _print_summary(summary)
    if args.command == "complete" and cfg.out:
        sol = results[0].solution
        path = Path(cfg.out) / "solution.npz"
        if isinstance(sol, FactorPair):
            np.savez(path, W=sol.W, H=sol.H)
        elif sol is not None:
            np.savez(path, X=sol)
        print(f"wrote {path}")
    return 0 if summary["n_failed"] < len(results) else 1


def _cmd_grid(args) -> int:
    cfg = config_from_args(args)
    res = grid_search(cfg)
    for r in res.rows:
        print(f"lam={r['lam']:<8g} step={r['step']:<8g} rank={r['rank']!s:<5} theta={r['theta']!s:<6} "
              f"val={r['val_metric']:.6g} test={r['test_metric']:.6g} "
              f"time={r['wall_time']:.3f}s [{r['status']}]")
    print(f"best: {res.best}")
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        write_grid_report(res, Path(cfg.out) / "grid.csv")
    return 0


def _cmd_prox_check(args) -> int:
    from .oracles import run_all

    results = run_all(seed=args.seed_value, progress=lambda r: print(r.line(), flush=True))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnfn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("synth", "generate synthetic data, tune, solve and evaluate"),
                        ("complete", "complete a triplet file and write the recovered matrix"),
                        ("grid", "grid search on the validation split of the first seed")]:
        sp = sub.add_parser(name, help=help_)
        _add_config_flags(sp)
    pc = sub.add_parser("prox-check", help="run the brute-force prox oracle suites")
    pc.add_argument("--seed", dest="seed_value", type=int, default=0)
    pc.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "prox-check":
            return _cmd_prox_check(args)
        if args.command == "grid":
            return _cmd_grid(args)
        return _cmd_run(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
