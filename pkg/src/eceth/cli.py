"""Command-line interface: ``eceth evaluate | plot-data | simulate``.

Settings come from an optional JSON config file (``--config``) and from
flags; flags win. Exit codes: 0 success, 2 bad input or configuration,
3 estimation failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import plot_csv, plot_table
from .data import ColumnSpec, load_csv
from .errors import ConfigError, EstimationError, InputError
from .inference import bootstrap, test_miscalibration
from .nuisance import CrossFitPlan, LearnerSpec
from .pipeline import PipelineConfig, run_pipeline
from .simbench import SimScenario, emit_tables, high_dim_grid, run_scenario

SCHEMA_VERSION = 1

EVAL_DEFAULTS = {
    "input": None,
    "outcome_col": "y",
    "treatment_col": "w",
    "prediction_col": "delta",
    "feature_cols": None,
    "score": "aipw",
    "known_pi": None,
    "propensity": "logistic",
    "outcome": "trees",
    "use_prediction": False,
    "folds": 5,
    "pooling": "pooled",
    "bins": "auto",
    "bin_strategy": "freq",
    "loo": True,
    "bootstrap": 1000,
    "level": 0.05,
    "epsilon": [],
    "freeze_nuisance": False,
    "seed": None,
    "threads": 1,
    "out": None,
}


def _jsonable(x):
    """Replace NaN/inf by None and numpy scalars by Python ones."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def dumps(obj) -> str:
    # repr-based float output is the shortest string that round-trips
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    if "schema_version" in cfg and isinstance(cfg.get("config"), dict):
        # a previous report: re-run with its embedded configuration
        cfg = cfg["config"]
    return cfg


def _merge(defaults: dict, cfg: dict, args: argparse.Namespace) -> dict:
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    merged = {**defaults, **cfg}
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    return merged


def _resolve_seed(seed):
    if seed is not None:
        return int(seed)
    env = os.environ.get("ECETH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ECETH_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_bins(v):
    if v is None or v == "auto":
        return v
    try:
        k = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"bins must be a positive integer or 'auto', got {v!r}") from None
    if k < 1:
        raise ConfigError(f"bins must be a positive integer or 'auto', got {v!r}")
    return k


def resolve_eval_config(args: argparse.Namespace) -> dict:
    cfg = _merge(EVAL_DEFAULTS, _read_config(args.config), args)
    cfg["seed"] = _resolve_seed(cfg["seed"])
    cfg["bins"] = _parse_bins(cfg["bins"])
    if isinstance(cfg["feature_cols"], str):
        cfg["feature_cols"] = [c.strip() for c in cfg["feature_cols"].split(",") if c.strip()]
    cfg["epsilon"] = [float(e) for e in (cfg["epsilon"] or [])]
    if cfg["input"] is None:
        raise ConfigError("no input CSV given; use --input")
    if not cfg["prediction_col"]:
        raise ConfigError("CATE predictions are required; name their column with --prediction-col")
    if not 0 < cfg["level"] < 1:
        raise ConfigError("--level must lie in (0, 1); 0.05 gives a 95% interval")
    if cfg["bootstrap"] < 0 or cfg["bootstrap"] == 1:
        raise ConfigError("--bootstrap must be 0 (disabled) or at least 2")
    if any(e < 0 for e in cfg["epsilon"]):
        raise ConfigError("--epsilon values must be non-negative")
    return cfg


def _pipeline_config(cfg: dict) -> PipelineConfig:
    if cfg["known_pi"] is not None:
        prop = LearnerSpec("constant", pi=float(cfg["known_pi"]))
    else:
        prop = LearnerSpec.from_dict(cfg["propensity"])
    outcome = LearnerSpec.from_dict(cfg["outcome"]) if cfg["score"] == "aipw" else None
    plan = CrossFitPlan(int(cfg["folds"]), cfg["pooling"], prop, outcome, cfg["seed"], bool(cfg["use_prediction"]))
    return PipelineConfig(cfg["score"], plan, cfg["bins"], cfg["bin_strategy"], "robust", bool(cfg["loo"]))


def _load(cfg: dict):
    import csv as _csv

    features = cfg["feature_cols"]
    if features is None:
        # every column not otherwise claimed is a covariate
        with Path(cfg["input"]).open(newline="", encoding="utf-8") as fh:
            header = next(_csv.reader(fh), None) or []
        claimed = {cfg["outcome_col"], cfg["treatment_col"], cfg["prediction_col"]}
        features = [h.strip() for h in header if h.strip() not in claimed]
    spec = ColumnSpec(cfg["outcome_col"], cfg["treatment_col"], tuple(features), cfg["prediction_col"])
    try:
        return load_csv(cfg["input"], spec)
    except InputError as exc:
        if cfg["prediction_col"] and f"column {cfg['prediction_col']!r} not found" in str(exc):
            raise InputError(f"{exc}. This tool evaluates externally supplied CATE predictions: "
                             f"set --prediction-col to the column holding them") from None
        raise


def cmd_evaluate(cfg: dict) -> dict:
    data = _load(cfg)
    pcfg = _pipeline_config(cfg)
    res = run_pipeline(data, pcfg)
    scores = res.scores.scores
    report = {
        "schema_version": SCHEMA_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "n": len(data),
        "n_treated": data.n_treated,
        "score_kind": res.scores.kind,
        "pooling": res.scores.pooling,
        "bins": {"requested": cfg["bins"], "resolved": res.K, "strategy": pcfg.strategy},
        "ate": {"estimate": res.ate, "se": float(np.std(scores, ddof=1) / math.sqrt(len(scores)))},
        "theta": {
            "plugin": {"raw": res.plugin.theta, "truncated": res.plugin.truncated_theta},
            "robust": {"raw": res.robust.theta, "truncated": res.robust.truncated_theta},
        },
        "bootstrap": None,
        "tests": [],
        "calibration": plot_table(res.curve, data.delta),
        # the output path is not a setting of the computation
        "config": {k: v for k, v in cfg.items() if k != "out"},
    }
    if cfg["bootstrap"]:
        boot = bootstrap(data, pcfg, int(cfg["bootstrap"]), cfg["level"], cfg["seed"],
                         n_jobs=int(cfg["threads"]), freeze_nuisance=bool(cfg["freeze_nuisance"]), point=res)
        report["bootstrap"] = boot.to_dict()
        for eps in cfg["epsilon"]:
            if boot.se > 0:
                report["tests"].append(test_miscalibration(res.robust.theta, boot.se, eps, cfg["level"]).to_dict())
            else:
                report["tests"].append({"epsilon": eps, "error": "bootstrap standard error is zero"})
    return report


def cmd_plot_data(cfg: dict) -> str:
    data = _load(cfg)
    res = run_pipeline(data, _pipeline_config(cfg))
    return plot_csv(plot_table(res.curve, data.delta))


SIM_DEFAULTS = {
    "grid": {},
    "scenarios": [],
    "replicates": 200,
    "seed": None,
    "threads": 1,
    "format": "markdown",
    "out_dir": None,
    "estimators": ["plugin", "robust"],
}


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of the listed scenario fields.

    ``"high_dim": true`` replaces the ``n``/``P_extra`` axes with the
    (N, P) pairs of the high-dimensional study.
    """
    grid = dict(grid)
    high_dim = bool(grid.pop("high_dim", False))
    axes = {k: (v if isinstance(v, list) else [v]) for k, v in grid.items()}
    if high_dim:
        sizes = axes.pop("n", [500, 1000, 2000, 4000])
        axes.pop("P_extra", None)
        axes["_np"] = [list(p) for p in high_dim_grid(sizes)]
    keys = list(axes)
    cells = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        cell = dict(zip(keys, combo))
        if "_np" in cell:
            cell["n"], cell["P_extra"] = cell.pop("_np")
        cells.append(cell)
    return cells


def resolve_sim_config(args: argparse.Namespace) -> dict:
    cfg = _merge(SIM_DEFAULTS, _read_config(args.config), args)
    cfg["seed"] = _resolve_seed(cfg["seed"])
    if cfg["format"] not in ("markdown", "csv"):
        raise ConfigError("--format must be 'markdown' or 'csv'")
    cells = expand_grid(cfg["grid"]) if cfg["grid"] else []
    cells += [dict(s) for s in cfg["scenarios"]]
    if not cells:
        raise ConfigError("simulation config declares no scenarios (use 'grid' or 'scenarios')")
    scenarios = []
    for i, cell in enumerate(cells):
        cell.setdefault("replicates", cfg["replicates"])
        cell.setdefault("seed", cfg["seed"] + i)
        try:
            scenarios.append(SimScenario.from_dict(cell))
        except (InputError, TypeError) as exc:
            raise ConfigError(f"grid cell {cell}: {exc}") from None
    cfg["_scenarios"] = scenarios
    return cfg


def _group_label(s: SimScenario, estimator: str) -> str:
    parts = [s.setting, s.score.upper()]
    if s.misspecify_propensity:
        parts.append("misspecified propensity")
    return f"{' / '.join(parts)} / {estimator} estimator"


def cmd_simulate(cfg: dict) -> tuple[str, str]:
    """Run every scenario; returns (tables text, raw JSON text)."""
    results = []
    for s in cfg["_scenarios"]:
        try:
            out = run_scenario(s, n_jobs=int(cfg["threads"]))
        except EstimationError as exc:
            raise type(exc)(f"scenario (setting={s.setting}, alpha={s.alpha}, n={s.n}, P={s.P_extra}, "
                            f"score={s.score}): {exc}") from exc
        results += [out[k] for k in cfg["estimators"]]
    groups: dict[str, list] = {}
    for r in results:
        groups.setdefault(_group_label(r.scenario, r.estimator), []).append(r)
    parts = []
    for label, rs in groups.items():
        table = emit_tables(rs, cfg["format"])
        parts.append(f"## {label}\n\n{table}" if cfg["format"] == "markdown" else f"# {label}\n{table}")
    tables = "\n".join(parts)
    # worker count and destination do not change results, so they stay out of the raw blob
    public = {k: v for k, v in cfg.items() if not k.startswith("_") and k not in ("threads", "out_dir")}
    raw = dumps({"schema_version": SCHEMA_VERSION, "config": public,
                 "results": [r.to_dict() for r in results]})
    return tables, raw


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="CSV file with outcome, treatment, covariates and predictions")
    p.add_argument("--outcome-col", dest="outcome_col")
    p.add_argument("--treatment-col", dest="treatment_col")
    p.add_argument("--prediction-col", dest="prediction_col", help="column holding the CATE predictions")
    p.add_argument("--feature-cols", dest="feature_cols", help="comma-separated covariate columns "
                   "(default: every other column)")
    p.add_argument("--score", choices=["ipw", "aipw"])
    p.add_argument("--known-pi", dest="known_pi", type=float, help="known treated fraction (randomized design)")
    p.add_argument("--propensity", choices=["logistic", "trees", "marginal"])
    p.add_argument("--outcome-model", dest="outcome", choices=["ridge", "trees"])
    p.add_argument("--use-prediction", dest="use_prediction", action="store_const", const=True,
                   help="also give the prediction column to the nuisance learners")
    p.add_argument("--folds", type=int)
    p.add_argument("--pooling", choices=["pooled", "per-fold"])
    p.add_argument("--bins", help="bin count or 'auto'")
    p.add_argument("--bin-strategy", dest="bin_strategy", choices=["freq", "width"])
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples (0 disables)")
    p.add_argument("--level", type=float, help="miscoverage level a; 0.05 gives a 95%% interval")
    p.add_argument("--epsilon", type=float, action="append", help="tolerance for H0: theta >= epsilon "
                   "(repeatable)")
    p.add_argument("--freeze-nuisance", dest="freeze_nuisance", action="store_const", const=True,
                   help="resample the original scores instead of refitting nuisances per resample")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--config")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eceth", description="Calibration error of CATE predictions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_eval_flags(sub.add_parser("evaluate", help="estimate the calibration error of predictions in a CSV"))
    _add_eval_flags(sub.add_parser("plot-data", help="write per-bin calibration data as CSV"))
    sim = sub.add_parser("simulate", help="run the Monte-Carlo simulation grid")
    sim.add_argument("--config")
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--threads", type=int)
    sim.add_argument("--format", choices=["markdown", "csv"])
    sim.add_argument("--out-dir", dest="out_dir")
    return parser


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = resolve_sim_config(args)
            tables, raw = cmd_simulate(cfg)
            if cfg["out_dir"]:
                out = Path(cfg["out_dir"])
                out.mkdir(parents=True, exist_ok=True)
                ext = "md" if cfg["format"] == "markdown" else "csv"
                (out / f"tables.{ext}").write_text(tables, encoding="utf-8")
                (out / "raw.json").write_text(raw, encoding="utf-8")
            sys.stdout.write(tables)
        else:
            cfg = resolve_eval_config(args)
            if args.command == "evaluate":
                _write(dumps(cmd_evaluate(cfg)), cfg["out"])
            else:
                _write(cmd_plot_data(cfg), cfg["out"])
    except (InputError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
