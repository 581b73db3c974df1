"""End-to-end evaluation: cross-fit scores, bin predictions, estimate both thetas."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import CalibrationCurve, _strategy, calibration_curve, make_bins, merge_singletons
from .data import Dataset
from .errors import ConfigError, ValidationError
from .estimator import ESTIMATOR_KINDS, EcethEstimate, default_bin_count, theta_plugin, theta_robust
from .nuisance import CrossFitPlan, cross_fit_scores
from .scores import ScoreSet


@dataclass(frozen=True)
class PipelineConfig:
    score: str = "aipw"
    plan: CrossFitPlan = field(default_factory=CrossFitPlan)
    bins: int | str = "auto"
    strategy: str = "freq"
    estimator: str = "robust"
    loo: bool = True

    def __post_init__(self):
        if self.score not in ("ipw", "aipw"):
            raise ConfigError(f"score must be 'ipw' or 'aipw', got {self.score!r}")
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigError(f"estimator must be one of {ESTIMATOR_KINDS}, got {self.estimator!r}")
        if self.bins != "auto" and (isinstance(self.bins, bool) or not isinstance(self.bins, (int, np.integer))
                                    or self.bins < 1):
            raise ConfigError(f"bins must be a positive integer or 'auto', got {self.bins!r}")
        try:
            object.__setattr__(self, "strategy", _strategy(self.strategy))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, plan=replace(self.plan, seed=seed))


@dataclass(frozen=True, eq=False)
class PipelineResult:
    scores: ScoreSet
    delta: np.ndarray
    K: int
    curve: CalibrationCurve
    plugin: EcethEstimate
    robust: EcethEstimate

    @property
    def ate(self) -> float:
        return self.scores.mean()

    def estimate(self, kind: str) -> EcethEstimate:
        return self.plugin if kind == "plugin" else self.robust


def resolve_bins(bins, n: int, delta=None) -> int:
    """Turn ``'auto'`` or an integer into the bin count actually used.

    Constant predictions admit a single bin only.
    """
    K = default_bin_count(n) if bins == "auto" else int(bins)
    if delta is not None and np.ptp(delta) == 0:
        K = 1
    return min(K, n)


def _estimate_once(scores: ScoreSet, delta, K: int, strategy: str, loo: bool, units=None):
    part = make_bins(delta, K, strategy)
    curve = calibration_curve(scores.scores, delta, part, units)
    est_part = merge_singletons(part, delta, units)
    est_curve = curve if est_part is part else calibration_curve(scores.scores, delta, est_part, units)
    return theta_plugin(est_curve, delta, scores), theta_robust(scores, delta, est_curve, loo=loo), curve


def estimate_from_scores(scores: ScoreSet, delta, bins="auto", strategy: str = "freq", loo: bool = True,
                         units=None):
    """Plug-in and robust estimates plus the display curve for given scores.

    Under per-fold pooling each fold is binned and estimated separately and
    the fold estimates are averaged; the returned curve is always the pooled
    one. ``units`` marks duplicated observations (see ``CalibrationCurve``).
    """
    delta = np.asarray(delta, dtype=float)
    n = delta.shape[0]
    K = resolve_bins(bins, n, delta)
    plugin, robust, curve = _estimate_once(scores, delta, K, strategy, loo, units)
    if scores.pooling == "per-fold":
        folds = np.asarray(scores.fold_ids)
        per = []
        for j in np.unique(folds):
            idx = np.flatnonzero(folds == j)
            Kj = resolve_bins(bins, idx.size, delta[idx])
            per.append(_estimate_once(scores.take(idx), delta[idx], Kj, strategy, loo,
                                      None if units is None else np.asarray(units)[idx])[:2])
        plugin = replace(plugin, theta=float(np.mean([p.theta for p, _ in per])))
        robust = replace(robust, theta=float(np.mean([r.theta for _, r in per])))
    return plugin, robust, curve, K


def run_pipeline(dataset: Dataset, config: PipelineConfig, scores: ScoreSet | None = None,
                 units=None) -> PipelineResult:
    """Cross-fit scores (unless given) and estimate both thetas.

    ``units`` labels rows that copy one original observation; copies share
    a cross-fitting fold and are left out together.
    """
    if dataset.delta is None:
        raise ValidationError("dataset has no CATE prediction column; predictions are required for evaluation")
    if scores is None:
        scores = cross_fit_scores(dataset, config.plan, config.score, units=units)
    plugin, robust, curve, K = estimate_from_scores(scores, dataset.delta, config.bins, config.strategy, config.loo,
                                                    units)
    return PipelineResult(scores, dataset.delta, K, curve, plugin, robust)
