"""Percentile bootstrap intervals and the one-sided miscalibration test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from statistics import NormalDist

import numpy as np

from . import _rng
from ._parallel import indexed_map
from .data import Dataset
from .errors import DegenerateSEError, InfeasibleBootstrapError
from .pipeline import PipelineConfig, PipelineResult, estimate_from_scores, run_pipeline


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Bootstrap distribution of one estimator.

    The interval is the ``(a/2, 1 - a/2)`` pair of linearly interpolated
    quantiles of ``estimates``; ``se`` is their sample standard deviation.
    """

    B: int
    estimates: np.ndarray
    point: float
    ci_low: float
    ci_high: float
    se: float
    level: float
    redraws: int = 0
    estimator: str = "robust"

    @property
    def truncated_point(self) -> float:
        return max(self.point, 0.0)

    @property
    def truncated_ci(self) -> tuple[float, float]:
        return max(self.ci_low, 0.0), max(self.ci_high, 0.0)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "B": self.B,
            "level": self.level,
            "point": self.point,
            "truncated_point": self.truncated_point,
            "ci": [self.ci_low, self.ci_high],
            "truncated_ci": list(self.truncated_ci),
            "se": self.se,
            "redraws": self.redraws,
        }


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    epsilon: float
    t_stat: float
    p_value: float
    reject: bool
    level: float

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "t_stat": self.t_stat, "p_value": self.p_value,
                "reject": self.reject, "level": self.level}


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def test_miscalibration(point: float, se: float, epsilon: float, level: float = 0.05) -> TestResult:
    """One-sided t-test of H0: theta >= epsilon.

    Small estimates are evidence against H0, so the p-value is the lower
    tail ``Phi(t)`` and H0 is rejected when ``t <= z_level``.
    """
    if not se > 0:
        raise DegenerateSEError(f"standard error must be positive, got {se}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    t = (point - epsilon) / se
    return TestResult(float(epsilon), float(t), normal_cdf(t), bool(t <= NormalDist().inv_cdf(level)), level)


test_miscalibration.__test__ = False


def _draw(n: int, w: np.ndarray, rng: np.random.Generator, limit: int):
    redraws = 0
    while True:
        idx = rng.integers(0, n, size=n)
        k = int(w[idx].sum())
        if 0 < k < n:
            return idx, redraws
        redraws += 1
        if redraws > limit:
            raise InfeasibleBootstrapError(
                f"{redraws} consecutive resamples contained a single treatment arm")


def _resample(b: int, dataset: Dataset, config: PipelineConfig, seed: int, limit: int, frozen=None):
    rng = _rng.rng_for(seed, _rng.BOOTSTRAP, b)
    idx, redraws = _draw(len(dataset), dataset.w, rng, limit)
    if frozen is not None:
        plugin, robust, _, _ = estimate_from_scores(frozen.take(idx), dataset.delta[idx], config.bins,
                                                   config.strategy, config.loo, idx)
    else:
        cfg = config.with_seed(_rng.derive_seed(config.plan.seed, _rng.BOOTSTRAP, b))
        res = run_pipeline(dataset.take(idx), cfg, units=idx)
        plugin, robust = res.plugin, res.robust
    return (plugin.theta if config.estimator == "plugin" else robust.theta), redraws


def bootstrap(dataset: Dataset, config: PipelineConfig, B: int = 1000, level: float = 0.05, seed: int = 0,
              *, n_jobs: int = 1, freeze_nuisance: bool = False,
              point: PipelineResult | None = None) -> BootstrapResult:
    """Nonparametric bootstrap of the configured estimator.

    Each resample draws ``n`` rows with replacement and re-runs the whole
    pipeline, nuisance fitting included, unless ``freeze_nuisance`` is set,
    in which case the original cross-fit scores are resampled with their rows.
    Copies of one observation are treated as a unit: they share a
    cross-fitting fold and leave-one-out drops all of them, otherwise a row's
    own score would leak back into its calibration value. Resamples with only one treatment arm are redrawn; the number of redraws
    is reported.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if point is None:
        point = run_pipeline(dataset, config)
    frozen = point.scores if freeze_nuisance else None
    task = partial(_resample, dataset=dataset, config=config, seed=seed, limit=10 * B, frozen=frozen)
    out = indexed_map(task, range(B), n_jobs)
    est = np.array([t for t, _ in out])
    lo, hi = np.quantile(est, [level / 2, 1 - level / 2])
    return BootstrapResult(B, est, point.estimate(config.estimator).theta, float(lo), float(hi),
                           float(np.std(est, ddof=1)), level, int(sum(r for _, r in out)), config.estimator)
