"""Plug-in and robust estimators of the l2 calibration error of CATE predictions.

The robust estimator pairs each centred score with the leave-one-out bin
mean, so a row's own score never enters the calibration value it is
multiplied against. The plug-in estimator squares the full-sample gap and is
biased upward by the variance of the bin means.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .calibration import CalibrationCurve
from .errors import EstimationError, ShapeError, SingletonBinError

ESTIMATOR_KINDS = ("plugin", "robust")


def default_bin_count(n: int) -> int:
    """``nint(20 * (n / 500) ** 0.4)`` clamped to ``[2, n]``."""
    if n < 1:
        raise ValueError("n must be positive")
    k = math.floor(20.0 * (n / 500.0) ** 0.4 + 0.5)
    return min(max(k, 2), n)


@dataclass(frozen=True)
class EcethEstimate:
    theta: float
    kind: str
    K: int
    strategy: str
    score_kind: str | None
    pooling: str
    n: int

    @property
    def truncated_theta(self) -> float:
        return max(self.theta, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truncated_theta"] = self.truncated_theta
        return d


def _meta(scores):
    return getattr(scores, "kind", None), getattr(scores, "pooling", "pooled")


def theta_plugin(curve: CalibrationCurve, delta, scores=None) -> EcethEstimate:
    delta = np.asarray(delta, dtype=float)
    if delta.shape[0] != len(curve.partition):
        raise ShapeError("predictions and curve cover different rows")
    gap = curve.fitted() - delta
    kind, pooling = _meta(scores)
    return EcethEstimate(float(np.mean(gap * gap)), "plugin", curve.K, curve.partition.strategy,
                         kind, pooling, int(delta.shape[0]))


def theta_robust(scores, delta, curve: CalibrationCurve, loo: bool = True) -> EcethEstimate:
    """Average of ``(score_i - delta_i) * (gamma_loo_i - delta_i)``.

    ``loo=False`` uses the full-sample bin mean instead (ablation only).
    """
    s = np.asarray(getattr(scores, "scores", scores), dtype=float)
    delta = np.asarray(delta, dtype=float)
    if s.shape != delta.shape or s.shape[0] != len(curve.partition):
        raise ShapeError("scores, predictions and curve must cover the same rows")
    if loo:
        try:
            g = curve.loo()
        except SingletonBinError as exc:
            raise EstimationError(str(exc)) from exc
    else:
        g = curve.fitted()
    kind, pooling = _meta(scores)
    theta = float(np.mean((s - delta) * (g - delta)))
    return EcethEstimate(theta, "robust", curve.K, curve.partition.strategy, kind, pooling, int(s.shape[0]))
