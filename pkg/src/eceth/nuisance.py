"""Propensity and outcome models, and J-fold cross-fitting of scores.

Learners
--------
Propensity: ``constant`` (known treated fraction), ``marginal`` (fitted
treated fraction, ignores covariates), ``logistic`` (IRLS with optional L2
penalty) and ``trees`` (bagged regression trees on the 0/1 treatment, leaf
means act as class probabilities).

Outcome: ``ridge`` on the design ``[1, x, w, w*x]`` and ``trees`` with the
treatment entered as an ordinary feature.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng, _trees
from .data import Dataset, split_folds
from .errors import (
    ConfigError,
    DegenerateTreatmentError,
    EstimationError,
    InsufficientDataError,
    SeparationError,
)
from .scores import ScoreSet, build_scores

PROPENSITY_KINDS = ("constant", "marginal", "logistic", "trees")
OUTCOME_KINDS = ("ridge", "trees")

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
IRLS_DIVERGENCE = 1e6


@dataclass(frozen=True)
class LearnerSpec:
    """Learner configuration shared by propensity and outcome models.

    ``lam=None`` means the kind's default penalty: 0 for logistic and
    ``1e-6 * n`` for ridge. ``max_features=None`` means ``ceil(d / 3)``.
    """

    kind: str
    lam: float | None = None
    n_trees: int = 100
    min_leaf: int = 20
    max_features: int | None = None
    clip: float = 0.01
    pi: float | None = None

    def __post_init__(self):
        if self.kind not in PROPENSITY_KINDS + OUTCOME_KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}")
        if not (0.0 < self.clip < 0.5):
            raise ConfigError(f"clip must lie in (0, 0.5), got {self.clip}")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("penalty must be non-negative")
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ConfigError("n_trees and min_leaf must be positive")
        if self.kind == "constant":
            if self.pi is None or not (0.0 < self.pi < 1.0):
                raise ConfigError("constant propensity needs pi in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | str | None) -> "LearnerSpec | None":
        if d is None or isinstance(d, LearnerSpec):
            return d
        if isinstance(d, str):
            return cls(kind=d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown learner option(s): {sorted(unknown)}")
        return cls(**d)


class _Forest:
    def __init__(self, X, y, spec: LearnerSpec, seed: int):
        n, d = X.shape
        mtry = spec.max_features or max(1, math.ceil(d / 3))
        mtry = min(mtry, d)
        seeds = np.array([_rng.derive_seed(seed, t) for t in range(spec.n_trees)], dtype=np.uint64)
        self.nodes = _trees.fit_forest(np.ascontiguousarray(X, dtype=float), np.asarray(y, dtype=float),
                                       spec.n_trees, spec.min_leaf, mtry, seeds, True)

    def predict(self, X):
        return _trees.predict_forest(np.ascontiguousarray(X, dtype=float), *self.nodes)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    kind: str
    params: object
    clip: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if self.kind in ("constant", "marginal"):
            p = np.full(n, float(self.params))
        elif self.kind == "logistic":
            p = _expit(self.params[0] + X @ self.params[1:])
        else:
            p = self.params.predict(X)
        return np.clip(p, self.clip, 1.0 - self.clip)


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    kind: str
    params: object

    def predict(self, X, w) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        w = np.broadcast_to(np.asarray(w, dtype=float), (X.shape[0],))
        if self.kind == "ridge":
            return _ridge_design(X, w) @ self.params
        return self.params.predict(np.column_stack([X, w]))


def _expit(z):
    # exp overflow is harmless here, it saturates to 0 or 1
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _check_arms(w) -> None:
    n1 = int(np.sum(w))
    if n1 == 0 or n1 == len(w):
        raise DegenerateTreatmentError("both treated and control observations are required")


def fit_logistic(X, w, lam: float = 0.0) -> np.ndarray:
    """IRLS for logistic regression; returns ``[intercept, coef...]``.

    The intercept is never penalized. Stops when the largest coefficient
    update drops below ``IRLS_TOL`` or after ``IRLS_MAX_ITER`` iterations.
    """
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    n, d = X.shape
    Z = np.column_stack([np.ones(n), X])
    pen = np.full(d + 1, float(lam))
    pen[0] = 0.0
    beta = np.zeros(d + 1)
    msg = "logistic coefficients diverged (perfect separation); use a positive penalty lam > 0"
    for _ in range(IRLS_MAX_ITER):
        p = _expit(Z @ beta)
        v = p * (1.0 - p)
        H = (Z * v[:, None]).T @ Z + np.diag(pen)
        g = Z.T @ (w - p) - pen * beta
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            # collinear design or vanishing weights; separation is caught below
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > IRLS_DIVERGENCE:
            raise SeparationError(msg)
        if np.max(np.abs(step)) < IRLS_TOL:
            return beta
    # coefficients drift linearly under separation and may never reach the
    # divergence bound; saturated fitted probabilities give it away
    p = _expit(Z @ beta)
    if np.any(p * (1.0 - p) < 1e-12):
        raise SeparationError(msg)
    return beta


def fit_propensity(X, w, spec: LearnerSpec, seed: int = 0) -> PropensityModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w)
    if spec.kind == "constant":
        return PropensityModel("constant", float(spec.pi), spec.clip)
    _check_arms(w)
    if spec.kind == "marginal":
        return PropensityModel("marginal", float(np.mean(w)), spec.clip)
    if spec.kind == "logistic":
        return PropensityModel("logistic", fit_logistic(X, w, spec.lam or 0.0), spec.clip)
    if spec.kind == "trees":
        return PropensityModel("trees", _Forest(X, w.astype(float), spec, seed), spec.clip)
    raise ConfigError(f"{spec.kind!r} is not a propensity learner")


def _ridge_design(X, w):
    return np.column_stack([np.ones(X.shape[0]), X, w, X * w[:, None]])


def fit_outcome(X, w, y, spec: LearnerSpec, seed: int = 0) -> OutcomeModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if spec.kind == "ridge":
        if n < d + 2:
            raise InsufficientDataError(f"ridge outcome model needs n >= d + 2 rows, got n={n}, d={d}")
        Z = _ridge_design(X, w)
        lam = 1e-6 * n if spec.lam is None else spec.lam
        pen = np.full(Z.shape[1], lam)
        pen[0] = 0.0
        A = Z.T @ Z + np.diag(pen)
        try:
            beta = np.linalg.solve(A, Z.T @ y)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(Z, y, rcond=None)[0]
        return OutcomeModel("ridge", beta)
    if spec.kind == "trees":
        n1 = int(w.sum())
        if min(n1, n - n1) < 10:
            raise InsufficientDataError("tree outcome model needs at least 10 rows per arm")
        return OutcomeModel("trees", _Forest(np.column_stack([X, w]), y, spec, seed))
    raise ConfigError(f"{spec.kind!r} is not an outcome learner")


@dataclass(frozen=True)
class CrossFitPlan:
    """How nuisance functions are estimated out of fold.

    ``use_prediction`` appends the CATE prediction column to the covariates
    seen by the nuisance learners. The prediction is a function of the
    covariates, so this never breaks identification, but it is collinear with
    them when the prediction is linear, hence off by default.
    """

    J: int = 5
    pooling: str = "pooled"
    propensity: LearnerSpec = field(default_factory=lambda: LearnerSpec("logistic"))
    outcome: LearnerSpec | None = field(default_factory=lambda: LearnerSpec("trees"))
    seed: int = 0
    use_prediction: bool = False

    def __post_init__(self):
        if self.pooling not in ("pooled", "per-fold"):
            raise ConfigError(f"pooling must be 'pooled' or 'per-fold', got {self.pooling!r}")
        if self.J < 2:
            raise ConfigError("cross-fitting needs J >= 2 folds")
        if self.propensity.kind not in PROPENSITY_KINDS:
            raise ConfigError(f"{self.propensity.kind!r} is not a propensity learner")
        if self.outcome is not None and self.outcome.kind not in OUTCOME_KINDS:
            raise ConfigError(f"{self.outcome.kind!r} is not an outcome learner")

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "pooling": self.pooling,
            "propensity": self.propensity.to_dict(),
            "outcome": None if self.outcome is None else self.outcome.to_dict(),
            "seed": self.seed,
            "use_prediction": self.use_prediction,
        }


def nuisance_features(dataset: Dataset, use_prediction: bool = False) -> np.ndarray:
    if use_prediction and dataset.delta is not None:
        return np.column_stack([dataset.X, dataset.delta])
    return dataset.X


def cross_fit_scores(dataset: Dataset, plan: CrossFitPlan, score_kind: str = "aipw", units=None) -> ScoreSet:
    """Scores whose nuisance estimates come from models fit without the row's fold.

    When ``units`` is given, folds are assigned per unit so duplicated rows
    never sit on both sides of a split.
    """
    if score_kind not in ("ipw", "aipw"):
        raise ConfigError(f"score kind must be 'ipw' or 'aipw', got {score_kind!r}")
    if score_kind == "aipw" and plan.outcome is None:
        raise ConfigError("AIPW scores need an outcome learner")
    _check_arms(dataset.w)
    n = len(dataset)
    if units is None:
        folds = split_folds(n, plan.J, plan.seed)
    else:
        _, inv = np.unique(np.asarray(units), return_inverse=True)
        folds = split_folds(int(inv.max()) + 1, plan.J, plan.seed)[inv.ravel()]
    known = plan.propensity.kind == "constant"
    kind = f"{score_kind}-{'known' if known else 'estimated'}"
    if kind == "aipw-known":
        kind = "aipw-known-pi"
    if known and score_kind == "ipw":
        return build_scores(dataset, plan.propensity.pi, None, kind, fold_ids=folds, pooling=plan.pooling)

    X = nuisance_features(dataset, plan.use_prediction)
    w, y = dataset.w, dataset.y
    pi = np.empty(n)
    mu1 = np.empty(n) if score_kind == "aipw" else None
    mu0 = np.empty(n) if score_kind == "aipw" else None
    for j in range(plan.J):
        test = folds == j
        train = ~test
        try:
            prop = fit_propensity(X[train], w[train], plan.propensity,
                                  _rng.derive_seed(plan.seed, _rng.PROPENSITY, j))
            pi[test] = prop.predict(X[test])
            if score_kind == "aipw":
                out = fit_outcome(X[train], w[train], y[train], plan.outcome,
                                  _rng.derive_seed(plan.seed, _rng.OUTCOME, j))
                mu1[test] = out.predict(X[test], 1.0)
                mu0[test] = out.predict(X[test], 0.0)
        except EstimationError as exc:
            raise type(exc)(f"fold {j}: {exc}") from exc
    mu = None if score_kind == "ipw" else (mu1, mu0)
    return build_scores(dataset, pi, mu, kind, fold_ids=folds, pooling=plan.pooling)
