"""Monte-Carlo study of the calibration-error estimators.

Two data-generating processes share the outcome model
``Y(0) = X1 + eps``, ``Y(1) = Y(0) + gamma(Delta)`` with
``gamma(d) = (1 - alpha) d + alpha d^2``:

* ``rct``: ``Delta ~ Unif[-1, 1]`` independent of ``X1`` and ``W ~ Bern(0.5)``.
* ``observational``: a confounder ``X0 ~ N(0, 1)`` drives both the
  prediction ``Delta = 0.5 X0`` and the treatment, ``logit P(W=1) = 0.3 X0``.

``P_extra`` independent standard-normal noise covariates can be appended to
either design.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from . import _rng
from ._parallel import indexed_map
from .data import Dataset
from .errors import ConfigError, EcethError, SimulationError
from .nuisance import CrossFitPlan, LearnerSpec
from .pipeline import PipelineConfig, run_pipeline

SETTINGS = ("rct", "observational")
OBS_PROPENSITY_SLOPE = 0.3
OBS_PREDICTION_SLOPE = 0.5


def gamma_true(delta, alpha: float):
    return (1.0 - alpha) * delta + alpha * np.square(delta)


def theta_true(alpha: float, dist: str = "uniform") -> float:
    """``alpha^2 * E[D^2 (1 - D)^2]`` for the prediction distribution.

    ``uniform`` is Unif[-1, 1] (moment 8/15); ``normal`` is N(0, 0.25), the
    law of ``0.5 X0`` (moment ``s2 + 3 s2^2`` with ``s2 = 0.25``).
    """
    if dist == "uniform":
        m = 8.0 / 15.0
    elif dist == "normal":
        s2 = OBS_PREDICTION_SLOPE ** 2
        m = s2 + 3.0 * s2 * s2
    else:
        raise ValueError(f"unknown prediction distribution {dist!r}")
    return alpha * alpha * m


def _noise_names(p: int) -> list[str]:
    return [f"z{j}" for j in range(1, p + 1)]


def generate_rct(n: int, alpha: float, P_extra: int = 0, seed: int = 0) -> Dataset:
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = _rng.rng_for(seed, _rng.DATA)
    delta = rng.uniform(-1.0, 1.0, n)
    x1 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    w = (rng.random(n) < 0.5).astype(np.int8)
    Z = rng.standard_normal((n, P_extra))
    y0 = x1 + eps
    y1 = y0 + gamma_true(delta, alpha)
    y = np.where(w == 1, y1, y0)
    return Dataset(np.column_stack([x1, Z]), w, y, delta, ("x1", *_noise_names(P_extra)), y0, y1)


def generate_observational(n: int, alpha: float, P_extra: int = 0, seed: int = 0) -> Dataset:
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = _rng.rng_for(seed, _rng.DATA)
    x0 = rng.standard_normal(n)
    x1 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    p = 1.0 / (1.0 + np.exp(-OBS_PROPENSITY_SLOPE * x0))
    w = (rng.random(n) < p).astype(np.int8)
    Z = rng.standard_normal((n, P_extra))
    delta = OBS_PREDICTION_SLOPE * x0
    y0 = x1 + eps
    y1 = y0 + gamma_true(delta, alpha)
    y = np.where(w == 1, y1, y0)
    return Dataset(np.column_stack([x0, x1, Z]), w, y, delta, ("x0", "x1", *_noise_names(P_extra)), y0, y1)


@dataclass(frozen=True)
class SimScenario:
    """One cell of the simulation grid.

    Learner fields left as None pick the defaults used in the study:
    known ``pi = 0.5`` in the trial; in observational data a logistic
    propensity (bagged trees once noise covariates are added), or the
    covariate-free marginal treated fraction when ``misspecify_propensity``
    is set; bagged trees for the outcome model.
    """

    setting: str = "rct"
    n: int = 1000
    alpha: float = 0.0
    P_extra: int = 0
    misspecify_propensity: bool = False
    score: str = "aipw"
    estimator: str = "robust"
    bins: int | str = "auto"
    strategy: str = "freq"
    J: int = 5
    pooling: str = "pooled"
    propensity: LearnerSpec | None = None
    outcome: LearnerSpec | None = None
    seed: int = 0
    replicates: int = 200

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.n < 2 or self.P_extra < 0:
            raise ConfigError("n must be >= 2 and P_extra >= 0")
        if self.replicates < 2:
            raise ConfigError("at least 2 replicates are needed")
        if self.estimator not in ("plugin", "robust"):
            raise ConfigError(f"estimator must be 'plugin' or 'robust', got {self.estimator!r}")
        if self.setting == "rct" and self.misspecify_propensity:
            prop = self.propensity
            if prop is None or prop.kind == "constant":
                raise ConfigError("the trial uses the known propensity; there is nothing to misspecify")
        for name in ("propensity", "outcome"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, LearnerSpec):
                object.__setattr__(self, name, LearnerSpec.from_dict(v))

    @property
    def prediction_dist(self) -> str:
        return "uniform" if self.setting == "rct" else "normal"

    @property
    def theta_true(self) -> float:
        return theta_true(self.alpha, self.prediction_dist)

    def propensity_spec(self) -> LearnerSpec:
        if self.propensity is not None:
            return self.propensity
        if self.setting == "rct":
            return LearnerSpec("constant", pi=0.5)
        if self.misspecify_propensity:
            return LearnerSpec("marginal")
        return LearnerSpec("trees" if self.P_extra > 0 else "logistic")

    def outcome_spec(self) -> LearnerSpec | None:
        if self.score == "ipw":
            return None
        return self.outcome or LearnerSpec("trees")

    def pipeline_config(self, seed: int) -> PipelineConfig:
        # in the trial the prediction is drawn on its own and acts as a covariate
        plan = CrossFitPlan(self.J, self.pooling, self.propensity_spec(), self.outcome_spec(), seed,
                            use_prediction=self.setting == "rct")
        return PipelineConfig(self.score, plan, self.bins, self.strategy, self.estimator)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["propensity"] = self.propensity_spec().to_dict()
        out = self.outcome_spec()
        d["outcome"] = None if out is None else out.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SimResult:
    """Replicate estimates of one estimator and their summary metrics.

    ``se`` is the sample standard deviation (divisor R - 1) and
    ``mse = bias**2 + se**2``.
    """

    scenario: SimScenario
    estimator: str
    thetas: np.ndarray
    theta_true: float

    @property
    def R(self) -> int:
        return self.thetas.shape[0]

    @property
    def bias(self) -> float:
        return float(np.mean(self.thetas) - self.theta_true)

    @property
    def se(self) -> float:
        return float(np.std(self.thetas, ddof=1))

    @property
    def standardized_bias(self) -> float:
        se = self.se
        return self.bias / se if se > 0 else float("nan")

    @property
    def mse(self) -> float:
        return self.bias ** 2 + self.se ** 2

    def metrics(self) -> dict:
        return {"bias": self.bias, "se": self.se, "standardized_bias": self.standardized_bias, "mse": self.mse}

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "estimator": self.estimator, "theta_true": self.theta_true,
                **self.metrics(), "thetas": self.thetas.tolist()}


def _generate(scenario: SimScenario, seed: int) -> Dataset:
    gen = generate_rct if scenario.setting == "rct" else generate_observational
    return gen(scenario.n, scenario.alpha, scenario.P_extra, seed)


def _replicate(r: int, scenario: SimScenario) -> tuple[float, float]:
    seed = _rng.derive_seed(scenario.seed, _rng.REPLICATE, r)
    try:
        data = _generate(scenario, seed)
        res = run_pipeline(data, scenario.pipeline_config(seed))
    except EcethError as exc:
        raise SimulationError(f"replicate {r} (seed {seed}): {exc}") from exc
    return res.plugin.theta, res.robust.theta


def run_scenario(scenario: SimScenario, n_jobs: int = 1) -> dict[str, SimResult]:
    """Run every replicate once and summarise both estimators."""
    out = np.array(indexed_map(partial(_replicate, scenario=scenario), range(scenario.replicates), n_jobs))
    truth = scenario.theta_true
    return {
        "plugin": SimResult(replace(scenario, estimator="plugin"), "plugin", out[:, 0].copy(), truth),
        "robust": SimResult(replace(scenario, estimator="robust"), "robust", out[:, 1].copy(), truth),
    }


def run_replicates(scenario: SimScenario, n_jobs: int = 1) -> SimResult:
    return run_scenario(scenario, n_jobs)[scenario.estimator]


def summarize(thetas, theta_true: float, scenario: SimScenario | None = None) -> SimResult:
    scenario = scenario or SimScenario()
    return SimResult(scenario, scenario.estimator, np.asarray(thetas, dtype=float), float(theta_true))


TABLE_COLUMNS = ("alpha", "N", "P", "bias", "se", "s_bias", "mse")


def _row(res: SimResult) -> list[str]:
    s = res.scenario
    m = res.metrics()
    return [f"{s.alpha:g}", str(s.n), str(s.P_extra),
            *(f"{m[k]:.4f}" for k in ("bias", "se", "standardized_bias", "mse"))]


def emit_tables(results, fmt: str = "markdown") -> str:
    """Render results as one table ordered by (alpha, N, P), 4 decimals."""
    rows = [_row(r) for r in sorted(results, key=lambda r: (r.scenario.alpha, r.scenario.n, r.scenario.P_extra))]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "---|" * len(TABLE_COLUMNS)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def high_dim_grid(sizes=(500, 1000, 2000, 4000), fractions=(0.0125, 0.025, 0.05, 0.1)) -> list[tuple[int, int]]:
    """(N, P) pairs with P a fixed fraction of N, skipping P < 50 as in the study layout."""
    pairs = []
    for n in sizes:
        for f in fractions:
            p = int(round(f * n))
            if p >= 50:
                pairs.append((n, p))
    return pairs
