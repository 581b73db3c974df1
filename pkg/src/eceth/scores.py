"""Per-observation CATE surrogate scores.

Each score has conditional mean equal to the CATE at the observation's
covariates (exactly for IPW with a known propensity, approximately when the
nuisance functions are estimated). Propensities must already lie strictly
inside (0, 1); clipping is done by the nuisance layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPropensityError, ShapeError

KINDS = ("ipw-known", "ipw-estimated", "aipw-known-pi", "aipw-estimated")
POOLING = ("pooled", "per-fold")


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Scores for every row of a dataset plus their provenance.

    ``pi``, ``mu1`` and ``mu0`` hold the (out-of-fold) nuisance values that
    produced each score; ``mu1``/``mu0`` are None for IPW.
    """

    scores: np.ndarray
    kind: str
    fold_ids: np.ndarray | None = None
    pooling: str = "pooled"
    pi: np.ndarray | None = None
    mu1: np.ndarray | None = None
    mu0: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.pooling not in POOLING:
            raise ValueError(f"unknown pooling mode {self.pooling!r}")
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 1:
            raise ShapeError("scores must be a 1-d array")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores contain non-finite values")
        if self.fold_ids is not None and np.shape(self.fold_ids) != s.shape:
            raise ShapeError("fold_ids length does not match scores")
        if self.pooling == "per-fold" and self.fold_ids is None:
            raise ValueError("per-fold pooling requires fold ids")
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return self.scores.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.scores

    def mean(self) -> float:
        return float(self.scores.mean())

    def take(self, idx) -> "ScoreSet":
        pick = lambda a: None if a is None else np.asarray(a)[idx]  # noqa: E731
        return ScoreSet(self.scores[idx], self.kind, pick(self.fold_ids), self.pooling,
                        pick(self.pi), pick(self.mu1), pick(self.mu0))


def _check_pi(pi) -> None:
    if not (0.0 < pi < 1.0):
        raise InvalidPropensityError(f"propensity must lie strictly in (0, 1), got {pi!r}")


def ipw_score(y: float, w: int, pi: float) -> float:
    _check_pi(pi)
    # one branch is multiplied by zero; written out so w=1 gives y/pi exactly
    return w * y / pi - (1 - w) * y / (1 - pi)


def aipw_score(y: float, w: int, pi: float, mu1: float, mu0: float) -> float:
    # (w - pi) / (pi (1 - pi)) == w/pi - (1-w)/(1-pi) for binary w; the IPW form
    # makes aipw_score(y, w, pi, 0, 0) == ipw_score(y, w, pi) bit-for-bit.
    mu_w = mu1 if w == 1 else mu0
    return (mu1 - mu0) + ipw_score(y - mu_w, w, pi)


def _ipw_vec(y, w, pi):
    return w * y / pi - (1 - w) * y / (1 - pi)


def build_scores(dataset, pi, mu=None, kind: str | None = None, *, fold_ids=None,
                 pooling: str = "pooled") -> ScoreSet:
    """Apply the score formula to every row.

    Parameters
    ----------
    dataset : Dataset
    pi : float or array_like
        Constant treated fraction (known design) or per-row propensities.
    mu : tuple of array_like, optional
        ``(mu1, mu0)`` outcome-model predictions under treatment and control.
    kind : str, optional
        One of ``KINDS``; inferred from ``pi`` and ``mu`` when omitted.
    """
    n = len(dataset)
    constant = np.ndim(pi) == 0
    if kind is None:
        kind = ("aipw" if mu is not None else "ipw") + ("-known" if constant else "-estimated")
        kind = kind.replace("aipw-known", "aipw-known-pi")
    if kind not in KINDS:
        raise ValueError(f"unknown score kind {kind!r}")
    if constant:
        _check_pi(float(pi))
        pi_vec = np.full(n, float(pi))
    else:
        pi_vec = np.asarray(pi, dtype=float)
        if pi_vec.shape != (n,):
            raise ShapeError(f"propensity vector has shape {pi_vec.shape}, expected ({n},)")
        if not np.all((pi_vec > 0) & (pi_vec < 1)):
            raise InvalidPropensityError("propensities must lie strictly in (0, 1)")
    w = dataset.w.astype(float)
    y = dataset.y
    if kind.startswith("aipw"):
        if mu is None:
            raise ValueError(f"score kind {kind!r} requires outcome predictions")
        mu1, mu0 = (np.asarray(m, dtype=float) for m in mu)
        if mu1.shape != (n,) or mu0.shape != (n,):
            raise ShapeError("outcome prediction vectors do not match dataset length")
        mu_w = np.where(dataset.w == 1, mu1, mu0)
        s = (mu1 - mu0) + _ipw_vec(y - mu_w, w, pi_vec)
    else:
        mu1 = mu0 = None
        s = _ipw_vec(y, w, pi_vec)
    return ScoreSet(s, kind, fold_ids, pooling, pi_vec, mu1, mu0)
