"""Histogram estimate of the calibration function over the prediction axis."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneratePredictionsError,
    EmptyBinError,
    ShapeError,
    SingletonBinError,
    TooManyBinsError,
)

STRATEGIES = ("freq", "width")
_ALIASES = {"equal-frequency": "freq", "quantile": "freq", "equal-width": "width", "uniform": "width"}


def _strategy(name: str) -> str:
    s = _ALIASES.get(name, name)
    if s not in STRATEGIES:
        raise ValueError(f"unknown bin strategy {name!r}; use 'freq' or 'width'")
    return s


@dataclass(frozen=True, eq=False)
class BinPartition:
    """Partition of the rows by prediction value.

    ``edges[k]`` and ``edges[k + 1]`` bound bin ``k``; under ties the
    equal-frequency edges can coincide.
    """

    strategy: str
    K: int
    edges: np.ndarray
    assignment: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)

    def __len__(self) -> int:
        return self.assignment.shape[0]


def make_bins(delta, K: int, strategy: str = "freq") -> BinPartition:
    """Split predictions into ``K`` bins.

    ``freq`` ranks the predictions (ties broken by row index) and cuts the
    ranks into ``K`` runs whose lengths differ by at most one. ``width`` uses
    ``K`` equal intervals over ``[min, max]`` with the last one closed.
    """
    strategy = _strategy(strategy)
    delta = np.asarray(delta, dtype=float)
    n = delta.shape[0]
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > n:
        raise TooManyBinsError(f"cannot form {K} bins from {n} predictions")
    lo, hi = float(delta.min()), float(delta.max())
    if K == 1:
        return BinPartition(strategy, 1, np.array([lo, hi]), np.zeros(n, dtype=np.intp))
    if lo == hi:
        raise DegeneratePredictionsError(f"all predictions equal {lo}; only K=1 is possible")
    if strategy == "freq":
        order = np.argsort(delta, kind="stable")
        assignment = np.empty(n, dtype=np.intp)
        assignment[order] = (np.arange(n) * K) // n
        starts = np.searchsorted(assignment[order], np.arange(1, K))
        edges = np.concatenate([[lo], delta[order][starts], [hi]])
    else:
        edges = np.linspace(lo, hi, K + 1)
        edges[-1] = hi
        assignment = np.searchsorted(edges[1:-1], delta, side="right").astype(np.intp)
    return BinPartition(strategy, K, edges, assignment)


def merge_singletons(partition: BinPartition, delta, units=None) -> BinPartition:
    """Fold every one-element bin into its closest occupied neighbour.

    Closeness is the gap between the singleton's prediction and the nearest
    prediction of the neighbouring occupied bin; ties go left. When a merge
    happens, empty bins are dropped as well. With ``units``, a bin counts its
    distinct units, so a bin of copies of one observation is a singleton.
    """
    delta = np.asarray(delta, dtype=float)
    counts = partition.counts
    if units is not None:
        pairs = np.unique(np.column_stack([partition.assignment, np.asarray(units)]), axis=0)
        counts = np.bincount(pairs[:, 0], minlength=partition.K)
    occupied = np.flatnonzero(counts > 0)
    if counts[occupied].min() > 1:
        return partition
    # groups of original bin ids; merged in order of increasing bin index
    groups = [[int(k)] for k in occupied]
    sizes = [int(counts[k]) for k in occupied]
    bmin = [float(delta[partition.assignment == k].min()) for k in occupied]
    bmax = [float(delta[partition.assignment == k].max()) for k in occupied]
    i = 0
    while i < len(groups):
        if sizes[i] > 1 or len(groups) == 1:
            i += 1
            continue
        gap_left = bmin[i] - bmax[i - 1] if i > 0 else np.inf
        gap_right = bmin[i + 1] - bmax[i] if i + 1 < len(groups) else np.inf
        j = i - 1 if gap_left <= gap_right else i + 1
        a, b = min(i, j), max(i, j)
        groups[a] += groups[b]
        sizes[a] += sizes[b]
        bmin[a] = min(bmin[a], bmin[b])
        bmax[a] = max(bmax[a], bmax[b])
        del groups[b], sizes[b], bmin[b], bmax[b]
        i = a
    relabel = np.full(partition.K, -1, dtype=np.intp)
    for new, g in enumerate(groups):
        relabel[g] = new
    edges = np.array([partition.edges[g[0]] for g in groups] + [partition.edges[groups[-1][-1] + 1]])
    return BinPartition(partition.strategy, len(groups), edges, relabel[partition.assignment])


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    """Per-bin mean score, with the sums and counts needed for LOO means.

    Bin sums are kept as an unevaluated pair ``bin_sums + bin_sums_lo`` so that
    removing one row stays accurate when the remaining rows nearly cancel.
    ``units`` labels rows that are copies of one original observation (as in
    a bootstrap resample); leave-one-out then drops every copy in the bin.
    """

    partition: BinPartition
    scores: np.ndarray
    bin_sums: np.ndarray
    bin_counts: np.ndarray
    units: np.ndarray | None = None
    bin_sums_lo: np.ndarray | None = None

    @property
    def bin_means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.bin_counts > 0, self.bin_sums / np.maximum(self.bin_counts, 1), np.nan)

    @property
    def K(self) -> int:
        return self.partition.K

    def fitted(self) -> np.ndarray:
        """Full-sample estimate at each row's own prediction."""
        return self.bin_means[self.partition.assignment]

    def loo(self) -> np.ndarray:
        """Leave-one-out bin means for every row."""
        a = self.partition.assignment
        if self.units is None:
            own_sum, own_count = self.scores, 1
        else:
            _, u = np.unique(self.units, return_inverse=True)
            _, cell = np.unique(a.astype(np.int64) * (u.max() + 1) + u.ravel(), return_inverse=True)
            own_sum = np.bincount(cell, weights=self.scores)[cell]
            own_count = np.bincount(cell)[cell]
        c = self.bin_counts[a] - own_count
        if np.any(c < 1):
            k = int(a[np.flatnonzero(c < 1)[0]])
            raise SingletonBinError(f"bin {k} holds a single observation; leave-one-out is undefined")
        return _drop(self.bin_sums[a], self._lo()[a], own_sum) / c

    def _lo(self) -> np.ndarray:
        return np.zeros(self.K) if self.bin_sums_lo is None else self.bin_sums_lo


def _drop(hi, lo, x):
    """``(hi + lo) - x`` with the rounding error of ``hi - x`` recovered."""
    t = hi - x
    back = t - hi
    err = (hi - (t - back)) + (-x - back)
    return t + (err + lo)


def _compensated_sums(labels, values, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Correctly rounded per-group sums plus the rounded remainder."""
    order = np.argsort(labels, kind="stable")
    ends = np.cumsum(np.bincount(labels, minlength=K))
    hi, lo = np.zeros(K), np.zeros(K)
    start = 0
    for k, end in enumerate(ends):
        seg = values[order[start:end]].tolist()
        hi[k] = math.fsum(seg)
        seg.append(-hi[k])
        lo[k] = math.fsum(seg)
        start = end
    return hi, lo


def calibration_curve(scores, delta, partition: BinPartition, units=None) -> CalibrationCurve:
    s = np.asarray(getattr(scores, "scores", scores), dtype=float)
    delta = np.asarray(delta, dtype=float)
    if s.shape != delta.shape or s.shape[0] != len(partition):
        raise ShapeError("scores, predictions and bin assignment must have equal length")
    if partition.assignment.min() < 0 or partition.assignment.max() >= partition.K:
        raise EmptyBinError("assignment references a bin outside the partition")
    counts = np.bincount(partition.assignment, minlength=partition.K)
    sums, lo = _compensated_sums(partition.assignment, s, partition.K)
    if units is not None:
        units = np.asarray(units)
        if units.shape != s.shape:
            raise ShapeError("units must label every row")
    return CalibrationCurve(partition, s, sums, counts, units, lo)


def loo_value(curve: CalibrationCurve, i: int) -> float:
    if curve.units is not None:
        return float(curve.loo()[i])
    k = curve.partition.assignment[i]
    c = curve.bin_counts[k]
    if c < 2:
        raise SingletonBinError(f"bin {k} holds a single observation; leave-one-out is undefined")
    return float(_drop(curve.bin_sums[k], curve._lo()[k], curve.scores[i]) / (c - 1))


PLOT_COLUMNS = ("bin_index", "delta_low", "delta_high", "mean_delta", "gamma_hat", "count", "reference_45")


def plot_table(curve: CalibrationCurve, delta) -> list[dict]:
    """One row per bin; ``reference_45`` is the perfect-calibration value.

    Empty bins (possible for equal-width bins) are reported with count 0 and
    NaN means.
    """
    delta = np.asarray(delta, dtype=float)
    part = curve.partition
    dsum = np.bincount(part.assignment, weights=delta, minlength=part.K)
    rows = []
    for k in range(part.K):
        c = int(curve.bin_counts[k])
        md = dsum[k] / c if c else float("nan")
        rows.append({
            "bin_index": k,
            "delta_low": float(part.edges[k]),
            "delta_high": float(part.edges[k + 1]),
            "mean_delta": float(md),
            "gamma_hat": float(curve.bin_means[k]),
            "count": c,
            "reference_45": float(md),
        })
    return rows


def plot_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(PLOT_COLUMNS)
    for r in rows:
        out.writerow([r["bin_index"], *(repr(r[c]) for c in PLOT_COLUMNS[1:5]), r["count"], repr(r["reference_45"])])
    return buf.getvalue()
