"""Dataset model, CSV ingestion and fold assignment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _rng
from .errors import EmptyInputError, InvalidFoldCountError, ParseError, SchemaError, ValidationError

_TRUE_TOKENS = {"1", "true"}
_FALSE_TOKENS = {"0", "false"}


@dataclass(frozen=True)
class Observation:
    features: tuple[float, ...]
    treatment: int
    outcome: float
    prediction: float | None = None


@dataclass(frozen=True)
class ColumnSpec:
    outcome: str
    treatment: str
    features: tuple[str, ...]
    prediction: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, read-only collection of observations.

    Row ``i`` is the identity of observation ``i`` for every per-row quantity
    computed downstream (scores, fold ids, bin assignment).

    Attributes
    ----------
    X : ndarray, shape (n, d)
    w : ndarray of int8, shape (n,)
    y : ndarray, shape (n,)
    delta : ndarray or None
        CATE predictions being evaluated.
    feature_names : tuple of str
    y0, y1 : ndarray or None
        Potential outcomes, only present for simulated data.
    """

    X: np.ndarray
    w: np.ndarray
    y: np.ndarray
    delta: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    y0: np.ndarray | None = field(default=None, repr=False)
    y1: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ValidationError("features must be a 2-d array")
        n, d = X.shape
        if n == 0:
            raise EmptyInputError("dataset has no rows")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise ValidationError(f"{len(names)} feature names for {d} feature columns")
        w = np.asarray(self.w)
        if w.shape != (n,):
            raise ValidationError(f"treatment has shape {w.shape}, expected ({n},)")
        if not np.all((w == 0) | (w == 1)):
            bad = int(np.flatnonzero((w != 0) & (w != 1))[0])
            raise ValidationError(f"row {bad}: treatment must be 0 or 1, got {w[bad]!r}")
        y = np.asarray(self.y, dtype=float)
        if y.shape != (n,):
            raise ValidationError(f"outcome has shape {y.shape}, expected ({n},)")
        if not np.all(np.isfinite(y)):
            raise ValidationError(f"row {int(np.flatnonzero(~np.isfinite(y))[0])}: outcome is not finite")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise ValidationError(f"row {r}: feature {names[c]!r} is not finite")
        object.__setattr__(self, "X", _frozen(X, float))
        object.__setattr__(self, "w", _frozen(w, np.int8))
        object.__setattr__(self, "y", _frozen(y, float))
        object.__setattr__(self, "feature_names", names)
        for name in ("delta", "y0", "y1"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape != (n,):
                raise ValidationError(f"{name} has shape {v.shape}, expected ({n},)")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"row {int(np.flatnonzero(~np.isfinite(v))[0])}: {name} is not finite")
            object.__setattr__(self, name, _frozen(v, float))

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, i: int) -> Observation:
        pred = None if self.delta is None else float(self.delta[i])
        return Observation(tuple(float(v) for v in self.X[i]), int(self.w[i]), float(self.y[i]), pred)

    @property
    def observations(self) -> list[Observation]:
        return [self[i] for i in range(len(self))]

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    def take(self, idx) -> "Dataset":
        """Rows ``idx`` (with repetition allowed) as a new dataset."""
        idx = np.asarray(idx, dtype=np.intp)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(self.X[idx], self.w[idx], self.y[idx], pick(self.delta), self.feature_names,
                       pick(self.y0), pick(self.y1))

    def with_prediction(self, delta) -> "Dataset":
        return Dataset(self.X, self.w, self.y, delta, self.feature_names, self.y0, self.y1)


def _parse_float(token: str, line: int, column: str) -> float:
    if token.strip() == "":
        raise ValidationError(f"line {line}, column {column!r}: missing value")
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {line}, column {column!r}: cannot parse {token!r} as a number") from None
    if not math.isfinite(value):
        raise ValidationError(f"line {line}, column {column!r}: non-finite value {token!r}")
    return value


def _parse_treatment(token: str, line: int, column: str) -> int:
    t = token.strip().lower()
    if t in _TRUE_TOKENS:
        return 1
    if t in _FALSE_TOKENS:
        return 0
    if t == "":
        raise ValidationError(f"line {line}, column {column!r}: missing treatment value")
    raise ValidationError(f"line {line}, column {column!r}: treatment must be 0/1 (or true/false), got {token!r}")


def load_csv(path, schema: ColumnSpec) -> Dataset:
    """Read a headered CSV and select columns by name.

    Line numbers in error messages count the header as line 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        pos = {name: j for j, name in enumerate(header)}
        wanted = [schema.outcome, schema.treatment, *schema.features]
        if schema.prediction is not None:
            wanted.append(schema.prediction)
        for name in wanted:
            if name not in pos:
                raise SchemaError(f"{path}: column {name!r} not found in header {header}")
        X, w, y, delta = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line}: expected {len(header)} fields, found {len(row)}")
            y.append(_parse_float(row[pos[schema.outcome]], line, schema.outcome))
            w.append(_parse_treatment(row[pos[schema.treatment]], line, schema.treatment))
            X.append([_parse_float(row[pos[c]], line, c) for c in schema.features])
            if schema.prediction is not None:
                delta.append(_parse_float(row[pos[schema.prediction]], line, schema.prediction))
    if not y:
        raise EmptyInputError(f"{path}: no data rows after the header")
    X = np.array(X, dtype=float).reshape(len(y), len(schema.features))
    return Dataset(X, np.array(w), np.array(y), np.array(delta) if schema.prediction else None,
                   schema.features)


def write_csv(dataset: Dataset, path, *, outcome="y", treatment="w", prediction="delta",
              potential_outcomes: bool = False) -> None:
    """Write ``dataset`` so that :func:`load_csv` recovers it exactly."""
    header = [outcome, treatment, *dataset.feature_names]
    has_delta = dataset.delta is not None
    if has_delta:
        header.append(prediction)
    extra = potential_outcomes and dataset.y0 is not None
    if extra:
        header += ["y0", "y1"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(dataset.y[i])), str(int(dataset.w[i]))]
            row += [repr(float(v)) for v in dataset.X[i]]
            if has_delta:
                row.append(repr(float(dataset.delta[i])))
            if extra:
                row += [repr(float(dataset.y0[i])), repr(float(dataset.y1[i]))]
            out.writerow(row)


def split_folds(n: int | Dataset | Sequence, J: int, seed: int) -> np.ndarray:
    """Assign each of ``n`` rows to one of ``J`` folds of near-equal size.

    Fold sizes differ by at most one; the result depends only on
    ``(n, J, seed)``.
    """
    if not isinstance(n, (int, np.integer)):
        n = len(n)
    n, J = int(n), int(J)
    if J < 2 or J > n:
        raise InvalidFoldCountError(f"fold count must satisfy 2 <= J <= n; got J={J}, n={n}")
    perm = _rng.rng_for(seed, _rng.FOLDS, n, J).permutation(n)
    folds = np.empty(n, dtype=np.intp)
    folds[perm] = (np.arange(n) * J) // n
    return folds
