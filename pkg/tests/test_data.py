import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eceth.data import ColumnSpec, Dataset, load_csv, split_folds, write_csv
from eceth.errors import (
    EmptyInputError,
    InvalidFoldCountError,
    ParseError,
    SchemaError,
    ValidationError,
)

FEATURES = tuple(f"f{j}" for j in range(1, 13))
SPEC12 = ColumnSpec("y", "w", FEATURES, "delta")


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _csv12(rows):
    lines = ["y,w," + ",".join(FEATURES) + ",delta"]
    lines += [",".join(map(str, r)) for r in rows]
    return "\n".join(lines) + "\n"


def test_twelve_feature_file(tmp_path):
    rows = [[1.5, 1, *range(12), 0.2], [-0.5, 0, *range(12, 24), -0.1], [0.0, 1, *([0.5] * 12), 0.0]]
    data = load_csv(_write(tmp_path / "a.csv", _csv12(rows)), SPEC12)
    assert data.d == 12 and len(data) == 3
    assert data.delta is not None
    np.testing.assert_array_equal(data.delta, [0.2, -0.1, 0.0])
    np.testing.assert_array_equal(data.X[1], np.arange(12, 24))
    assert data.feature_names == FEATURES


def test_header_only_is_empty(tmp_path):
    with pytest.raises(EmptyInputError):
        load_csv(_write(tmp_path / "h.csv", _csv12([])), SPEC12)


def test_empty_file(tmp_path):
    with pytest.raises(EmptyInputError):
        load_csv(_write(tmp_path / "e.csv", ""), SPEC12)


def test_nonbinary_treatment_cites_row(tmp_path):
    rows = [[1.0, 1, *range(12), 0.1], [1.0, 2, *range(12), 0.1]]
    with pytest.raises(ValidationError, match="line 3"):
        load_csv(_write(tmp_path / "w.csv", _csv12(rows)), SPEC12)


def test_non_numeric_cell_names_row_and_column(tmp_path):
    rows = [[1.0, 1, *range(12), 0.1], [1.0, 0, "abc", *range(11), 0.1]]
    with pytest.raises(ParseError, match=r"line 3.*'f1'"):
        load_csv(_write(tmp_path / "p.csv", _csv12(rows)), SPEC12)


def test_missing_column_is_named(tmp_path):
    path = _write(tmp_path / "m.csv", "y,w,f1\n1,0,2\n")
    with pytest.raises(SchemaError, match="'delta'"):
        load_csv(path, ColumnSpec("y", "w", ("f1",), "delta"))


def test_missing_value_rejected(tmp_path):
    path = _write(tmp_path / "n.csv", "y,w,f1\n1,0,\n")
    with pytest.raises(ValidationError, match="missing"):
        load_csv(path, ColumnSpec("y", "w", ("f1",)))


def test_boolean_tokens_and_column_order(tmp_path):
    path = _write(tmp_path / "b.csv", "x,w,y\n1,TRUE,2\n3,false,4\n")
    data = load_csv(path, ColumnSpec("y", "w", ("x",)))
    np.testing.assert_array_equal(data.w, [1, 0])
    np.testing.assert_array_equal(data.y, [2.0, 4.0])
    assert data.delta is None


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 1)), [0, 2], [1.0, 2.0])
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 1)), [0, 1], [1.0, np.nan])
    with pytest.raises(ValidationError):
        Dataset(np.array([[0.0], [np.inf]]), [0, 1], [1.0, 2.0])
    with pytest.raises(EmptyInputError):
        Dataset(np.zeros((0, 1)), [], [])


def test_dataset_is_read_only():
    data = Dataset(np.zeros((2, 1)), [0, 1], [1.0, 2.0], [0.1, 0.2])
    with pytest.raises(ValueError):
        data.y[0] = 5.0
    obs = data[1]
    assert obs.treatment == 1 and obs.outcome == 2.0 and obs.prediction == 0.2


finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(finite, st.integers(0, 1), finite, finite), min_size=1, max_size=20))
def test_csv_round_trip_is_exact(tmp_path_factory, rows):
    y, w, x, delta = (np.array(c) for c in zip(*rows))
    data = Dataset(x.reshape(-1, 1), w, y, delta, ("x",))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(data, path)
    back = load_csv(path, ColumnSpec("y", "w", ("x",), "delta"))
    for a, b in ((data.X, back.X), (data.y, back.y), (data.delta, back.delta), (data.w, back.w)):
        assert a.tobytes() == b.tobytes()


def test_split_even_and_remainder():
    assert sorted(np.bincount(split_folds(10, 2, 0))) == [5, 5]
    assert sorted(np.bincount(split_folds(11, 2, 0))) == [5, 6]


def test_split_deterministic():
    np.testing.assert_array_equal(split_folds(57, 5, 9), split_folds(57, 5, 9))
    assert not np.array_equal(split_folds(57, 5, 9), split_folds(57, 5, 10))


@pytest.mark.parametrize("J", [0, 1, 11])
def test_split_bad_fold_count(J):
    with pytest.raises(InvalidFoldCountError):
        split_folds(10, J, 0)


@given(st.integers(2, 300), st.integers(2, 20), st.integers(0, 2**63 - 1))
def test_split_is_balanced_partition(n, J, seed):
    if J > n:
        return
    folds = split_folds(n, J, seed)
    assert folds.shape == (n,)
    assert set(np.unique(folds)) == set(range(J))
    sizes = np.bincount(folds, minlength=J)
    assert sizes.sum() == n
    assert sizes.max() - sizes.min() <= 1
    assert sizes.min() == math.floor(n / J)
