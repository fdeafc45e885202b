import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sade.constraints import Vocabulary, holds_for_labels, parse_constraints
from sade.dataio import (
    Column,
    DataError,
    Dataset,
    Schema,
    apply_scaling,
    compute_bounds,
    dataset_from_rows,
    generate_synthetic,
    load_csv,
    partition_batches,
    scale_features,
    unscale_features,
    with_bounds,
    write_csv,
)

LOAN_SCHEMA = Schema(
    (
        Column("income", "numeric"),
        Column("ch", "categorical", ("0", "1")),
        Column("approved", "target", ("0", "1")),
    ),
    "binary-classification",
)


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_csv_one_hot(tmp_path):
    p = _write(tmp_path, "income,ch,approved\n1000,0,0\n6000,1,1\n3000,1,0\n")
    d = load_csv(p, LOAN_SCHEMA)
    assert len(d) == 3
    assert d.feature_names == ["income", "ch=0", "ch=1"]
    assert d.X[:, 1:].tolist() == [[1, 0], [0, 1], [0, 1]]
    assert d.Y[:, 0].tolist() == [-1, 1, -1]
    assert d.onehot_groups == {"ch": [("ch=0", "0"), ("ch=1", "1")]}


@pytest.mark.parametrize(
    "text, msg",
    [
        ("income,ch,approved,zzz\n1,0,0,1\n", "column mismatch"),
        ("income,ch,approved\nabc,0,0\n", "non-numeric"),
        ("income,ch,approved\n,0,0\n", "missing value"),
        ("income,ch,approved\n5,2,0\n", "not among categories"),
    ],
)
def test_load_csv_errors(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path, text), LOAN_SCHEMA)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv", LOAN_SCHEMA)


def test_schema_rules():
    with pytest.raises(DataError):
        Schema((Column("a", "numeric"),), "binary-classification")
    with pytest.raises(DataError):
        Schema((Column("a", "numeric"), Column("a", "target")), "binary-classification")
    with pytest.raises(DataError):
        Schema((Column("a", "target"), Column("b", "target")), "binary-classification")
    s = Schema.from_dict(LOAN_SCHEMA.to_dict())
    assert s == LOAN_SCHEMA


def test_multiclass_targets():
    schema = Schema((Column("v", "numeric"), Column("genre", "target", ("rock", "pop", "metal"))), "multiclass-classification")
    d = dataset_from_rows([{"v": 1, "genre": "pop"}, {"v": 2, "genre": "metal"}], schema)
    assert d.target_names == ["rock", "pop", "metal"]
    assert d.Y.tolist() == [[-1, 1, -1], [-1, -1, 1]]
    assert d.class_labels().tolist() == [1, 2]


def test_scale_examples():
    d = Dataset(np.array([[0.0, 7.0], [5000.0, 7.0], [10000.0, 7.0]]), np.zeros((3, 1)), ["inc", "c"], ["y"], "multi-target-regression")
    s = scale_features(d)
    assert s.X[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert s.X[:, 1].tolist() == [0.0, 0.0, 0.0]
    assert s.scaling["c"].degenerate and s.scaling["c"].lo == 7
    assert s.bounds[0] == (0, 1)


def test_scale_leaves_one_hot():
    rows = [{"income": 100 * i, "ch": str(i % 2), "approved": "1"} for i in range(4)]
    s = scale_features(dataset_from_rows(rows, LOAN_SCHEMA))
    assert s.X[:, 1:].sum(axis=1).tolist() == [1, 1, 1, 1]
    assert "ch=0" not in s.scaling


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=50)
@given(arrays(float, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=finite))
def test_scale_round_trip_and_idempotence(X):
    d = Dataset(X, np.zeros((len(X), 1)), [f"f{j}" for j in range(X.shape[1])], ["y"], "multi-target-regression")
    s = scale_features(d)
    assert np.all((s.X >= 0) & (s.X <= 1))
    span = np.maximum(np.abs(X).max(axis=0), 1.0)
    assert np.all(np.abs(unscale_features(s) - X) <= 1e-12 * span * 4)
    twice = scale_features(s)
    assert np.allclose(twice.X, s.X, atol=1e-12, rtol=0)
    assert np.all(np.abs(unscale_features(twice) - X) <= 1e-12 * span * 8)
    for j, (lo, hi) in enumerate(s.bounds):
        assert lo <= Fraction(repr(float(s.X[:, j].min()))) and Fraction(repr(float(s.X[:, j].max()))) <= hi


def test_bounds_overrides():
    d = Dataset(np.array([[20.0], [60.0]]), np.zeros((2, 1)), ["age"], ["y"], "multi-target-regression")
    assert compute_bounds(d, {"age": (0, 150)}) == [(0, 150)]
    with pytest.raises(DataError):
        compute_bounds(d, {"age": (5, 2)})
    with pytest.raises(DataError):
        compute_bounds(d, {"height": (0, 1)})
    s = scale_features(d)
    assert compute_bounds(s, {"age": (0, 150)}) == [(Fraction(-1, 2), Fraction(13, 4))]
    assert with_bounds(d).bounds == [(20, 60)]


def test_apply_scaling_uses_given_maps():
    train = scale_features(Dataset(np.array([[0.0], [10.0]]), np.zeros((2, 1)), ["a"], ["y"], "multi-target-regression"))
    test = Dataset(np.array([[5.0], [20.0]]), np.zeros((2, 1)), ["a"], ["y"], "multi-target-regression")
    t = apply_scaling(test, train.scaling, train.bounds)
    assert t.X[:, 0].tolist() == [0.5, 2.0]
    assert t.bounds == train.bounds


def test_partition_examples():
    d = Dataset(np.arange(11.0), np.zeros(11), ["a"], ["y"], "multi-target-regression")
    assert [len(b) for b in partition_batches(d, 5)] == [5, 5, 1]
    big = Dataset(np.zeros((614, 1)), np.zeros(614), ["a"], ["y"], "multi-target-regression")
    assert len(partition_batches(big, 5)) == 123
    a = [b.indices.tolist() for b in partition_batches(d, 5, seed=4)]
    assert a == [b.indices.tolist() for b in partition_batches(d, 5, seed=4)]
    with pytest.raises(ValueError):
        partition_batches(d, 0)


@given(st.integers(0, 60), st.integers(1, 9), st.integers(0, 1000))
def test_partition_is_permutation(n, b, seed):
    d = Dataset(np.arange(float(n)).reshape(n, 1), np.zeros(n), ["a"], ["y"], "multi-target-regression")
    batches = partition_batches(d, b, seed)
    idx = np.concatenate([bt.indices for bt in batches]) if batches else np.array([], dtype=int)
    assert sorted(idx.tolist()) == list(range(n))
    assert all(len(bt) == b for bt in batches[:-1])
    assert all(np.array_equal(bt.X[:, 0], d.X[bt.indices, 0]) for bt in batches)


def _recount(syn) -> list[int]:
    d = syn.dataset
    cs = parse_constraints(syn.constraints, Vocabulary.from_dataset(d))
    return [i for i in range(len(d)) if not holds_for_labels(cs, d.X[i], d.Y[i], Vocabulary.from_dataset(d))]


def test_synthetic_binary_violation_count():
    syn = generate_synthetic({"name": "binary-denial", "n": 500, "violation_rate": 0.05}, seed=1)
    assert len(syn.violating) == 25
    assert _recount(syn) == syn.violating


def test_synthetic_zero_rate():
    syn = generate_synthetic({"name": "binary-denial", "n": 200, "violation_rate": 0.0}, seed=3)
    assert _recount(syn) == []


def test_synthetic_regression_recount():
    syn = generate_synthetic({"name": "regression-budget", "n": 200, "violation_rate": 0.1}, seed=2)
    assert len(syn.violating) == math.ceil(0.1 * 200)
    assert _recount(syn) == syn.violating


def test_synthetic_csv_round_trip(tmp_path):
    syn = generate_synthetic({"name": "regression-budget", "n": 30, "violation_rate": 0.1}, seed=5)
    write_csv(tmp_path / "s.csv", syn.rows, syn.schema)
    d = load_csv(tmp_path / "s.csv", syn.schema)
    assert np.array_equal(d.X, syn.dataset.X) and np.array_equal(d.Y, syn.dataset.Y)


def test_synthetic_errors():
    with pytest.raises(DataError):
        generate_synthetic({"name": "nope"})
    with pytest.raises(DataError):
        generate_synthetic({"name": "binary-denial", "violation_rate": 1.0})


@pytest.mark.parametrize("seed", range(500, 510))
def test_synthetic_binary_small_samples(seed):
    syn = generate_synthetic({"name": "binary-denial", "n": 20, "violation_rate": 0.1}, seed=seed)
    assert len(syn.violating) == 2
    assert _recount(syn) == syn.violating
