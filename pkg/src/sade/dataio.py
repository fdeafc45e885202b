"""Dataset ingestion, scaling, bounds, batching and synthetic generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

TASKS = ("binary-classification", "multiclass-classification", "multi-target-regression")
KINDS = ("numeric", "categorical", "target")


class DataError(ValueError):
    """Malformed input data or schema."""


def _q(v) -> Fraction:
    # shortest decimal spelling of a float, read back exactly
    if isinstance(v, Fraction):
        return v
    return Fraction(repr(float(v)))


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    task: str

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}; expected one of {TASKS}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        targets = self.targets
        if not targets:
            raise DataError("schema needs at least one target column")
        if self.task != "multi-target-regression" and len(targets) != 1:
            raise DataError("classification tasks take exactly one target column")

    @property
    def targets(self) -> list[Column]:
        return [c for c in self.columns if c.kind == "target"]

    @property
    def features(self) -> list[Column]:
        return [c for c in self.columns if c.kind != "target"]

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cols = []
        for c in d["columns"]:
            cats = c.get("categories")
            cols.append(Column(str(c["name"]), c["kind"], tuple(cats) if cats is not None else None))
        return cls(tuple(cols), d["task"])

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.categories is not None:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        return {"task": self.task, "columns": cols}


@dataclass(frozen=True)
class Scaling:
    """Affine map original = lo + (hi - lo) * scaled for one numeric column."""

    lo: Fraction
    hi: Fraction

    @property
    def degenerate(self) -> bool:
        return self.hi == self.lo

    def to_original(self, v):
        if isinstance(v, Fraction):
            return self.lo + (self.hi - self.lo) * v
        return float(self.lo) + float(self.hi - self.lo) * v

    def to_scaled(self, v):
        if self.degenerate:
            return Fraction(0) if isinstance(v, Fraction) else 0.0 * v
        if isinstance(v, Fraction):
            return (v - self.lo) / (self.hi - self.lo)
        return (v - float(self.lo)) / float(self.hi - self.lo)


@dataclass
class Dataset:
    """Feature matrix ``X`` (n x d) and target matrix ``Y`` (n x K).

    Binary targets are stored as a single +/-1 column, multiclass targets as a
    one-vs-all +/-1 matrix with one column per class, regression targets raw.
    """

    X: np.ndarray
    Y: np.ndarray
    feature_names: list[str]
    target_names: list[str]
    task: str
    bounds: list[tuple[Fraction, Fraction]] | None = None
    scaling: dict[str, Scaling] = field(default_factory=dict)
    onehot_groups: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    schema: Schema | None = None

    def __post_init__(self):
        try:
            self.X = np.asarray(self.X, dtype=float).reshape(len(self.X), len(self.feature_names))
        except ValueError:
            raise DataError("feature_names does not match X") from None
        try:
            self.Y = np.asarray(self.Y, dtype=float).reshape(len(self.Y), len(self.target_names))
        except ValueError:
            raise DataError("target_names does not match Y") from None
        if self.X.shape[0] != self.Y.shape[0]:
            raise DataError("X and Y row counts differ")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.Y.shape[1]

    @property
    def y_max(self) -> np.ndarray:
        return np.abs(self.Y).max(axis=0) if len(self) else np.zeros(self.n_outputs)

    @property
    def is_classification(self) -> bool:
        return self.task != "multi-target-regression"

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], Y=self.Y[idx])

    def feature_index(self, name: str) -> int:
        return self.feature_names.index(name)

    def onehot_columns(self) -> set[int]:
        return {self.feature_index(col) for group in self.onehot_groups.values() for col, _ in group}

    def class_labels(self) -> np.ndarray:
        """Class index per instance (binary: 1 for the positive class)."""
        if self.task == "binary-classification":
            return (self.Y[:, 0] > 0).astype(int)
        if self.task == "multiclass-classification":
            return np.argmax(self.Y, axis=1)
        raise DataError("regression dataset has no class labels")


@dataclass(frozen=True)
class Batch:
    index: int
    indices: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def __len__(self):
        return len(self.indices)


def _category_sort_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def dataset_from_rows(rows: Sequence[dict], schema: Schema) -> Dataset:
    """Encode raw string/number rows into an unscaled :class:`Dataset`."""
    names = [c.name for c in schema.columns]
    for r, row in enumerate(rows, start=1):
        for c in names:
            v = row.get(c)
            if v is None or (isinstance(v, str) and v.strip() == ""):
                raise DataError(f"row {r}: missing value in column {c!r}")

    feature_names: list[str] = []
    cols: list[np.ndarray] = []
    groups: dict[str, list[tuple[str, str]]] = {}
    for c in schema.features:
        if c.kind == "numeric":
            vals = []
            for r, row in enumerate(rows, start=1):
                try:
                    vals.append(float(row[c.name]))
                except (TypeError, ValueError):
                    raise DataError(f"row {r}: non-numeric value {row[c.name]!r} in column {c.name!r}") from None
                if not math.isfinite(vals[-1]):
                    raise DataError(f"row {r}: non-finite value in column {c.name!r}")
            feature_names.append(c.name)
            cols.append(np.array(vals, dtype=float))
        else:
            raw = [str(row[c.name]).strip() for row in rows]
            cats = list(c.categories) if c.categories else sorted(set(raw), key=_category_sort_key)
            unknown = set(raw) - set(cats)
            if unknown:
                raise DataError(f"column {c.name!r}: values {sorted(unknown)} not among categories {cats}")
            groups[c.name] = []
            for cat in cats:
                col = f"{c.name}={cat}"
                feature_names.append(col)
                groups[c.name].append((col, cat))
                cols.append(np.array([1.0 if v == cat else 0.0 for v in raw]))

    n = len(rows)
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    targets = schema.targets
    if schema.task == "multi-target-regression":
        ys = []
        for t in targets:
            try:
                ys.append([float(row[t.name]) for row in rows])
            except (TypeError, ValueError):
                raise DataError(f"non-numeric target in column {t.name!r}") from None
        Y = np.array(ys, dtype=float).T.reshape(n, len(targets))
        target_names = [t.name for t in targets]
    else:
        t = targets[0]
        raw = [str(row[t.name]).strip() for row in rows]
        cats = list(t.categories) if t.categories else sorted(set(raw), key=_category_sort_key)
        unknown = set(raw) - set(cats)
        if unknown:
            raise DataError(f"target {t.name!r}: values {sorted(unknown)} not among classes {cats}")
        if schema.task == "binary-classification":
            if len(cats) != 2:
                raise DataError(f"binary target {t.name!r} needs exactly two classes, got {cats}")
            # second category is the positive class
            Y = np.array([[1.0 if v == cats[1] else -1.0] for v in raw]).reshape(n, 1)
            target_names = [t.name]
        else:
            Y = -np.ones((n, len(cats)))
            for i, v in enumerate(raw):
                Y[i, cats.index(v)] = 1.0
            target_names = cats
    return Dataset(X, Y, feature_names, target_names, schema.task, onehot_groups=groups, schema=schema)


def load_csv(path, schema: Schema) -> Dataset:
    """Read a header-first UTF-8 CSV whose columns match ``schema`` exactly."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        expected = {c.name for c in schema.columns}
        extra = [h for h in header if h not in expected]
        missing = [c for c in expected if c not in header]
        if extra or missing:
            raise DataError(f"column mismatch: unexpected {extra}, missing {sorted(missing)}")
        rows = list(reader)
    for r, row in enumerate(rows, start=1):
        if None in row or any(v is None for v in row.values()):
            raise DataError(f"row {r}: wrong number of fields")
    return dataset_from_rows(rows, schema)


def write_csv(path, rows: Sequence[dict], schema: Schema) -> None:
    names = [c.name for c in schema.columns]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in names})


def scale_features(d: Dataset) -> Dataset:
    """Min-max scale numeric features to [0, 1]; one-hot columns pass through.

    Scaling parameters compose with any earlier scaling, so the recorded map
    always leads back to original units.
    """
    if len(d) == 0:
        raise DataError("cannot scale an empty dataset")
    onehot = d.onehot_columns()
    X = d.X.copy()
    scaling = dict(d.scaling)
    for j, name in enumerate(d.feature_names):
        if j in onehot:
            continue
        lo, hi = _q(X[:, j].min()), _q(X[:, j].max())
        step = Scaling(lo, hi)
        # clip float round-off so scaled bounds come out as exactly 0 and 1
        X[:, j] = np.clip(step.to_scaled(X[:, j]), 0.0, 1.0)
        prev = scaling.get(name)
        if prev is not None:
            step = Scaling(prev.to_original(lo), prev.to_original(hi))
        scaling[name] = step
    out = replace(d, X=X, scaling=scaling)
    out.bounds = compute_bounds(out)
    return out


def apply_scaling(d: Dataset, scaling: dict[str, Scaling], bounds=None) -> Dataset:
    """Scale unscaled data with previously fitted maps (e.g. a test set with the training maps)."""
    if d.scaling:
        raise DataError("dataset is already scaled")
    X = d.X.copy()
    for name, s in scaling.items():
        if name not in d.feature_names:
            raise DataError(f"scaling given for unknown feature {name!r}")
        j = d.feature_index(name)
        X[:, j] = s.to_scaled(X[:, j])
    out = replace(d, X=X, scaling=dict(scaling))
    out.bounds = list(bounds) if bounds is not None else (compute_bounds(out) if len(out) else None)
    return out


def scaling_to_dict(scaling: dict[str, Scaling]) -> dict:
    return {n: [str(s.lo), str(s.hi)] for n, s in scaling.items()}


def scaling_from_dict(d: dict) -> dict[str, Scaling]:
    return {n: Scaling(Fraction(lo), Fraction(hi)) for n, (lo, hi) in d.items()}


def unscale_features(d: Dataset) -> np.ndarray:
    """Feature matrix in original units."""
    X = d.X.copy()
    for name, s in d.scaling.items():
        j = d.feature_index(name)
        X[:, j] = s.to_original(X[:, j])
    return X


def compute_bounds(d: Dataset, overrides: dict | None = None) -> list[tuple[Fraction, Fraction]]:
    """Per-feature (lower, upper) bounds of the quantified input domain.

    Defaults to the column range. ``overrides`` maps a feature name to a
    (lower, upper) pair in original units; on scaled data it is carried into
    scaled coordinates.
    """
    if len(d) == 0:
        raise DataError("cannot compute bounds of an empty dataset")
    bounds = [(_q(d.X[:, j].min()), _q(d.X[:, j].max())) for j in range(d.n_features)]
    for name, (lo, hi) in (overrides or {}).items():
        lo, hi = _q(lo), _q(hi)
        if lo > hi:
            raise DataError(f"bound override for {name!r}: lower {lo} exceeds upper {hi}")
        if name not in d.feature_names:
            raise DataError(f"bound override for unknown feature {name!r}")
        s = d.scaling.get(name)
        if s is not None and not s.degenerate:
            lo, hi = s.to_scaled(lo), s.to_scaled(hi)
        bounds[d.feature_index(name)] = (lo, hi)
    return bounds


def with_bounds(d: Dataset, overrides: dict | None = None) -> Dataset:
    return replace(d, bounds=compute_bounds(d, overrides))


def partition_batches(d: Dataset, b: int, seed: int | None = 0, shuffle: bool = True) -> list[Batch]:
    if b < 1:
        raise ValueError("batch size must be >= 1")
    order = np.arange(len(d))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(d))
    batches = []
    for k, start in enumerate(range(0, len(d), b)):
        idx = order[start : start + b]
        batches.append(Batch(k, idx, d.X[idx], d.Y[idx]))
    return batches


# --------------------------------------------------------------------------- synthetic data


DENIAL_CONSTRAINTS = """\
; applicants without credit history and income below 5000 are denied
(constraint deny-low-income
  (forall (x)
    (=> (and (= (feat x ch) 0) (< (feat x income) 5000))
        (< (pred x approved) 0))))
"""

BUDGET_CONSTRAINTS = """\
; total predicted spending stays within income
(constraint budget
  (forall (x) (<= (sum (pred x)) (feat x income))))
; going-out spending is at most 5% of income
(constraint going-out-share
  (forall (x) (<= (pred x going_out) (* 0.05 (feat x income)))))
"""


@dataclass
class SyntheticData:
    rows: list[dict]
    schema: Schema
    constraints: str
    violating: list[int]

    @property
    def dataset(self) -> Dataset:
        return dataset_from_rows(self.rows, self.schema)


def _pick_violators(rng, candidates: np.ndarray, count: int) -> np.ndarray:
    if count > len(candidates):
        raise DataError(f"cannot place {count} violations among {len(candidates)} eligible rows")
    return np.sort(rng.choice(candidates, size=count, replace=False)) if count else np.array([], dtype=int)


def _binary_denial(n: int, rate: float, rng) -> SyntheticData:
    income = np.round(rng.uniform(0, 10000, n), 2)
    score = np.round(rng.uniform(0, 1, n), 4)
    ch = rng.integers(0, 2, n)
    count = math.ceil(rate * n)
    inside = (ch == 0) & (income < 5000)
    short = count - int(inside.sum())
    if short > 0:
        # small samples may leave the protected region too sparse; pull rows in
        moved = rng.choice(np.flatnonzero(~inside), size=short, replace=False)
        ch[moved] = 0
        income[moved] = np.round(income[moved] / 2.0, 2)
    inc_s = income / 10000.0
    # approval rule that already denies the protected region
    margin = 1.2 * ch + inc_s + 0.3 * score - 0.9
    labels = np.where(margin > 0, 1, 0)
    region = np.flatnonzero((ch == 0) & (income < 5000))
    labels[region] = 0
    viol = _pick_violators(rng, region, count)
    labels[viol] = 1
    rows = [
        {"income": f"{income[i]:.2f}", "score": f"{score[i]:.4f}", "ch": str(ch[i]), "approved": str(labels[i])}
        for i in range(n)
    ]
    schema = Schema(
        (
            Column("income", "numeric"),
            Column("score", "numeric"),
            Column("ch", "categorical", ("0", "1")),
            Column("approved", "target", ("0", "1")),
        ),
        "binary-classification",
    )
    return SyntheticData(rows, schema, DENIAL_CONSTRAINTS, viol.tolist())


def _regression_budget(n: int, rate: float, rng) -> SyntheticData:
    income = np.round(rng.uniform(1.0, 10.0, n), 3)
    size = rng.integers(1, 7, n)
    urban = rng.integers(0, 2, n)
    food = 0.35 * income + 0.08 * size + rng.normal(0, 0.1, n)
    going_out = 0.03 * income + 0.05 * urban + rng.normal(0, 0.02, n)
    other = 0.4 * income + rng.normal(0, 0.15, n)
    food, going_out, other = (np.clip(a, 0.0, None) for a in (food, going_out, other))
    # keep clean rows inside both constraints with a small margin
    going_out = np.minimum(going_out, 0.045 * income)
    total = food + going_out + other
    shrink = np.minimum(1.0, 0.98 * income / np.maximum(total, 1e-9))
    food, other = food * shrink, other * shrink
    going_out = np.minimum(going_out, 0.045 * income)
    viol = _pick_violators(rng, np.arange(n), math.ceil(rate * n))
    for i in viol:
        # overspend: total lands 10-40% above income
        excess = income[i] * rng.uniform(0.1, 0.4)
        other[i] = income[i] - food[i] - going_out[i] + excess
    food, going_out, other = (np.round(a, 4) for a in (food, going_out, other))
    # rounding must not create or remove violations
    for i in range(n):
        if i in set(viol.tolist()):
            continue
        while food[i] + going_out[i] + other[i] > income[i] or going_out[i] > 0.05 * income[i]:
            other[i] = max(0.0, round(other[i] - 1e-3, 4))
            going_out[i] = min(going_out[i], round(0.045 * income[i], 4))
    rows = [
        {
            "income": f"{income[i]:.3f}",
            "size": str(size[i]),
            "urban": str(urban[i]),
            "food": f"{food[i]:.4f}",
            "going_out": f"{going_out[i]:.4f}",
            "other": f"{other[i]:.4f}",
        }
        for i in range(n)
    ]
    schema = Schema(
        (
            Column("income", "numeric"),
            Column("size", "numeric"),
            Column("urban", "categorical", ("0", "1")),
            Column("food", "target"),
            Column("going_out", "target"),
            Column("other", "target"),
        ),
        "multi-target-regression",
    )
    return SyntheticData(rows, schema, BUDGET_CONSTRAINTS, viol.tolist())


GENERATORS = {
    "binary-denial": _binary_denial,
    "regression-budget": _regression_budget,
}


def generate_synthetic(spec: dict, seed: int = 0) -> SyntheticData:
    """Build a labelled dataset plus its paired constraint file.

    ``spec`` keys: ``name`` (one of :data:`GENERATORS`), ``n``, ``violation_rate``.
    Exactly ``ceil(violation_rate * n)`` rows carry labels that break the
    paired constraints.
    """
    name = spec.get("name")
    if name not in GENERATORS:
        raise DataError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    n = int(spec.get("n", 200))
    rate = float(spec.get("violation_rate", 0.0))
    if not 0.0 <= rate < 1.0:
        raise DataError("violation_rate must lie in [0, 1)")
    return GENERATORS[name](n, rate, np.random.default_rng(seed))
