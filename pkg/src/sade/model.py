"""Linear models: prediction, losses, analytic gradients and SMT term emission."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .sexpr import rational_literal

SIGMA_EPS = 1e-12

LOSS_KINDS = ("cross-entropy", "sum-mse")


def loss_kind_for(task: str) -> str:
    return "sum-mse" if task == "multi-target-regression" else "cross-entropy"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LinearModel:
    """K affine rows over d features; the last column of each row is the bias.

    ``exact`` holds the authoritative rational weights; ``weights`` is their
    nearest-double mirror used for loss and gradient arithmetic.
    """

    exact: tuple[tuple[Fraction, ...], ...]
    output_names: tuple[str, ...]
    task: str = "binary-classification"
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        rows = tuple(tuple(Fraction(v) for v in row) for row in self.exact)
        if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) < 1:
            raise ModelError("weights must be a non-empty K x (d+1) matrix")
        if len(self.output_names) != len(rows):
            raise ModelError("one output name per weight row")
        object.__setattr__(self, "exact", rows)
        object.__setattr__(self, "output_names", tuple(self.output_names))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "_float", np.array([[float(v) for v in r] for r in rows], dtype=float))

    @classmethod
    def from_array(cls, W, output_names: Sequence[str], task: str = "binary-classification", feature_names=()):
        W = np.asarray(W, dtype=float)
        if not np.all(np.isfinite(W)):
            raise ModelError("weights must be finite")
        rows = tuple(tuple(Fraction(float(v)) for v in r) for r in np.atleast_2d(W))
        return cls(rows, tuple(output_names), task, tuple(feature_names))

    @classmethod
    def zeros(cls, n_outputs: int, n_features: int, output_names=None, task="binary-classification", feature_names=()):
        names = output_names or [f"out{k}" for k in range(n_outputs)]
        return cls.from_array(np.zeros((n_outputs, n_features + 1)), names, task, feature_names)

    @property
    def weights(self) -> np.ndarray:
        return self._float.copy()

    @property
    def shape(self) -> tuple[int, int]:
        return self._float.shape

    @property
    def n_features(self) -> int:
        return self._float.shape[1] - 1

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return x @ self._float[:, :-1].T + self._float[:, -1]

    def predict_exact(self, x: Sequence) -> list[Fraction]:
        if len(x) != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got {len(x)}")
        xs = [Fraction(v) for v in x]
        return [sum((w * v for w, v in zip(row[:-1], xs)), row[-1]) for row in self.exact]

    def with_weights(self, W) -> "LinearModel":
        return LinearModel.from_array(W, self.output_names, self.task, self.feature_names)

    # ----------------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "feature_names": list(self.feature_names),
            "target_names": list(self.output_names),
            "weights": [[f"{v.numerator}/{v.denominator}" for v in row] for row in self.exact],
            "weights_decimal": [[float(v) for v in row] for row in self.exact],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        rows = tuple(tuple(Fraction(v) for v in row) for row in d["weights"])
        return cls(rows, tuple(d["target_names"]), d.get("task", "binary-classification"), tuple(d.get("feature_names", ())))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "LinearModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SymbolicModel:
    """Model whose weights are solver symbols ``w_<k>_<i>``."""

    n_outputs: int
    n_features: int
    output_names: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_outputs, self.n_features + 1)

    def symbol(self, k: int, i: int) -> str:
        return f"w_{k}_{i}"

    def symbols(self) -> list[str]:
        return [self.symbol(k, i) for k in range(self.n_outputs) for i in range(self.n_features + 1)]

    def symbol_matrix(self) -> list[list[str]]:
        return [[self.symbol(k, i) for i in range(self.n_features + 1)] for k in range(self.n_outputs)]

    def concretize(self, assignment: dict, task: str, feature_names=()) -> LinearModel:
        rows = tuple(tuple(Fraction(assignment[s]) for s in row) for row in self.symbol_matrix())
        names = self.output_names or tuple(f"out{k}" for k in range(self.n_outputs))
        return LinearModel(rows, names, task, tuple(feature_names))


def _weight_terms(model, k: int) -> list[str]:
    if isinstance(model, SymbolicModel):
        return [model.symbol(k, i) for i in range(model.n_features + 1)]
    return [rational_literal(v) for v in model.exact[k]]


def emit_affine(model, k: int, var_terms: Sequence[str]) -> str:
    """SMT term for output row ``k`` applied to the given feature terms.

    Symbolic weights print as ``w_k_i``; concrete ones as exact rationals.
    """
    K, d1 = model.shape
    if not 0 <= k < K:
        raise ModelError(f"output index {k} out of range 0..{K - 1}")
    if len(var_terms) != d1 - 1:
        raise ModelError(f"expected {d1 - 1} feature terms, got {len(var_terms)}")
    w = _weight_terms(model, k)
    parts = [f"(* {wi} {xi})" for wi, xi in zip(w[:-1], var_terms)]
    parts.append(w[-1])
    return parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"


def affine_terms(model, var_terms: Sequence[str]) -> list[str]:
    return [emit_affine(model, k, var_terms) for k in range(model.shape[0])]


# --------------------------------------------------------------------------- classification


def predict_class(model: LinearModel, x) -> int | np.ndarray:
    """Binary: 1 iff score > 0. Multiclass: argmax, lowest index on ties."""
    if model.task == "multi-target-regression":
        raise ModelError("regression models have no class decision")
    scores = model.predict(x)
    if model.task == "binary-classification":
        out = (scores[..., 0] > 0).astype(int)
    else:
        out = np.argmax(scores, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- loss / gradient


def _sigmoid(f):
    # tanh form stays finite for any f
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def _check(model: LinearModel, X, Y, kind: str):
    if kind not in LOSS_KINDS:
        raise ModelError(f"unknown loss kind {kind!r}")
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ModelError("empty dataset")
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if X.shape[1] != model.n_features:
        raise ModelError(f"expected {model.n_features} features, got {X.shape[1]}")
    if Y.shape[1] != model.shape[0]:
        raise ModelError(f"expected {model.shape[0]} targets, got {Y.shape[1]}")
    return X, Y


def _xy(data, Y=None):
    if Y is None:
        return data.X, data.Y
    return data, Y


def loss(model: LinearModel, data, kind: str, Y=None) -> float:
    """Mean cross-entropy summed over one-vs-all outputs, or summed per-target MSE.

    ``data`` is a Dataset, or a feature matrix when ``Y`` is given. Labels for
    cross-entropy are +/-1.
    """
    X, Y = _check(model, *_xy(data, Y), kind)
    F = model.predict(X)
    if kind == "sum-mse":
        return float(np.sum(np.mean((F - Y) ** 2, axis=0)))
    y01 = (Y > 0).astype(float)
    s = np.clip(_sigmoid(F), SIGMA_EPS, 1.0 - SIGMA_EPS)
    ce = -(y01 * np.log(s) + (1.0 - y01) * np.log(1.0 - s))
    return float(np.sum(np.mean(ce, axis=0)))


def gradient(model: LinearModel, data, kind: str, Y=None) -> np.ndarray:
    """Analytic gradient of :func:`loss` w.r.t. every weight, K x (d+1)."""
    X, Y = _check(model, *_xy(data, Y), kind)
    n = len(X)
    F = model.predict(X)
    if kind == "sum-mse":
        R = 2.0 * (F - Y) / n
    else:
        y01 = (Y > 0).astype(float)
        s = _sigmoid(F)
        # flat where the clamp is active
        live = (s > SIGMA_EPS) & (s < 1.0 - SIGMA_EPS)
        R = np.where(live, s - y01, 0.0) / n
    Xb = np.hstack([X, np.ones((n, 1))])
    return R.T @ Xb
