"""Admissible-subset metrics and k-fold grid search."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .constraints import ConstraintSet, Vocabulary, eval_on_point, is_instance_level, strip_foralls
from .dataio import Dataset
from .model import LinearModel, predict_class
from .smt import SolverConfig
from .trainer import SbrPenalty, TrainConfig, gd_train, sade_train

log = logging.getLogger(__name__)

METHODS = ("sade", "gd", "sbr")


class EvalError(ValueError):
    pass


def _instance_constraints(constraints: ConstraintSet):
    keep = []
    for c in constraints:
        if is_instance_level(c.formula):
            keep.append(c)
        else:
            warnings.warn(f"constraint {c.name!r} relates several instances; skipped for label filtering", stacklevel=3)
    return keep


def admissible_mask(data: Dataset, constraints: ConstraintSet) -> np.ndarray:
    """True where the example's own labels satisfy every instance-level constraint."""
    vocab = Vocabulary.from_dataset(data)
    cs = _instance_constraints(constraints)
    mask = np.ones(len(data), dtype=bool)
    for c in cs:
        var = strip_foralls(c.formula)[0][0]
        for i in range(len(data)):
            if mask[i] and not eval_on_point(c.formula, None, {var: data.X[i]}, vocab, labels={var: data.Y[i]}):
                mask[i] = False
    return mask


def filter_admissible_instances(data: Dataset, constraints: ConstraintSet) -> Dataset:
    return data.subset(np.flatnonzero(admissible_mask(data, constraints)))


def count_violations(model: LinearModel, data: Dataset, constraints: ConstraintSet) -> int:
    """Instances whose model predictions break some instance-level constraint."""
    vocab = Vocabulary.from_dataset(data)
    cs = [c for c in constraints if is_instance_level(c.formula)]
    if not cs or not len(data):
        return 0
    F = model.predict(data.X)
    bad = 0
    for i in range(len(data)):
        for c in cs:
            var = strip_foralls(c.formula)[0][0]
            if not eval_on_point(c.formula, None, {var: data.X[i]}, vocab, labels={var: F[i]}):
                bad += 1
                break
    return bad


@dataclass
class EvalReport:
    metric: str  # "accuracy" or "mse"
    value: float | None
    n_test_total: int
    n_test_admissible: int
    mse_per_target: dict[str, float] | None = None

    @property
    def excluded_count(self) -> int:
        return self.n_test_total - self.n_test_admissible

    @property
    def empty(self) -> bool:
        return self.n_test_admissible == 0

    def to_dict(self) -> dict:
        out = {
            "metric": self.metric,
            "value": self.value,
            "n_test_total": self.n_test_total,
            "n_test_admissible": self.n_test_admissible,
            "excluded_count": self.excluded_count,
        }
        if self.mse_per_target is not None:
            out["mse_per_target"] = self.mse_per_target
        if self.empty:
            out["note"] = "no test instance satisfies the constraints"
        return out


def evaluate(model: LinearModel, test: Dataset, constraints: ConstraintSet) -> EvalReport:
    """Accuracy (classification) or summed MSE (regression) on the admissible test subset."""
    if model.n_features != test.n_features or model.shape[0] != test.n_outputs:
        raise EvalError(
            f"model shape {model.shape} does not fit test data with {test.n_features} features"
            f" and {test.n_outputs} outputs"
        )
    sub = filter_admissible_instances(test, constraints)
    metric = "accuracy" if test.is_classification else "mse"
    if not len(sub):
        per = None if test.is_classification else {n: None for n in test.target_names}
        return EvalReport(metric, None, len(test), 0, per)
    if test.is_classification:
        pred = np.atleast_1d(predict_class(model, sub.X))
        return EvalReport(metric, float(np.mean(pred == sub.class_labels())), len(test), len(sub))
    F = model.predict(sub.X)
    per_target = np.mean((F - sub.Y) ** 2, axis=0)
    return EvalReport(
        metric,
        float(per_target.sum()),
        len(test),
        len(sub),
        {n: float(v) for n, v in zip(test.target_names, per_target)},
    )


# --------------------------------------------------------------------------- cross validation


def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    if k < 2:
        raise EvalError("k must be at least 2")
    if n < k:
        raise EvalError(f"cannot split {n} instances into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(order, k)]


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        raise EvalError("grid is empty")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or not grid[k]:
            raise EvalError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


@dataclass
class CvCell:
    point: dict
    fold_metrics: list[float | None]
    fold_violations: list[int]
    failures: list[str] = field(default_factory=list)

    @property
    def mean_metric(self) -> float | None:
        vals = [m for m in self.fold_metrics if m is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_violations(self) -> float:
        return float(np.mean(self.fold_violations)) if self.fold_violations else float("inf")


@dataclass
class CvResult:
    method: str
    metric: str
    rule: str
    cells: list[CvCell]
    selected: dict
    k: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "metric": self.metric,
            "selection_rule": self.rule,
            "selected": self.selected,
            "k": self.k,
            "seed": self.seed,
            "cells": [
                {
                    "point": c.point,
                    "fold_metrics": c.fold_metrics,
                    "fold_violations": c.fold_violations,
                    "mean_metric": c.mean_metric,
                    "mean_violations": c.mean_violations,
                    "failures": c.failures,
                }
                for c in self.cells
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "fold", "metric", "violations"])
            for c in self.cells:
                for f, (m, v) in enumerate(zip(c.fold_metrics, c.fold_violations)):
                    w.writerow([json.dumps(c.point, sort_keys=True), f, "" if m is None else m, v])


def _better(metric: str, a: float | None, b: float | None) -> bool:
    if a is None:
        return False
    if b is None:
        return True
    return a > b if metric == "accuracy" else a < b


def _select(cells: list[CvCell], method: str, metric: str) -> CvCell:
    best = None
    for c in cells:
        if best is None:
            best = c
            continue
        if method == "sade":
            if _better(metric, c.mean_metric, best.mean_metric):
                best = c
        elif c.mean_violations < best.mean_violations or (
            c.mean_violations == best.mean_violations and _better(metric, c.mean_metric, best.mean_metric)
        ):
            best = c
    return best


def _fit(method: str, train: Dataset, constraints, cfg: TrainConfig, point: dict, solver) -> LinearModel:
    if method == "sade":
        return sade_train(train, constraints, cfg, solver).model
    if method == "gd":
        return gd_train(train, cfg).model
    return gd_train(train, cfg, SbrPenalty(float(point.get("lam", 0.0)), constraints)).model


def _cell_config(base: TrainConfig, point: dict, fold_size: int) -> TrainConfig:
    opts = {k: v for k, v in point.items() if k != "lam"}
    cfg = replace(base, **opts) if opts else replace(base)
    if cfg.batch_size > fold_size:
        warnings.warn(f"batch size {cfg.batch_size} exceeds fold size {fold_size}; clamped", stacklevel=3)
        cfg = replace(cfg, batch_size=fold_size)
    return cfg


def cross_validate(
    data: Dataset,
    constraints: ConstraintSet,
    grid: dict,
    k: int = 5,
    seed: int = 0,
    method: str = "sade",
    base: TrainConfig | None = None,
    solver: SolverConfig | None = None,
    jobs: int = 1,
) -> CvResult:
    """Single-level k-fold grid search.

    ``grid`` maps :class:`TrainConfig` field names (plus ``lam`` for the
    penalised baseline) to candidate lists. SaDe picks the best mean metric;
    the baselines pick the fewest mean validation violations, ties by metric.
    """
    if method not in METHODS:
        raise EvalError(f"unknown method {method!r}; choose from {METHODS}")
    base = base or TrainConfig(seed=seed)
    points = expand_grid(grid)
    folds = kfold_indices(len(data), k, seed)
    metric = "accuracy" if data.is_classification else "mse"
    fold_size = min(len(data) - len(f) for f in folds)
    cfgs = [_cell_config(base, p, fold_size) for p in points]

    def run(job):
        pi, fi = job
        held = folds[fi]
        train = data.subset(np.concatenate([f for j, f in enumerate(folds) if j != fi]))
        valid = data.subset(held)
        try:
            model = _fit(method, train, constraints, cfgs[pi], points[pi], solver)
        except Exception as exc:  # a failing cell must not sink the whole search
            log.warning("grid point %s fold %d failed: %s", points[pi], fi, exc)
            return pi, fi, None, 10**9, str(exc)
        return pi, fi, evaluate(model, valid, constraints).value, count_violations(model, valid, constraints), None

    jobs_list = [(pi, fi) for pi in range(len(points)) for fi in range(k)]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, jobs_list))
    else:
        results = [run(j) for j in jobs_list]
    cells = [CvCell(p, [None] * k, [0] * k) for p in points]
    for pi, fi, m, v, err in results:
        cells[pi].fold_metrics[fi] = m
        cells[pi].fold_violations[fi] = v
        if err:
            cells[pi].failures.append(f"fold {fi}: {err}")
    best = _select(cells, method, metric)
    rule = "best-mean-metric" if method == "sade" else "min-mean-violations"
    return CvResult(method, metric, rule, cells, dict(best.point), k, seed)


def summarize(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if not len(arr):
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std())
