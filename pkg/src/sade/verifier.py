"""Admissibility proofs and counterexample search for concrete models."""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .constraints import (
    ConstraintSet,
    Vocabulary,
    _as_vocab,
    domain_guard,
    eval_on_point,
    instantiate_body,
    strip_foralls,
)
from .dataio import Dataset, compute_bounds
from .model import LinearModel
from .sexpr import rational_literal
from .smt import SolverConfig, SolverCrash, SolverSession


class Status(str, enum.Enum):
    PROVEN = "proven"
    COUNTEREXAMPLE = "counterexample"
    UNKNOWN = "unknown"


@dataclass
class Counterexample:
    constraint: str
    point: dict[str, list[Fraction]]  # scaled coordinates per quantified variable
    approximate: bool = False

    def to_dict(self, vocab: Vocabulary | None = None) -> dict:
        out = {
            "constraint": self.constraint,
            "scaled": {v: [float(x) for x in xs] for v, xs in self.point.items()},
            "exact": {v: [f"{x.numerator}/{x.denominator}" for x in xs] for v, xs in self.point.items()},
            "approximate": self.approximate,
        }
        if vocab is not None:
            out["original"] = {v: to_original_units(xs, vocab) for v, xs in self.point.items()}
            out["features"] = list(vocab.features)
        return out


def to_original_units(xs: Sequence, vocab: Vocabulary) -> list[float]:
    out = []
    for name, x in zip(vocab.features, xs):
        s = vocab.scaling.get(name)
        out.append(float(s.to_original(Fraction(x)) if s is not None else x))
    return out


@dataclass
class AdmissibilityVerdict:
    status: Status
    counterexample: Counterexample | None = None
    per_constraint: dict[str, str] = field(default_factory=dict)
    elapsed: float = 0.0  # milliseconds

    @property
    def proven(self) -> bool:
        return self.status is Status.PROVEN

    def to_dict(self, vocab: Vocabulary | None = None) -> dict:
        return {
            "status": self.status.value,
            "per_constraint": dict(self.per_constraint),
            "counterexample": None if self.counterexample is None else self.counterexample.to_dict(vocab),
            "elapsed_ms": self.elapsed,
        }


def _symbols(var: str, d: int) -> list[str]:
    return [f"cx_{var}_{i}" for i in range(d)]


def _negated_query(constraint, model, vocab, bounds):
    vars_, _ = strip_foralls(constraint.formula)
    d = len(vocab.features)
    env = {v: _symbols(v, d) for v in vars_}
    body = instantiate_body(constraint.formula, model, env, vocab, bounds)
    return vars_, env, f"(not {body})"


def _extract_point(vars_, env, assignment, approx) -> tuple[dict, bool]:
    point = {v: [Fraction(assignment[s]) for s in env[v]] for v in vars_}
    return point, any(s in approx for v in vars_ for s in env[v])


def _confirms(constraint, model, point, vocab) -> bool:
    """Exact re-evaluation: does ``point`` really violate ``constraint``?"""
    return not eval_on_point(constraint.formula, model, point, vocab)


def prove_admissible(
    model: LinearModel,
    constraints: ConstraintSet,
    bounds: Sequence[tuple[Fraction, Fraction]],
    vocab,
    solver: SolverConfig | None = None,
    session: SolverSession | None = None,
) -> AdmissibilityVerdict:
    """Prove that ``model`` satisfies every constraint over the whole bounded domain.

    For each constraint the negated body is checked over fresh bounded reals;
    Unsat everywhere means proven.
    """
    vocab = _as_vocab(vocab)
    t0 = time.monotonic()
    own = session is None
    s = SolverSession(solver) if own else session
    per: dict[str, str] = {}
    found: Counterexample | None = None
    try:
        for c in constraints:
            vars_, env, negated = _negated_query(c, model, vocab, bounds)
            s.push()
            try:
                for v in vars_:
                    s.declare_reals(env[v])
                    for g in domain_guard(env[v], bounds, vocab):
                        s.assert_formula(g)
                s.assert_formula(negated)
                syms = [x for v in vars_ for x in env[v]]
                r = s.check(symbols=syms)
            except SolverCrash:
                per[c.name] = Status.UNKNOWN.value
                s.restart()
                continue
            finally:
                if s.alive and s.depth > 0:
                    s.pop()
            if r.unsat:
                per[c.name] = Status.PROVEN.value
            elif r.sat:
                point, approx = _extract_point(vars_, env, r.assignment, r.approximate)
                if approx and not _confirms(c, model, point, vocab):
                    per[c.name] = Status.UNKNOWN.value
                    continue
                per[c.name] = Status.COUNTEREXAMPLE.value
                if found is None:
                    found = Counterexample(c.name, point, approx)
            else:
                per[c.name] = Status.UNKNOWN.value
    finally:
        if own:
            s.close()
    if found is not None:
        status = Status.COUNTEREXAMPLE
    elif all(v == Status.PROVEN.value for v in per.values()):
        status = Status.PROVEN
    else:
        status = Status.UNKNOWN
    return AdmissibilityVerdict(status, found, per, (time.monotonic() - t0) * 1000.0)


# --------------------------------------------------------------------------- local search


class NearStatus(str, enum.Enum):
    FOUND = "found"
    NONE = "none"
    UNKNOWN = "unknown"


@dataclass
class NearResult:
    status: NearStatus
    counterexample: Counterexample | None = None


def _ball(x0: Sequence, delta: Fraction, bounds, frozen: set[int]) -> list[tuple[Fraction, Fraction]]:
    out = []
    for i, (x, (lo, hi)) in enumerate(zip(x0, bounds)):
        x = Fraction(x) if isinstance(x, (Fraction, int)) else Fraction(repr(float(x)))
        if i in frozen:
            out.append((x, x))
        else:
            out.append((max(Fraction(lo), x - delta), min(Fraction(hi), x + delta)))
    return out


def _frozen_columns(vocab: Vocabulary) -> set[int]:
    index = {n: i for i, n in enumerate(vocab.features)}
    return {index[col] for group in vocab.groups.values() for col, _ in group}


class _NearSearcher:
    """Reusable per-session state for repeated ball queries."""

    def __init__(self, model, constraints, bounds, vocab, session):
        self.model = model
        self.constraints = list(constraints)
        self.bounds = [(Fraction(a), Fraction(b)) for a, b in bounds]
        self.vocab = vocab
        self.s = session
        self.frozen = _frozen_columns(vocab)
        self.queries = [_negated_query(c, model, vocab, self.bounds) for c in self.constraints]

    def search(self, x0, delta: Fraction) -> NearResult:
        ball = _ball(x0, delta, self.bounds, self.frozen)
        if any(lo > hi for lo, hi in ball):
            return NearResult(NearStatus.NONE)
        unknown = False
        for c, (vars_, env, negated) in zip(self.constraints, self.queries):
            self.s.push()
            try:
                for j, v in enumerate(vars_):
                    self.s.declare_reals(env[v])
                    # the ball is centred on the first quantified instance only
                    box = ball if j == 0 else self.bounds
                    for g in domain_guard(env[v], box, self.vocab):
                        self.s.assert_formula(g)
                self.s.assert_formula(negated)
                r = self.s.check(symbols=[x for v in vars_ for x in env[v]])
            except SolverCrash:
                self.s.restart()
                unknown = True
                continue
            finally:
                if self.s.alive and self.s.depth > 0:
                    self.s.pop()
            if r.sat:
                point, approx = _extract_point(vars_, env, r.assignment, r.approximate)
                if not _confirms(c, self.model, point, self.vocab) or not _inside(point[vars_[0]], ball):
                    unknown = True
                    continue
                return NearResult(NearStatus.FOUND, Counterexample(c.name, point, approx))
            if r.unknown:
                unknown = True
        return NearResult(NearStatus.UNKNOWN if unknown else NearStatus.NONE)


def _inside(xs, box) -> bool:
    return all(lo <= x <= hi for x, (lo, hi) in zip(xs, box))


def _delta(delta) -> Fraction:
    q = delta if isinstance(delta, Fraction) else Fraction(repr(float(delta)))
    if q <= 0:
        raise ValueError("delta must be positive")
    return q


def find_counterexample_near(
    model: LinearModel,
    constraints: ConstraintSet,
    x0: Sequence,
    delta,
    bounds: Sequence[tuple[Fraction, Fraction]],
    vocab,
    solver: SolverConfig | None = None,
    session: SolverSession | None = None,
) -> NearResult:
    """Look for a violating point within ``delta`` (l-inf) of ``x0``, clipped to ``bounds``.

    One-hot columns stay at ``x0``'s category.
    """
    vocab = _as_vocab(vocab)
    q = _delta(delta)
    if session is not None:
        return _NearSearcher(model, constraints, bounds, vocab, session).search(x0, q)
    with SolverSession(solver) as s:
        return _NearSearcher(model, constraints, bounds, vocab, s).search(x0, q)


@dataclass
class AdversityReport:
    delta: float
    flags: list[str]
    counterexamples: dict[int, Counterexample] = field(default_factory=dict)

    @property
    def found(self) -> int:
        return sum(f == NearStatus.FOUND.value for f in self.flags)

    @property
    def unknown_count(self) -> int:
        return sum(f == NearStatus.UNKNOWN.value for f in self.flags)

    @property
    def total(self) -> int:
        return len(self.flags)

    @property
    def adi(self) -> float:
        return self.found / self.total if self.total else 0.0

    def to_dict(self, vocab: Vocabulary | None = None) -> dict:
        return {
            "delta": self.delta,
            "adi": self.adi,
            "found": self.found,
            "unknown": self.unknown_count,
            "total": self.total,
            "instances": [
                {
                    "index": i,
                    "status": f,
                    "counterexample": None
                    if i not in self.counterexamples
                    else self.counterexamples[i].to_dict(vocab),
                }
                for i, f in enumerate(self.flags)
            ],
        }


def adversity_index(
    model: LinearModel,
    constraints: ConstraintSet,
    data: Dataset,
    delta,
    bounds=None,
    solver: SolverConfig | None = None,
    jobs: int = 1,
) -> AdversityReport:
    """Fraction of instances of ``data`` with a counterexample inside their delta-ball."""
    q = _delta(delta)
    vocab = Vocabulary.from_dataset(data)
    bounds = bounds if bounds is not None else (data.bounds or compute_bounds(data))
    n = len(data)
    flags: list[str] = [NearStatus.UNKNOWN.value] * n
    cex: dict[int, Counterexample] = {}

    def work(indices):
        with SolverSession(solver) as s:
            searcher = _NearSearcher(model, constraints, bounds, vocab, s)
            for i in indices:
                res = searcher.search(data.X[i], q)
                flags[i] = res.status.value
                if res.counterexample is not None:
                    cex[i] = res.counterexample

    chunks = [list(c) for c in np.array_split(np.arange(n), max(1, min(jobs, n))) if len(c)]
    if len(chunks) <= 1:
        for c in chunks:
            work(c)
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            list(pool.map(work, chunks))
    return AdversityReport(float(q), flags, cex)
