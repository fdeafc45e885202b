"""Satisfiability descent, the exact MaxSMT learner, and gradient-descent baselines."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import maxsmt
from .constraints import (
    And,
    BoolConst,
    Compare,
    ConstraintSet,
    Const,
    Div,
    Feat,
    Implies,
    Mul,
    Not,
    Or,
    Pred,
    Sub,
    SumPreds,
    Add,
    Vocabulary,
    eval_on_point,
    expand_eqexcept,
    instantiate,
    is_instance_level,
    mentions_pred,
    strip_foralls,
)
from .dualize import encode_constraints
from .dataio import Dataset, compute_bounds, partition_batches
from .model import LinearModel, SymbolicModel, gradient, loss, loss_kind_for
from .sexpr import rational_literal
from .smt import SolverConfig, SolverCrash, SolverSession, Verdict

log = logging.getLogger(__name__)


class NoAdmissibleModel(RuntimeError):
    """No parameter assignment satisfying the domain constraints was found."""


class TrainingError(ValueError):
    pass


def _q(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(repr(float(v)))


@dataclass
class TrainConfig:
    alpha: float = 1.0
    batch_size: int = 5
    epochs: int = 10
    classification_thresholds: tuple[float, ...] = (0.0, 1.0)
    regression_threshold_coeffs: tuple[float, ...] = (0.1,)
    param_bound: float = 10.0
    max_iterations: int = 100_000
    stop_start: int = 400
    stop_every: int = 100
    stop_lookback: int = 200
    stop_min_improvement: float = 0.02
    seed: int = 0
    # decimal digits kept for instance features inside decision constraints
    feature_digits: int = 12
    exact_max_instances: int = 50
    # replace quantified constraints by an equivalent multiplier encoding when possible
    dualize: bool = True
    # box corners are snapped inward to multiples of this so rationals stay short
    box_resolution: float = 1e-6
    # among equally good batch solutions prefer points that move this fraction of
    # the box's full linearised descent, tried in order; empty keeps the solver's pick
    descent_tiebreak: tuple[float, ...] = ()
    # gradient-descent baselines
    learning_rate: float = 0.5
    gd_epochs: int | None = None

    def __post_init__(self):
        self.classification_thresholds = tuple(float(t) for t in self.classification_thresholds)
        self.regression_threshold_coeffs = tuple(float(c) for c in self.regression_threshold_coeffs)
        self.descent_tiebreak = tuple(float(f) for f in self.descent_tiebreak)
        if any(not 0 < f <= 1 for f in self.descent_tiebreak):
            raise TrainingError("descent_tiebreak fractions must lie in (0, 1]")
        if self.alpha <= 0:
            raise TrainingError("alpha must be positive")
        if not 0 < self.box_resolution <= self.alpha / 4:
            raise TrainingError("box_resolution must be positive and at most alpha/4")
        if self.param_bound <= 0:
            raise TrainingError("param_bound must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainingError("batch_size and epochs must be >= 1")
        for name in ("classification_thresholds", "regression_threshold_coeffs"):
            ts = getattr(self, name)
            if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
                raise TrainingError(f"{name} must be non-empty and strictly increasing")

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["classification_thresholds"] = list(self.classification_thresholds)
        out["regression_threshold_coeffs"] = list(self.regression_threshold_coeffs)
        out["descent_tiebreak"] = list(self.descent_tiebreak)
        return out


# --------------------------------------------------------------------------- decision constraints


@dataclass(frozen=True)
class Decision:
    """Soft fit condition ``lo < f_k(x)`` / ``f_k(x) < hi`` (regression: closed band)."""

    instance: int
    output: int
    x: tuple[Fraction, ...]
    lo: Fraction | None
    hi: Fraction | None
    strict: bool

    def text(self, sym: SymbolicModel) -> str:
        from .model import emit_affine

        score = emit_affine(sym, self.output, [rational_literal(v) for v in self.x])
        if self.strict:
            if self.lo is not None:
                return f"(> {score} {rational_literal(self.lo)})"
            return f"(< {score} {rational_literal(self.hi)})"
        return f"(and (<= {rational_literal(self.lo)} {score}) (<= {score} {rational_literal(self.hi)}))"

    def holds(self, model: LinearModel) -> bool:
        f = model.predict_exact(self.x)[self.output]
        if self.strict:
            return f > self.lo if self.lo is not None else f < self.hi
        return self.lo <= f <= self.hi


def _round_features(x, digits: int) -> tuple[Fraction, ...]:
    return tuple(Fraction(f"{float(v):.{digits}f}") for v in x)


def decisions(X, Y, task: str, cfg: TrainConfig, y_max=None, offset: int = 0) -> list[Decision]:
    """Per instance, per output, per threshold soft constraints."""
    out = []
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    regression = task == "multi-target-regression"
    if regression and y_max is None:
        raise TrainingError("regression decision constraints need y_max")
    for i in range(len(X)):
        x = _round_features(X[i], cfg.feature_digits)
        for k in range(Y.shape[1]):
            y = Y[i, k]
            if regression:
                for c in cfg.regression_threshold_coeffs:
                    e = _q(c) * _q(y_max[k])
                    out.append(Decision(offset + i, k, x, _q(y) - e, _q(y) + e, False))
            else:
                for t in cfg.classification_thresholds:
                    tau = _q(t)
                    if y > 0:
                        out.append(Decision(offset + i, k, x, tau, None, True))
                    else:
                        out.append(Decision(offset + i, k, x, None, -tau, True))
    return out


def decision_constraints(batch, sym: SymbolicModel, cfg: TrainConfig, task: str, y_max=None) -> list[str]:
    """Soft constraint texts for a batch (anything with ``X`` and ``Y``)."""
    return [d.text(sym) for d in decisions(batch.X, batch.Y, task, cfg, y_max)]


def count_satisfied_decisions(model: LinearModel, data: Dataset, cfg: TrainConfig, y_max=None) -> int:
    """How many whole-dataset decision constraints ``model`` satisfies (exact arithmetic)."""
    ds = decisions(data.X, data.Y, data.task, cfg, data.y_max if y_max is None else y_max)
    return sum(d.holds(model) for d in ds)


# --------------------------------------------------------------------------- box constraint


def sgn(g) -> np.ndarray:
    """Sign with sgn(0) = +1."""
    return np.where(np.asarray(g, dtype=float) >= 0, 1, -1)


def _snap(lo: Fraction, hi: Fraction, res: Fraction) -> tuple[Fraction, Fraction]:
    a = math.ceil(lo / res) * res
    b = math.floor(hi / res) * res
    return (a, b) if a <= b else (lo, hi)


def box_intervals(w_hat, g, alpha, resolution=None) -> list[list[tuple[Fraction, Fraction]]]:
    """Per-weight interval between ŵ and ŵ - alpha*sgn(g), inclusive.

    With ``resolution`` the corners move inward onto that grid. The box stays
    inside the exact one, so steps remain bounded by alpha, but the solver
    no longer sees ŵ's (ever longer) rationals from one iteration to the next.
    """
    g = np.asarray(g, dtype=float)
    w_rows = [[_q(v) for v in row] for row in (w_hat.exact if isinstance(w_hat, LinearModel) else w_hat)]
    if g.shape != (len(w_rows), len(w_rows[0])):
        raise TrainingError(f"gradient shape {g.shape} does not match weights {len(w_rows)}x{len(w_rows[0])}")
    a = _q(alpha)
    res = None if resolution is None else _q(resolution)
    signs = sgn(g)
    out = []
    for k, row in enumerate(w_rows):
        iv = [(w - a, w) if signs[k, i] > 0 else (w, w + a) for i, w in enumerate(row)]
        out.append(iv if res is None else [_snap(lo, hi, res) for lo, hi in iv])
    return out


def box_constraint(w_hat, g, alpha, sym: SymbolicModel | None = None, resolution=None) -> str:
    iv = box_intervals(w_hat, g, alpha, resolution)
    K, d1 = len(iv), len(iv[0])
    sym = sym or SymbolicModel(K, d1 - 1)
    parts = []
    for k in range(K):
        for i in range(d1):
            lo, hi = iv[k][i]
            w = sym.symbol(k, i)
            parts.append(f"(<= {rational_literal(lo)} {w})")
            parts.append(f"(<= {w} {rational_literal(hi)})")
    return "(and " + " ".join(parts) + ")"


def param_bound_constraint(sym: SymbolicModel, bound) -> str:
    b = _q(bound)
    lit_lo, lit_hi = rational_literal(-b), rational_literal(b)
    return "(and " + " ".join(f"(<= {lit_lo} {w}) (<= {w} {lit_hi})" for w in sym.symbols()) + ")"


# --------------------------------------------------------------------------- stopping


def stopping_criterion(loss_trace: Sequence, iteration: int, cfg: TrainConfig | None = None) -> bool:
    """Stop at the scheduled checkpoints when the loss improved by less than the minimum.

    ``loss_trace[t - 1]`` is the loss after iteration ``t`` (None before the first Sat solve).
    """
    cfg = cfg or TrainConfig()
    if iteration >= cfg.max_iterations:
        return True
    if iteration < cfg.stop_start or (iteration - cfg.stop_start) % cfg.stop_every:
        return False
    if iteration - cfg.stop_lookback < 1 or len(loss_trace) < iteration:
        return False
    now, before = loss_trace[iteration - 1], loss_trace[iteration - 1 - cfg.stop_lookback]
    if now is None or before is None:
        return False
    if before <= 0:
        return True
    return (before - now) / before < cfg.stop_min_improvement


# --------------------------------------------------------------------------- SaDe


@dataclass
class ArchiveEntry:
    iteration: int
    model: LinearModel
    loss: float
    satisfied_soft: int
    n_soft: int
    approximate: bool = False


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    batch: int
    verdict: str
    box: list | None  # intervals the solution had to lie in (None: unboxed)
    restart: bool = False
    discarded: bool = False
    elapsed: float = 0.0


@dataclass
class TrainedBundle:
    model: LinearModel
    archive: list[ArchiveEntry]
    loss_trace: list[float | None]
    history: list[IterationRecord]
    config: TrainConfig
    solver: SolverConfig
    iterations: int = 0
    restarts: int = 0
    sat_solves: int = 0
    unsat_solves: int = 0
    unknown_solves: int = 0
    crashes: int = 0
    discarded: int = 0
    elapsed: float = 0.0  # seconds
    certificate: dict | None = None

    @property
    def best(self) -> ArchiveEntry:
        return min(self.archive, key=lambda e: e.loss)

    def report(self) -> dict:
        return {
            "iterations": self.iterations,
            "restarts": self.restarts,
            "sat_solves": self.sat_solves,
            "unsat_solves": self.unsat_solves,
            "unknown_solves": self.unknown_solves,
            "crashes": self.crashes,
            "discarded_approximations": self.discarded,
            "archive_size": len(self.archive),
            "best_loss": self.best.loss,
            "best_iteration": self.best.iteration,
            "loss_trace": self.loss_trace,
            "solve_ms": [r.elapsed for r in self.history],
            "elapsed_s": self.elapsed,
            "config": self.config.to_dict(),
            "solver": self.solver.to_dict(),
            "certificate": self.certificate,
        }


class _Backend:
    """Solver session holding the symbolic weights and the instantiated constraints."""

    def __init__(self, sym: SymbolicModel, base: list[str], aux: list[str], cfg: SolverConfig):
        self.sym = sym
        self.base = base
        self.aux = aux
        self.cfg = cfg
        self.s = SolverSession(cfg)
        self._load()

    def _load(self):
        self.s.declare_reals(self.sym.symbols())
        self.s.declare_reals(self.aux)
        for h in self.base:
            self.s.assert_formula(h)

    def restart(self):
        self.s.restart()
        self._load()

    def solve(self, hard: list[str], soft: list[str], prefer: list[str] = ()) -> maxsmt.MaxSmtResult:
        p = maxsmt.MaxSmtProblem(hard, soft, self.sym.symbols(), prefer=list(prefer))
        return maxsmt.solve(p, session=self.s)

    def close(self):
        self.s.close()


@dataclass
class _Setup:
    vocab: Vocabulary
    bounds: list
    sym: SymbolicModel
    hard: list[str]
    aux: list[str]  # multiplier symbols of dualized constraints
    quantified: list[str]  # names of constraints kept in quantified form


def _setup(data: Dataset, constraints: ConstraintSet, cfg: TrainConfig, solver: SolverConfig | None) -> _Setup:
    vocab = Vocabulary.from_dataset(data)
    bounds = data.bounds or compute_bounds(data)
    sym = SymbolicModel(data.n_outputs, data.n_features, tuple(data.target_names))
    hard, aux = [], []
    quantified = [c.name for c in constraints]
    if cfg.dualize and len(constraints.constraints):
        with SolverSession(solver) as s:
            hard, aux, quantified = encode_constraints(constraints, sym, bounds, vocab, s)
        if quantified:
            log.info("constraints kept quantified: %s", ", ".join(quantified))
    hard += [instantiate(c.formula, sym, bounds, vocab) for c in constraints if c.name in set(quantified)]
    hard.append(param_bound_constraint(sym, cfg.param_bound))
    return _Setup(vocab, bounds, sym, hard, aux, quantified)


def sade_train(
    data: Dataset,
    constraints: ConstraintSet,
    cfg: TrainConfig | None = None,
    solver: SolverConfig | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> TrainedBundle:
    """Satisfiability descent.

    Each batch is a small MaxSMT problem: the domain constraints, weight
    bounds and the current box are hard, the batch's decision constraints
    soft. Sat answers are archived with their full-data loss and set the next
    box along the negative gradient; Unsat/Unknown answers flip the gradient.
    Returns the lowest-loss archived model.
    """
    cfg = cfg or TrainConfig()
    solver = solver or SolverConfig()
    if len(data) == 0:
        raise TrainingError("empty training set")
    t_start = time.monotonic()
    st = _setup(data, constraints, cfg, solver)
    vocab, bounds, sym = st.vocab, st.bounds, st.sym
    kind = loss_kind_for(data.task)
    y_max = data.y_max
    batches = partition_batches(data, cfg.batch_size, cfg.seed)
    softs_per_batch = [None] * len(batches)

    backend = _Backend(sym, st.hard, st.aux, solver)
    archive: list[ArchiveEntry] = []
    trace: list[float | None] = []
    history: list[IterationRecord] = []
    w_hat: LinearModel | None = None
    g: np.ndarray | None = None
    box: list | None = None
    counts = dict(restarts=0, sat=0, unsat=0, unknown=0, crashes=0, discarded=0)
    last_loss: float | None = None
    it = 0
    try:
        stop = False
        for epoch in range(cfg.epochs):
            for batch in batches:
                it += 1
                if softs_per_batch[batch.index] is None:
                    softs_per_batch[batch.index] = decision_constraints(batch, sym, cfg, data.task, y_max)
                soft = softs_per_batch[batch.index]
                hard = [] if box is None else [_box_text(box, sym)]
                prefer = [] if box is None else descent_preferences(w_hat, g, cfg.alpha, cfg.descent_tiebreak, sym)
                res = _solve_with_retry(backend, hard, soft, counts, prefer)
                rec = IterationRecord(it, epoch, batch.index, res.label.value, box, elapsed=res.elapsed)
                accepted = False
                if res.sat:
                    counts["sat"] += 1
                    model = sym.concretize(res.params, data.task, data.feature_names)
                    if res.approximate and not _recheck(model, constraints, bounds, vocab, solver):
                        counts["discarded"] += 1
                        rec.discarded = True
                    else:
                        accepted = True
                        w_hat = model
                        last_loss = loss(model, data, kind)
                        archive.append(
                            ArchiveEntry(it, model, last_loss, res.satisfied_soft, len(soft), bool(res.approximate))
                        )
                        g = gradient(model, data, kind)
                elif res.label is Verdict.UNSAT:
                    counts["unsat"] += 1
                    if box is None:
                        raise NoAdmissibleModel("no admissible model found: the domain constraints are unsatisfiable")
                else:
                    counts["unknown"] += 1
                if not accepted and g is not None:
                    g = -g
                    counts["restarts"] += 1
                    rec.restart = True
                if g is not None:
                    box = box_intervals(w_hat, g, cfg.alpha, cfg.box_resolution)
                trace.append(last_loss)
                history.append(rec)
                if on_iteration is not None:
                    on_iteration(rec)
                if stopping_criterion(trace, it, cfg):
                    stop = True
                    break
            if stop:
                break
    finally:
        backend.close()
    if not archive:
        raise NoAdmissibleModel("no admissible model found: no batch produced a Sat solve")
    best = min(archive, key=lambda e: e.loss)
    return TrainedBundle(
        model=best.model,
        archive=archive,
        loss_trace=trace,
        history=history,
        config=cfg,
        solver=solver,
        iterations=it,
        restarts=counts["restarts"],
        sat_solves=counts["sat"],
        unsat_solves=counts["unsat"],
        unknown_solves=counts["unknown"],
        crashes=counts["crashes"],
        discarded=counts["discarded"],
        elapsed=time.monotonic() - t_start,
    )


def _box_text(box, sym: SymbolicModel) -> str:
    parts = []
    for k, row in enumerate(box):
        for i, (lo, hi) in enumerate(row):
            w = sym.symbol(k, i)
            parts.append(f"(<= {rational_literal(lo)} {w}) (<= {w} {rational_literal(hi)})")
    return "(and " + " ".join(parts) + ")"


def descent_preferences(w_hat: LinearModel, g, alpha, fractions, sym: SymbolicModel) -> list[str]:
    """Formulas ``g.w <= g.w_hat - f * alpha * |g|_1``, one per fraction ``f``.

    Inside the box the linearised loss can drop by at most ``alpha * |g|_1`` (at
    the far corner), so ``f`` is the share of that drop demanded. ``g`` is
    scaled to max-norm one and rounded to six decimals to keep literals short.
    """
    g = np.asarray(g, dtype=float)
    top = float(np.max(np.abs(g))) if g.size else 0.0
    if not fractions or not np.isfinite(top) or top == 0.0:
        return []
    coef = [[Fraction(round(v / top, 6)).limit_denominator(10**6) for v in row] for row in g]
    terms, here, l1 = [], Fraction(0), Fraction(0)
    for k, row in enumerate(coef):
        for i, c in enumerate(row):
            if c:
                terms.append(f"(* {rational_literal(c)} {sym.symbol(k, i)})")
                here += c * w_hat.exact[k][i]
                l1 += abs(c)
    if not terms:
        return []
    lhs = terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"
    a = _q(alpha)
    return [f"(<= {lhs} {rational_literal(here - _q(f) * a * l1)})" for f in fractions]


def _solve_with_retry(backend: _Backend, hard, soft, counts, prefer=()) -> maxsmt.MaxSmtResult:
    for attempt in range(2):
        try:
            return backend.solve(hard, soft, prefer)
        except SolverCrash as exc:
            counts["crashes"] += 1
            log.warning("solver crashed (%s); restarting session", exc)
            backend.restart()
    return maxsmt.MaxSmtResult(Verdict.UNKNOWN)


def _recheck(model, constraints, bounds, vocab, solver) -> bool:
    from .verifier import prove_admissible

    return prove_admissible(model, constraints, bounds, vocab, solver).proven


# --------------------------------------------------------------------------- exact learner


@dataclass
class ExactResult:
    model: LinearModel
    satisfied_soft: int
    n_soft: int
    result: maxsmt.MaxSmtResult


def exact_maxsmt_train(
    data: Dataset,
    constraints: ConstraintSet,
    cfg: TrainConfig | None = None,
    solver: SolverConfig | None = None,
) -> ExactResult:
    """One MaxSMT problem over every instance; only viable for a few dozen rows."""
    cfg = cfg or TrainConfig()
    if len(data) > cfg.exact_max_instances:
        raise TrainingError(
            f"exact learner limited to {cfg.exact_max_instances} instances (got {len(data)}); use sade_train"
        )
    st = _setup(data, constraints, cfg, solver)
    vocab, bounds, sym = st.vocab, st.bounds, st.sym
    soft = decision_constraints(data, sym, cfg, data.task, data.y_max)
    res = maxsmt.solve(maxsmt.MaxSmtProblem(st.hard, soft, sym.symbols(), aux=st.aux), solver)
    if res.label is Verdict.UNSAT:
        raise NoAdmissibleModel("no admissible model found: the domain constraints are unsatisfiable")
    if res.label is Verdict.UNKNOWN:
        raise TrainingError("solver returned unknown (timeout) on the exact MaxSMT problem")
    model = sym.concretize(res.params, data.task, data.feature_names)
    if res.approximate and not _recheck(model, constraints, bounds, vocab, solver):
        raise TrainingError("solver returned an irrational solution whose approximation is not admissible")
    return ExactResult(model, res.satisfied_soft, len(soft), res)


# --------------------------------------------------------------------------- gradient-descent baselines


class PenaltyError(TrainingError):
    """Constraint cannot be written as a hinge penalty."""


@dataclass
class SbrPenalty:
    lam: float
    constraints: ConstraintSet


def _linear_form(t, x_orig: dict, K: int, tindex: dict):
    """(c, a) with term = c + a . f(x); ``x_orig`` maps feature name -> value."""
    if isinstance(t, Const):
        return float(t.value), np.zeros(K)
    if isinstance(t, Feat):
        return float(x_orig[t.name]), np.zeros(K)
    if isinstance(t, Pred):
        a = np.zeros(K)
        a[tindex[t.name]] = 1.0
        return 0.0, a
    if isinstance(t, SumPreds):
        return 0.0, np.ones(K)
    if isinstance(t, Add):
        parts = [_linear_form(a, x_orig, K, tindex) for a in t.args]
        return sum(p[0] for p in parts), sum((p[1] for p in parts), np.zeros(K))
    if isinstance(t, Sub):
        parts = [_linear_form(a, x_orig, K, tindex) for a in t.args]
        if len(parts) == 1:
            return -parts[0][0], -parts[0][1]
        c = parts[0][0] - sum(p[0] for p in parts[1:])
        a = parts[0][1] - sum((p[1] for p in parts[1:]), np.zeros(K))
        return c, a
    if isinstance(t, Mul):
        c, a = 1.0, np.zeros(K)
        linear_seen = False
        for arg in t.args:
            ci, ai = _linear_form(arg, x_orig, K, tindex)
            if np.any(ai):
                if linear_seen:
                    raise PenaltyError("product of two model outputs is not hinge-expressible")
                linear_seen = True
                a = c * ai + a * 0
                c = c * ci
            else:
                a = a * ci
                c = c * ci
        return c, a
    if isinstance(t, Div):
        c, a = _linear_form(t.num, x_orig, K, tindex)
        den = float(t.den.value)
        return c / den, a / den
    raise PenaltyError(f"unsupported term {t!r}")


_FLIP = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "=": "="}


def _compile_penalty(f, x_scaled, vocab: Vocabulary, var: str):
    """Penalty tree for one instance: nodes ('hinge', c, a) / ('abs', c, a) / ('sum', kids) / ('min', kids)."""
    K = len(vocab.targets)
    tindex = {n: k for k, n in enumerate(vocab.targets)}
    x_orig = {}
    for j, name in enumerate(vocab.features):
        s = vocab.scaling.get(name)
        x_orig[name] = float(s.to_original(x_scaled[j])) if s is not None else float(x_scaled[j])

    def diff(lhs, rhs):
        c1, a1 = _linear_form(lhs, x_orig, K, tindex)
        c2, a2 = _linear_form(rhs, x_orig, K, tindex)
        return c1 - c2, a1 - a2

    def go(g, negate=False):
        if isinstance(g, Compare):
            op = _FLIP[g.op] if negate else g.op
            if negate and g.op == "=":
                raise PenaltyError("negated equality is not hinge-expressible")
            c, a = diff(g.lhs, g.rhs)
            if op in ("<", "<="):
                return ("hinge", c, a)
            if op in (">", ">="):
                return ("hinge", -c, -a)
            return ("abs", c, a)
        if isinstance(g, BoolConst):
            if g.value != negate:
                return ("sum", [])
            raise PenaltyError("constant false constraint")
        if isinstance(g, Not):
            return go(g.arg, not negate)
        if isinstance(g, (And, Or)):
            conj = isinstance(g, And) != negate
            kids = [go(a, negate) for a in g.args]
            return ("sum", kids) if conj else ("min", kids)
        if isinstance(g, Implies):
            if negate:
                raise PenaltyError("negated implication is not hinge-expressible")
            if mentions_pred(g.lhs):
                raise PenaltyError("implication premise must not mention model outputs")
            if eval_on_point(g.lhs, None, {var: x_scaled}, vocab, labels={var: [0.0] * K}):
                return go(g.rhs)
            return ("sum", [])
        raise PenaltyError(f"unsupported formula {type(g).__name__}")

    return go(f)


def _eval_penalty(node, fx: np.ndarray):
    kind = node[0]
    if kind == "hinge":
        v = node[1] + node[2] @ fx
        return (v, node[2]) if v > 0 else (0.0, np.zeros_like(fx))
    if kind == "abs":
        v = node[1] + node[2] @ fx
        return abs(v), np.sign(v) * node[2]
    vals = [_eval_penalty(k, fx) for k in node[1]]
    if kind == "sum":
        return sum((v for v, _ in vals), 0.0), sum((d for _, d in vals), np.zeros_like(fx))
    if not vals:
        return 0.0, np.zeros_like(fx)
    return min(vals, key=lambda p: p[0])


class HingePenalty:
    """Mean hinge violation of instance-level constraints over a training set."""

    def __init__(self, constraints: ConstraintSet, data: Dataset):
        self.vocab = Vocabulary.from_dataset(data)
        self.trees: list[list] = []
        bodies = []
        for c in constraints:
            if not is_instance_level(c.formula):
                raise PenaltyError(f"constraint {c.name!r} quantifies over more than one instance")
            vars_, body = strip_foralls(c.formula)
            bodies.append((vars_[0], expand_eqexcept(body, self.vocab)))
        for i in range(len(data)):
            self.trees.append([_compile_penalty(b, data.X[i], self.vocab, v) for v, b in bodies])

    def value_and_grad(self, model: LinearModel, X: np.ndarray, idx) -> tuple[float, np.ndarray]:
        K, d1 = model.shape
        F = model.predict(X[idx])
        total, G = 0.0, np.zeros((K, d1))
        for row, i in enumerate(idx):
            xb = np.append(X[i], 1.0)
            for tree in self.trees[i]:
                v, dv = _eval_penalty(tree, F[row])
                total += v
                G += np.outer(dv, xb)
        n = max(len(idx), 1)
        return total / n, G / n


@dataclass
class GdResult:
    model: LinearModel
    loss_trace: list[float]
    penalty_trace: list[float] = field(default_factory=list)


def gd_train(data: Dataset, cfg: TrainConfig | None = None, penalty: SbrPenalty | None = None) -> GdResult:
    """Plain mini-batch gradient descent, optionally with the hinge (SBR-style) penalty.

    No admissibility guarantee; a comparison baseline.
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise TrainingError("empty training set")
    kind = loss_kind_for(data.task)
    hinge = HingePenalty(penalty.constraints, data) if penalty is not None else None
    lam = float(penalty.lam) if penalty is not None else 0.0
    if lam < 0:
        raise TrainingError("penalty weight must be non-negative")
    W = np.zeros((data.n_outputs, data.n_features + 1))
    model = LinearModel.from_array(W, data.target_names, data.task, data.feature_names)
    rng = np.random.default_rng(cfg.seed)
    epochs = cfg.gd_epochs or cfg.epochs
    trace, ptrace = [], []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grad = gradient(model, data.X[idx], kind, data.Y[idx])
            if hinge is not None and lam > 0:
                _, pg = hinge.value_and_grad(model, data.X, idx)
                grad = grad + lam * pg
            W = W - cfg.learning_rate * grad
            model = LinearModel.from_array(W, data.target_names, data.task, data.feature_names)
        trace.append(loss(model, data, kind))
        if hinge is not None:
            ptrace.append(hinge.value_and_grad(model, data.X, np.arange(len(data)))[0])
    return GdResult(model, trace, ptrace)
