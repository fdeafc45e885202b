"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (see the ``acceptance`` fixture in
conftest) and then asserts. Run with ``pytest -v -s tests/test_acceptance.py``
to watch the lines as they come; they are repeated in the terminal summary.
The whole file takes several minutes on one CPU.
"""

from __future__ import annotations

import itertools
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from sade.constraints import ConstraintSet, Vocabulary, eval_on_point, strip_foralls
from sade.dataio import Dataset
from sade.evalharness import cross_validate, evaluate, kfold_indices
from sade.maxsmt import MaxSmtProblem, solve
from sade.model import LinearModel, gradient, loss
from sade.sexpr import rational_literal
from sade.smt import SolverSession, Verdict
from sade.trainer import (
    SbrPenalty,
    TrainConfig,
    box_intervals,
    count_satisfied_decisions,
    exact_maxsmt_train,
    gd_train,
    sade_train,
    sgn,
    stopping_criterion,
)
from sade.verifier import (
    Counterexample,
    NearStatus,
    adversity_index,
    find_counterexample_near,
    prove_admissible,
)

from conftest import line_constraints, line_dataset, needs_solver, synthetic

pytestmark = [needs_solver, pytest.mark.slow]

# pinned tolerances and sizes
GUARANTEE_RUNS = 20
GUARANTEE_SIZES = (200, 300, 400, 500)
GUARANTEE_RATES = (0.05, 0.10)
DELTAS = (Fraction(1, 100), Fraction(1, 10))
SBR_LAMBDAS = [0.0, 1.0, 10.0]
SBR_FOLDS = 5
MAXSMT_PROBLEMS = 50
MAXSMT_MAX_SOFT = 6
MAXSMT_BUDGET_S = 120.0
EXACT_DATASETS = 10
EXACT_SIZE = 20
GRAD_CASES = 50
GRAD_REL_TOL = 1e-4
GRAD_FLOOR = 1e-6  # denominators below this are treated as absolute error
GRAD_BUDGET_S = 10.0
ACCURACY_GAP = 0.05
ACCURACY_SEEDS = 5


# --------------------------------------------------------------------------- shared synthetic runs


@dataclass
class Run:
    name: str
    n: int
    rate: float
    seed: int
    data: Dataset
    constraints: ConstraintSet
    sade_status: str = ""
    sade_adi: dict = field(default_factory=dict)
    sade_unknown: int = 0
    sbr_lambda: float | None = None
    sbr_model: LinearModel | None = None
    sbr_adi: float = 0.0
    sbr_counterexamples: dict[int, Counterexample] = field(default_factory=dict)
    seconds: float = 0.0


def _run_specs():
    for i in range(GUARANTEE_RUNS):
        name = "binary-denial" if i % 2 == 0 else "regression-budget"
        yield name, GUARANTEE_SIZES[(i // 2) % len(GUARANTEE_SIZES)], GUARANTEE_RATES[(i // 8) % 2], 100 + i


@pytest.fixture(scope="module")
def runs() -> list[Run]:
    out = []
    for name, n, rate, seed in _run_specs():
        t0 = time.monotonic()
        d, cs, _ = synthetic(name, n, rate, seed)
        run = Run(name, n, rate, seed, d, cs)
        vocab = Vocabulary.from_dataset(d)

        bundle = sade_train(d, cs, TrainConfig(seed=seed))
        run.sade_status = prove_admissible(bundle.model, cs, d.bounds, vocab).status.value
        for delta in DELTAS:
            rep = adversity_index(bundle.model, cs, d, delta)
            run.sade_adi[delta] = rep.adi
            run.sade_unknown += rep.unknown_count

        base = TrainConfig(seed=seed, learning_rate=0.1 if name == "regression-budget" else 0.5)
        cv = cross_validate(d, cs, {"lam": SBR_LAMBDAS}, k=SBR_FOLDS, seed=seed, method="sbr", base=base)
        run.sbr_lambda = cv.selected["lam"]
        run.sbr_model = gd_train(d, base, SbrPenalty(run.sbr_lambda, cs)).model
        rep = adversity_index(run.sbr_model, cs, d, DELTAS[1])
        run.sbr_adi = rep.adi
        run.sbr_counterexamples = rep.counterexamples
        run.seconds = time.monotonic() - t0
        out.append(run)
    return out


# --------------------------------------------------------------------------- 1. guarantee


def test_criterion_1_guarantee(runs, acceptance):
    good = [r for r in runs if r.sade_status == "proven" and all(r.sade_adi[d] == 0 for d in DELTAS)]
    detail = (
        f"{len(good)}/{len(runs)} SaDe runs Proven with AdI=0 at delta in {{0.01, 0.1}}"
        f" (unknown ball queries: {sum(r.sade_unknown for r in runs)};"
        f" mean run time {np.mean([r.seconds for r in runs]):.1f}s incl. baselines)"
    )
    assert acceptance(len(good) == len(runs), detail)


# --------------------------------------------------------------------------- 2. baseline contrast


def test_criterion_2_baseline_contrast(runs, acceptance):
    positive = [r for r in runs if r.sbr_adi > 0]
    lams = sorted({r.sbr_lambda for r in runs})
    detail = (
        f"lambda-selected SBR baseline has AdI>0 at delta=0.1 in {len(positive)}/{len(runs)} runs"
        f" (max {max(r.sbr_adi for r in runs):.3f}; selected lambdas {lams})"
    )
    assert acceptance(len(positive) >= 1, detail)


# --------------------------------------------------------------------------- 3. MaxSMT oracle


def _brute_force(s: SolverSession, hard, soft) -> int | None:
    s.push()
    try:
        for h in hard:
            s.assert_formula(h)
        if not s.check(want_model=False).sat:
            return None
        for size in range(len(soft), -1, -1):
            for subset in itertools.combinations(soft, size):
                s.push()
                for f in subset:
                    s.assert_formula(f)
                ok = s.check(want_model=False).sat
                s.pop()
                if ok:
                    return size
        return 0
    finally:
        s.pop()


def _random_atom(rng, names) -> str:
    coefs = rng.integers(-3, 4, len(names))
    lhs = " ".join(f"(* {rational_literal(Fraction(int(c)))} {v})" for c, v in zip(coefs, names))
    op = rng.choice(["<", "<=", ">", ">="])
    return f"({op} (+ {lhs}) {rational_literal(Fraction(int(rng.integers(-4, 5))))})"


def test_criterion_3_maxsmt_oracle(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    agree = 0
    with SolverSession() as oracle:
        names = ["x", "y", "z"]
        oracle.declare_reals(names)
        for _ in range(MAXSMT_PROBLEMS):
            hard = [_random_atom(rng, names) for _ in range(int(rng.integers(0, 3)))]
            soft = [_random_atom(rng, names) for _ in range(int(rng.integers(1, MAXSMT_MAX_SOFT + 1)))]
            expect = _brute_force(oracle, hard, soft)
            res = solve(MaxSmtProblem(hard, soft, names))
            got = None if res.label is Verdict.UNSAT else res.satisfied_soft
            agree += got == expect and res.rounds <= len(soft)
    elapsed = time.monotonic() - t0
    detail = f"{agree}/{MAXSMT_PROBLEMS} problems match the brute-force optimum in {elapsed:.1f}s (budget {MAXSMT_BUDGET_S:.0f}s)"
    assert acceptance(agree == MAXSMT_PROBLEMS and elapsed < MAXSMT_BUDGET_S, detail)


# --------------------------------------------------------------------------- 4. exact learner dominance


def test_criterion_4_exact_dominance(acceptance):
    ok, rows = 0, []
    for seed in range(EXACT_DATASETS):
        d, cs, _ = synthetic("binary-denial", EXACT_SIZE, 0.1, seed=500 + seed)
        cfg = TrainConfig(seed=seed)
        exact = exact_maxsmt_train(d, cs, cfg)
        bundle = sade_train(d, cs, cfg)
        best_sade = max(count_satisfied_decisions(e.model, d, cfg) for e in bundle.archive)
        ok += exact.satisfied_soft >= best_sade
        rows.append(f"{exact.satisfied_soft}>={best_sade}")
    detail = f"{ok}/{EXACT_DATASETS} datasets: exact satisfied-soft >= every SaDe archive entry ({', '.join(rows)})"
    assert acceptance(ok == EXACT_DATASETS, detail)


# --------------------------------------------------------------------------- 5. gradient checks


def test_criterion_5_gradients(acceptance):
    rng = np.random.default_rng(77)
    t0 = time.monotonic()
    worst = 0.0
    for kind in ("cross-entropy", "sum-mse"):
        for _ in range(GRAD_CASES):
            k, d = int(rng.integers(1, 4)), int(rng.integers(1, 6))
            X = rng.uniform(0, 1, (int(rng.integers(2, 20)), d))
            Y = rng.choice([-1.0, 1.0], (len(X), k)) if kind == "cross-entropy" else rng.normal(0, 2, (len(X), k))
            W = rng.normal(0, 2, (k, d + 1))
            m = LinearModel.from_array(W, [f"o{i}" for i in range(k)])
            g = gradient(m, X, kind, Y)
            h = 1e-6
            for idx in np.ndindex(W.shape):
                Wp, Wm = W.copy(), W.copy()
                Wp[idx] += h
                Wm[idx] -= h
                num = (loss(m.with_weights(Wp), X, kind, Y) - loss(m.with_weights(Wm), X, kind, Y)) / (2 * h)
                rel = abs(g[idx] - num) / max(abs(num), abs(g[idx]), GRAD_FLOOR)
                worst = max(worst, rel)
    elapsed = time.monotonic() - t0
    detail = f"worst relative error {worst:.2e} (< {GRAD_REL_TOL:g}) over {2 * GRAD_CASES} cases in {elapsed:.1f}s (< {GRAD_BUDGET_S:g}s)"
    assert acceptance(worst < GRAD_REL_TOL and elapsed < GRAD_BUDGET_S, detail)


# --------------------------------------------------------------------------- 6. predictive comparability


def test_criterion_6_accuracy(acceptance):
    sade_acc, gd_acc = [], []
    for seed in range(ACCURACY_SEEDS):
        d, cs, _ = synthetic("binary-denial", 500, 0.05, seed=900 + seed)
        folds = kfold_indices(len(d), 5, seed)
        test_idx = folds[0]
        train = d.subset(np.concatenate(folds[1:]))
        test = d.subset(test_idx)
        cfg = TrainConfig(seed=seed)
        sade_acc.append(evaluate(sade_train(train, cs, cfg).model, test, cs).value)
        gd_acc.append(evaluate(gd_train(train, cfg).model, test, cs).value)
    gap = abs(np.mean(sade_acc) - np.mean(gd_acc))
    detail = (
        f"admissible-subset accuracy SaDe {100 * np.mean(sade_acc):.2f}% vs GD {100 * np.mean(gd_acc):.2f}%"
        f" over {ACCURACY_SEEDS} seeds; gap {100 * gap:.2f}pp (<= {100 * ACCURACY_GAP:.0f}pp)"
    )
    assert acceptance(gap <= ACCURACY_GAP, detail)


# --------------------------------------------------------------------------- 7. box / restart mechanics


def test_criterion_7_box_and_restarts(acceptance):
    checks = {}
    checks["worked example"] = box_intervals([[1, 1]], [[0.3, -0.2]], 0.5) == [
        [(Fraction(1, 2), Fraction(1)), (Fraction(1), Fraction(3, 2))]
    ]
    checks["sgn(0)=+1"] = sgn([0.0]).tolist() == [1] and box_intervals([[2]], [[0.0]], 1) == [[(Fraction(1), Fraction(2))]]
    checks["origin, all positive"] = box_intervals([[0, 0]], [[1, 1]], 1) == [[(Fraction(-1), Fraction(0))] * 2]

    cfg = TrainConfig()
    flat = [5.0] * 1200
    checks["schedule 400,500,..."] = [t for t in range(1, 1201) if stopping_criterion(flat, t, cfg)][:4] == [400, 500, 600, 700]
    checks["1% stops, 10% continues"] = stopping_criterion([10.0] * 200 + [9.9] * 200, 400, cfg) and not stopping_criterion(
        [10.0] * 200 + [9.0] * 200, 400, cfg
    )

    d, cs, _ = synthetic("regression-budget", 60, 0.1, seed=3)
    cfg = TrainConfig(epochs=4, alpha=0.5)
    records = []
    bundle = sade_train(d, cs, cfg, on_iteration=records.append)
    alpha = Fraction(1, 2)
    by_iter = {r.iteration: r for r in records}
    in_box, steps = True, True
    prev = None
    for e in bundle.archive:
        box = by_iter[e.iteration].box
        if box is not None:
            in_box &= all(lo <= w <= hi and hi - lo <= alpha for row, iv in zip(e.model.exact, box) for w, (lo, hi) in zip(row, iv))
        if prev is not None:
            steps &= all(abs(a - b) <= alpha for ra, rb in zip(e.model.exact, prev.model.exact) for a, b in zip(ra, rb))
        prev = e
    checks["solutions inside box"] = in_box
    checks["per-coordinate step <= alpha"] = steps

    # a restart keeps the anchor and flips the side of every interval
    res = Fraction(1, 10**6)
    flips, flipped_ok = 0, True
    for a, b in zip(records, records[1:]):
        if a.restart and a.box is not None:
            flips += 1
            for ra, rb in zip(a.box, b.box):
                for (alo, ahi), (blo, bhi) in zip(ra, rb):
                    flipped_ok &= abs(ahi - blo) <= 2 * res or abs(bhi - alo) <= 2 * res
    checks[f"gradient negated on {flips} restarts"] = flipped_ok and flips > 0

    failed = [k for k, v in checks.items() if not v]
    detail = f"{len(checks) - len(failed)}/{len(checks)} checks" + (f"; failed: {failed}" if failed else "")
    assert acceptance(not failed, detail)


# --------------------------------------------------------------------------- 8. verifier validity


def _validate_cex(model, cs, vocab, bounds, x0, delta, cex) -> bool:
    c = next(c for c in cs if c.name == cex.constraint)
    if eval_on_point(c.formula, model, cex.point, vocab):
        return False
    first = strip_foralls(c.formula)[0][0]
    for v, xs in cex.point.items():
        for j, (x, (lo, hi)) in enumerate(zip(xs, bounds)):
            if not lo <= x <= hi:
                return False
            if v == first and abs(x - Fraction(repr(float(x0[j])))) > delta:
                return False
    return True


def test_criterion_8_verifier_validity(runs, acceptance):
    checked = valid = 0
    for r in runs:
        vocab = Vocabulary.from_dataset(r.data)
        for i, cex in r.sbr_counterexamples.items():
            checked += 1
            valid += _validate_cex(r.sbr_model, r.constraints, vocab, r.data.bounds, r.data.X[i], DELTAS[1], cex)
    # hand-built fixture: f(x) = -x + 1/2 against f > 0 on a grid of centres and radii
    d = line_dataset([0.0], [1])
    cs = line_constraints("(constraint positive (forall (x) (> (pred x out) 0)))", d)
    m = LinearModel(((Fraction(-1), Fraction(1, 2)),), ("out",))
    vocab = Vocabulary.from_dataset(d)
    with SolverSession() as s:
        for x0 in np.linspace(0, 1, 21):
            for delta in (Fraction(1, 100), Fraction(1, 10), Fraction(1, 4)):
                res = find_counterexample_near(m, cs, [x0], delta, d.bounds, vocab, session=s)
                if res.status is NearStatus.FOUND:
                    checked += 1
                    valid += _validate_cex(m, cs, vocab, d.bounds, [x0], delta, res.counterexample)
    detail = f"{valid}/{checked} counterexamples violate exactly and lie in ball and bounds"
    assert acceptance(checked > 0 and valid == checked, detail)


# --------------------------------------------------------------------------- 9. optional real data


LOAN_CONFIG = os.environ.get("SADE_LOAN_CONFIG")


@pytest.mark.skipif(not LOAN_CONFIG, reason="set SADE_LOAN_CONFIG to a run config for the public loan approval data")
def test_criterion_9_loan(acceptance, tmp_path):
    """Optional: the config names data, schema, constraints and a held-out ``test`` CSV."""
    import json

    import yaml

    from sade.cli import main

    src = Path(LOAN_CONFIG).resolve()
    raw = yaml.safe_load(src.read_text())
    for key in ("data", "test", "constraints", "schema"):
        if isinstance(raw.get(key), str) and not Path(raw[key]).is_absolute():
            raw[key] = str(src.parent / raw[key])
    out = tmp_path / "loan"
    raw["model"] = str(out / "model.json")
    raw["deltas"] = [float(d) for d in DELTAS]
    cfg = tmp_path / "loan.yaml"
    cfg.write_text(yaml.safe_dump(raw))
    code = main(["train", "--config", str(cfg), "--out", str(out)])
    acc = adi = None
    if code == 0 and main(["eval", "--config", str(cfg), "--out", str(out)]) == 0:
        acc = json.loads((out / "eval.json").read_text())["value"]
    if code == 0 and main(["adi", "--config", str(cfg), "--out", str(out)]) == 0:
        adi = [r["adi"] for r in json.loads((out / "adi.json").read_text())["reports"]]
    ok = code == 0 and acc is not None and abs(100 * acc - 78) <= 6 and adi is not None and all(a == 0 for a in adi)
    assert acceptance(ok, f"train exit {code}, admissible-subset accuracy {acc}, adi {adi} (target 78 +- 6, adi 0)")
