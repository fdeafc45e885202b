"""Fu-Malik MaxSMT over an SMT session."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .sexpr import rational_literal
from .smt import SolverConfig, SolverSession, Verdict


@dataclass
class MaxSmtProblem:
    hard: list[str]
    soft: list[str]
    reals: list[str] = field(default_factory=list)
    bools: list[str] = field(default_factory=list)
    # declared but not reported (e.g. multipliers of dualized constraints)
    aux: list[str] = field(default_factory=list)
    # tie-breakers tried in order once the optimum is known; the first one that is
    # consistent with the optimal satisfied set picks the returned point
    prefer: list[str] = field(default_factory=list)


@dataclass
class MaxSmtResult:
    label: Verdict
    params: dict[str, Fraction] = field(default_factory=dict)
    approximate: set[str] = field(default_factory=set)
    satisfied: list[int] = field(default_factory=list)
    rounds: int = 0
    checks: int = 0
    elapsed: float = 0.0  # milliseconds

    @property
    def satisfied_soft(self) -> int:
        return len(self.satisfied)

    @property
    def sat(self) -> bool:
        return self.label is Verdict.SAT


def solve(problem: MaxSmtProblem, cfg: SolverConfig | None = None, session: SolverSession | None = None) -> MaxSmtResult:
    """Maximise the number of satisfied soft formulas subject to the hard ones.

    With ``session`` given, the work happens inside a push/pop scope of that
    session (hard formulas already asserted there stay in force); otherwise a
    private session is started.
    """
    if session is None:
        with SolverSession(cfg) as s:
            return _solve(problem, s)
    session.push()
    try:
        return _solve(problem, session)
    finally:
        if session.alive:
            session.pop()


def _solve(p: MaxSmtProblem, s: SolverSession) -> MaxSmtResult:
    t0 = time.monotonic()
    checks = 0

    def done(label, **kw):
        return MaxSmtResult(label, checks=checks, elapsed=(time.monotonic() - t0) * 1000.0, **kw)

    s.declare_reals([r for r in [*p.reals, *p.aux] if not s.is_declared(r)])
    s.declare_bools(p.bools)
    for h in p.hard:
        s.assert_formula(h)
    symbols = list(p.reals) or None

    first = s.check(symbols=symbols)
    checks += 1
    if not first.sat:
        return done(first.verdict)
    if not p.soft:
        first, extra = _prefer(s, p, [], first, symbols)
        checks += extra
        return done(Verdict.SAT, params=first.assignment, approximate=first.approximate)

    n = len(p.soft)
    relax: list[list[str]] = [[] for _ in range(n)]
    guards = [f"fmg_{i}_0" for i in range(n)]
    owner = {g: i for i, g in enumerate(guards)}
    for i, g in enumerate(guards):
        s.assert_formula(p.soft[i], label=g)

    rounds = 0
    while True:
        if rounds == n:
            # every soft needed relaxing: any admissible point is optimal
            res = first
            break
        res = s.check(guards, symbols=symbols)
        checks += 1
        rounds += 1
        if res.sat:
            break
        if res.unknown:
            return done(Verdict.UNKNOWN, rounds=rounds)
        core = [owner[c] for c in (res.unsat_core or []) if c in owner]
        if not core:
            # no usable core: relaxing every assumed soft is a safe superset
            core = list(range(n))
        fresh = []
        for i in sorted(set(core)):
            b = f"fmr_{i}_{rounds}"
            g = f"fmg_{i}_{rounds}"
            s.declare_bools([b])
            relax[i].append(b)
            fresh.append(b)
            body = f"(or {p.soft[i]} {' '.join(relax[i])})"
            s.assert_formula(body, label=g)
            del owner[guards[i]]
            guards[i] = g
            owner[g] = i
        for a, b in itertools.combinations(fresh, 2):
            s.assert_formula(f"(or (not {a}) (not {b}))")

    if res is first:
        # only reached via the relax-everything fallback can softs hold here; count honestly
        holds = _eval_softs(s, p.soft, first.assignment)
    else:
        holds = s.eval_bools(p.soft)
    satisfied = [i for i, h in enumerate(holds) if h]
    res, extra = _prefer(s, p, satisfied, res, symbols)
    checks += extra
    return done(
        Verdict.SAT,
        params=res.assignment,
        approximate=res.approximate,
        satisfied=satisfied,
        rounds=rounds,
    )


def _prefer(s: SolverSession, p: MaxSmtProblem, satisfied: list[int], res, symbols):
    """Re-pick the returned point using ``p.prefer`` without losing any satisfied soft."""
    checks = 0
    for pref in p.prefer:
        s.push()
        try:
            for i in satisfied:
                s.assert_formula(p.soft[i])
            s.assert_formula(pref)
            alt = s.check(symbols=symbols)
            checks += 1
        finally:
            s.pop()
        if alt.sat:
            return alt, checks
    return res, checks


def _eval_softs(s: SolverSession, soft: Sequence[str], assignment: dict) -> list[bool]:
    s.push()
    try:
        for name, v in assignment.items():
            s.assert_formula(f"(= {name} {rational_literal(v)})")
        r = s.check(want_model=False)
        if not r.sat:
            return [False] * len(soft)
        return s.eval_bools(list(soft))
    finally:
        s.pop()
