from fractions import Fraction

import pytest

from sade.sexpr import rational_literal
from sade.smt import SolverConfig, SolverCrash, SolverError, SolverSession, Verdict, check_formulas

from conftest import needs_solver

pytestmark = needs_solver


@pytest.fixture
def s():
    with SolverSession() as session:
        yield session


def test_empty_check_is_sat(s):
    assert s.check().verdict is Verdict.SAT


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(per_check_timeout=0)
    with pytest.raises(ValueError):
        SolverConfig(solver_command=[])
    with pytest.raises(ValueError):
        SolverConfig.from_dict({"bogus": 1})
    cfg = SolverConfig.from_dict({"per_check_timeout": 250, "solver_command": "z3 -in -smt2"})
    assert cfg.solver_command == ("z3", "-in", "-smt2")
    assert SolverConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_bad_executable():
    with pytest.raises(SolverCrash):
        SolverSession(SolverConfig(solver_command=["/nonexistent/z3"]))


def test_declarations(s):
    s.declare_reals(["w_0_0", "w_0_1"])
    s.assert_formula("(> w_0_0 0)")
    with pytest.raises(SolverError):
        s.declare_reals(["w_0_0"])
    many = [f"v{i}" for i in range(100)]
    s.declare_reals(many)
    s.assert_formula("(= (+ " + " ".join(many) + ") 100)")
    r = s.check()
    assert r.sat and sum(r.assignment[v] for v in many) == 100


def test_unlabeled_contradiction(s):
    s.declare_reals(["a"])
    s.assert_formula("(> a 0)")
    s.assert_formula("(< a 0)")
    assert s.check().unsat


def test_core_over_labels(s):
    s.declare_reals(["a"])
    s.assert_formula("(> a 0)")
    s.assert_formula("(> a 2)", label="s1")
    s.assert_formula("(< a 1)", label="s2")
    r = s.check(["s1", "s2"])
    assert r.unsat and set(r.unsat_core) <= {"s1", "s2"} and r.unsat_core
    # the core alone with the hard part is still Unsat
    assert s.check(r.unsat_core).unsat
    assert s.check(["s1"]).sat


def test_malformed_text(s):
    s.declare_reals(["a"])
    with pytest.raises(SolverError):
        s.assert_formula("(> a")
    with pytest.raises(SolverError):
        s.assert_formula("(> b 0)")
    # session still usable
    assert s.check().sat


def test_sat_model_in_range(s):
    s.declare_reals(["a"])
    s.assert_formula("(and (> a 0) (< a 1))")
    r = s.check()
    assert r.sat and 0 < r.assignment["a"] < 1 and not r.approximate


def test_quantified_model_rechecks():
    with SolverSession() as s:
        s.declare_reals(["a", "b"])
        s.assert_formula("(forall ((x Real)) (=> (and (<= 0 x) (<= x 1)) (> (+ (* a x) b) 0)))")
        r = s.check()
    assert r.sat
    a, b = r.assignment["a"], r.assignment["b"]
    claim = f"(forall ((x Real)) (=> (and (<= 0 x) (<= x 1)) (> (+ (* {rational_literal(a)} x) {rational_literal(b)}) 0)))"
    assert check_formulas([f"(not {claim})"]).unsat


def test_timeout_is_unknown():
    with SolverSession(SolverConfig(per_check_timeout=1)) as s:
        s.declare_reals(["a", "b", "c"])
        s.assert_formula(
            "(forall ((x Real) (y Real)) (=> (and (<= 0 x 1) (<= 0 y 1))"
            " (> (+ (* a x x y) (* b y y x) (* c x y) (- (* a b c))) (* x y a b))))"
        )
        s.assert_formula("(> (* a a b) (+ c 1))")
        r = s.check()
    assert r.unknown and r.elapsed >= 1 and r.reason == "timeout"


def test_irrational_value_is_flagged(s):
    s.declare_reals(["r"])
    s.assert_formula("(and (= (* r r) 2) (> r 0))")
    r = s.check()
    assert r.sat and "r" in r.approximate
    assert abs(float(r.assignment["r"]) - 2 ** 0.5) < 1e-12


def test_push_pop(s):
    s.declare_reals(["a"])
    s.push()
    s.declare_reals(["tmp"])
    s.assert_formula("(and (> a 0) (< a 0))")
    assert s.check().unsat
    s.pop()
    assert s.check().sat
    assert not s.is_declared("tmp")
    s.declare_reals(["tmp"])  # legal again after the pop
    with pytest.raises(SolverError):
        s.pop()


def test_nested_scopes_restore_counts(s):
    s.declare_reals(["a"])
    s.assert_formula("(> a 0)")
    base = s.assertion_count
    for i in range(3):
        s.push()
        s.assert_formula(f"(> a {i})")
    assert s.assertion_count == base + 3 and s.depth == 3
    for _ in range(3):
        s.pop()
    assert s.assertion_count == base and s.depth == 0


def test_restart_is_fresh(s):
    s.declare_reals(["a"])
    s.assert_formula("(< a a)")
    s.restart()
    assert s.alive and s.reals == []
    s.declare_reals(["a"])
    assert s.check().sat


def test_reset_keeps_options(s):
    s.declare_reals(["a"])
    s.reset()
    s.declare_reals(["a"])
    s.assert_formula("(> a 3)", label="g")
    r = s.check(["g"])
    assert r.sat and r.assignment["a"] > 3


def test_crash_is_reported(s):
    s._proc.kill()
    s._proc.wait()
    with pytest.raises(SolverCrash):
        s.check()
