"""Quantifier-free encoding of linear domain constraints via Farkas/Motzkin multipliers.

A constraint ``forall z in box: body`` whose atoms are linear in the
quantified coordinates ``z`` (coefficients affine in the symbolic weights)
is brought into CNF. Each clause reads "premise(z) implies conclusion(w, z)",
where the premise holds only weight-free atoms and the conclusion is at most
one weighted atom. The premise polyhedron does not depend on the weights, so
its emptiness is settled once up front. For a non-empty premise the
transposition theorem turns the universal statement into an existential
one over non-negative multipliers, linear in weights and multipliers
together. The result is equivalent to the quantified original (no
approximation) and is much easier on the solver during training.

Anything outside this fragment raises :class:`NotDualizable`; callers fall
back to the quantified encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .constraints import (
    Add,
    And,
    BoolConst,
    Compare,
    Const,
    Div,
    EqExcept,
    Feat,
    Forall,
    Formula,
    Implies,
    Mul,
    Not,
    Or,
    Pred,
    Sub,
    SumPreds,
    Vocabulary,
    _as_vocab,
    expand_eqexcept,
    onehot_blocks,
    quantified_vars,
    strip_foralls,
)
from .model import SymbolicModel
from .sexpr import rational_literal

MAX_CLAUSES = 256


class NotDualizable(ValueError):
    pass


# --------------------------------------------------------------------------- linear forms

# affine expression in the weights: symbol -> coefficient, None -> constant
Aff = dict


def _aff_add(a: Aff, b: Aff, scale: Fraction = Fraction(1)) -> Aff:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, Fraction(0)) + scale * v
        if out[k] == 0:
            del out[k]
    return out


def _aff_scale(a: Aff, c: Fraction) -> Aff:
    return {k: v * c for k, v in a.items() if v * c != 0}


@dataclass
class Lin:
    """sum_j coef[j] * z_j + const, every coefficient affine in the weights."""

    coef: dict[int, Aff] = field(default_factory=dict)
    const: Aff = field(default_factory=dict)

    def add(self, other: "Lin", scale: Fraction = Fraction(1)) -> "Lin":
        coef = dict(self.coef)
        for j, a in other.coef.items():
            coef[j] = _aff_add(coef.get(j, {}), a, scale)
            if not coef[j]:
                del coef[j]
        return Lin(coef, _aff_add(self.const, other.const, scale))

    def scale(self, c: Fraction) -> "Lin":
        return Lin({j: _aff_scale(a, c) for j, a in self.coef.items() if c != 0}, _aff_scale(self.const, c))

    def scalar(self) -> Fraction | None:
        """The value if this is a plain number."""
        if self.coef or any(k is not None for k in self.const):
            return None
        return self.const.get(None, Fraction(0))

    @property
    def weighted(self) -> bool:
        return any(k is not None for a in (*self.coef.values(), self.const) for k in a)


class _Linearizer:
    def __init__(self, vocab: Vocabulary, sym: SymbolicModel, slots: dict[str, int]):
        self.vocab = vocab
        self.sym = sym
        self.d = len(vocab.features)
        self.slots = slots  # quantified variable -> block offset in z
        self.index = {n: i for i, n in enumerate(vocab.features)}
        self.tindex = {n: k for k, n in enumerate(vocab.targets)}

    def pred(self, var: str, k: int) -> Lin:
        base = self.slots[var]
        coef = {base + i: {self.sym.symbol(k, i): Fraction(1)} for i in range(self.d)}
        return Lin(coef, {self.sym.symbol(k, self.d): Fraction(1)})

    def term(self, t) -> Lin:
        if isinstance(t, Const):
            return Lin({}, {None: Fraction(t.value)} if t.value else {})
        if isinstance(t, Feat):
            j = self.slots[t.var] + self.index[t.name]
            s = self.vocab.scaling.get(t.name)
            if s is None:
                return Lin({j: {None: Fraction(1)}}, {})
            if s.degenerate:
                return Lin({}, {None: s.lo} if s.lo else {})
            return Lin({j: {None: s.hi - s.lo}}, {None: s.lo} if s.lo else {})
        if isinstance(t, Pred):
            return self.pred(t.var, self.tindex[t.name])
        if isinstance(t, SumPreds):
            out = Lin()
            for k in range(len(self.vocab.targets)):
                out = out.add(self.pred(t.var, k))
            return out
        if isinstance(t, Add):
            out = Lin()
            for a in t.args:
                out = out.add(self.term(a))
            return out
        if isinstance(t, Sub):
            parts = [self.term(a) for a in t.args]
            if len(parts) == 1:
                return parts[0].scale(Fraction(-1))
            out = parts[0]
            for p in parts[1:]:
                out = out.add(p, Fraction(-1))
            return out
        if isinstance(t, Mul):
            acc = Lin({}, {None: Fraction(1)})
            for a in t.args:
                p = self.term(a)
                c_acc, c_p = acc.scalar(), p.scalar()
                if c_p is not None:
                    acc = acc.scale(c_p)
                elif c_acc is not None:
                    acc = p.scale(c_acc)
                else:
                    raise NotDualizable("product of two non-constant terms")
            return acc
        if isinstance(t, Div):
            return self.term(t.num).scale(1 / Fraction(t.den.value))
        raise NotDualizable(f"unsupported term {type(t).__name__}")


# --------------------------------------------------------------------------- CNF

# an atom is (lin, strict): lin < 0 when strict, lin <= 0 otherwise


def _atoms(cmp: Compare, lz: _Linearizer, positive: bool) -> list[list[tuple[Lin, bool]]]:
    """CNF (list of clauses) of ``cmp`` or its negation."""
    diff = lz.term(cmp.lhs).add(lz.term(cmp.rhs), Fraction(-1))  # lhs - rhs
    neg = diff.scale(Fraction(-1))
    op = cmp.op
    if not positive:
        op = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "=": "!="}[op]
    if op == "<":
        return [[(diff, True)]]
    if op == "<=":
        return [[(diff, False)]]
    if op == ">":
        return [[(neg, True)]]
    if op == ">=":
        return [[(neg, False)]]
    if op == "=":
        return [[(diff, False)], [(neg, False)]]
    return [[(diff, True), (neg, True)]]  # !=


def _cnf(f: Formula, lz: _Linearizer, positive: bool = True) -> list[list[tuple[Lin, bool]]]:
    if isinstance(f, BoolConst):
        return [] if f.value == positive else [[]]
    if isinstance(f, Compare):
        return _atoms(f, lz, positive)
    if isinstance(f, Not):
        return _cnf(f.arg, lz, not positive)
    if isinstance(f, EqExcept):
        return _cnf(expand_eqexcept(f, lz.vocab), lz, positive)
    if isinstance(f, Implies):
        return _cnf(Or((Not(f.lhs), f.rhs)), lz, positive)
    if isinstance(f, (And, Or)):
        conj = isinstance(f, And) == positive
        parts = [_cnf(a, lz, positive) for a in f.args]
        if conj:
            out = [c for p in parts for c in p]
        else:
            out = [[]]
            for p in parts:
                out = [a + b for a in out for b in p]
                if len(out) > MAX_CLAUSES:
                    raise NotDualizable("CNF too large")
        if len(out) > MAX_CLAUSES:
            raise NotDualizable("CNF too large")
        return out
    if isinstance(f, Forall):
        raise NotDualizable("nested quantifier")
    raise NotDualizable(f"unsupported formula {type(f).__name__}")


# --------------------------------------------------------------------------- clauses


@dataclass
class Row:
    """a . z <= b (or < b when strict); weight-free."""

    a: dict[int, Fraction]
    b: Fraction
    strict: bool


@dataclass
class Clause:
    premise: list[Row]
    conclusion: tuple[Lin, bool] | None  # weighted atom, or None for "false"


def _premise_row(lin: Lin, strict: bool) -> Row:
    # the literal (lin < 0 / lin <= 0) is false, so -lin <= 0 / -lin < 0 holds
    a = {j: -c.get(None, Fraction(0)) for j, c in lin.coef.items()}
    b = lin.const.get(None, Fraction(0))
    return Row({j: v for j, v in a.items() if v}, b, not strict)


@dataclass
class Dualized:
    """Quantifier-free clauses of one constraint, ready for emission."""

    clauses: list[Clause]
    n_vars: int  # number of z coordinates
    box: list[tuple[Fraction, Fraction]]
    # coordinate blocks whose sum is pinned to 1 (one-hot groups of each variable)
    simplex: list[list[int]] = field(default_factory=list)

    def box_rows(self) -> list[Row]:
        """Rows of the quantified domain: the box and the one-hot simplex equalities."""
        rows = []
        for j, (lo, hi) in enumerate(self.box):
            rows.append(Row({j: Fraction(1)}, hi, False))
            rows.append(Row({j: Fraction(-1)}, -lo, False))
        for block in self.simplex:
            rows.append(Row({j: Fraction(1) for j in block}, Fraction(1), False))
            rows.append(Row({j: Fraction(-1) for j in block}, Fraction(-1), False))
        return rows


def dualize(f: Formula, sym: SymbolicModel, bounds: Sequence[tuple[Fraction, Fraction]], vocab) -> Dualized:
    vocab = _as_vocab(vocab)
    vars_, body = strip_foralls(f)
    if quantified_vars(body):
        raise NotDualizable("quantifier below the top level")
    d = len(vocab.features)
    if len(bounds) != d:
        raise NotDualizable("one (lower, upper) pair per feature is required")
    slots = {v: i * d for i, v in enumerate(vars_)}
    lz = _Linearizer(vocab, sym, slots)
    clauses = []
    for lits in _cnf(body, lz):
        premise, concl = [], []
        for lin, strict in lits:
            (concl if lin.weighted else premise).append((lin, strict))
        if len(concl) > 1:
            raise NotDualizable("clause with more than one weighted atom")
        rows = []
        trivially_true = False
        for lin, strict in premise:
            if not lin.coef:
                c = lin.const.get(None, Fraction(0))
                if (c < 0) if strict else (c <= 0):
                    trivially_true = True  # literal holds everywhere
                    break
                continue  # literal false everywhere: contributes nothing
            rows.append(_premise_row(lin, strict))
        if not trivially_true:
            clauses.append(Clause(rows, concl[0] if concl else None))
    box = [(Fraction(lo), Fraction(hi)) for _ in vars_ for lo, hi in bounds]
    simplex = [[i * d + j for j in block] for i in range(len(vars_)) for block in onehot_blocks(vocab)]
    return Dualized(clauses, len(vars_) * d, box, simplex)


# --------------------------------------------------------------------------- emission


def _aff_text(a: Aff) -> str:
    parts = []
    for k, v in sorted(a.items(), key=lambda kv: (kv[0] is not None, kv[0] or "")):
        if k is None:
            parts.append(rational_literal(v))
        elif v == 1:
            parts.append(k)
        else:
            parts.append(f"(* {rational_literal(v)} {k})")
    if not parts:
        return "0"
    return parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"


def _sum(terms: list[str]) -> str:
    if not terms:
        return "0"
    return terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"


def _scaled(c: Fraction, v: str) -> str:
    return v if c == 1 else f"(* {rational_literal(c)} {v})"


def premise_text(rows: Sequence[Row], zs: Sequence[str]) -> str:
    """Weight-free premise as SMT text over the given coordinate symbols."""
    parts = []
    for r in rows:
        lhs = _sum([_scaled(c, zs[j]) for j, c in sorted(r.a.items())])
        parts.append(f"({'<' if r.strict else '<='} {lhs} {rational_literal(r.b)})")
    return "(and " + " ".join(parts) + ")" if parts else "true"


@dataclass
class Encoding:
    formula: str
    multipliers: list[str]


def emit(dz: Dualized, prefix: str, feasible: Sequence[bool]) -> Encoding:
    """Quantifier-free text; ``feasible[i]`` says whether clause i's premise (with the box) is non-empty."""
    parts, mults = [], []
    box_rows = dz.box_rows()
    for ci, (cl, ok) in enumerate(zip(dz.clauses, feasible)):
        if not ok:
            continue  # premise never holds
        if cl.conclusion is None:
            return Encoding("false", [])
        rows = box_rows + cl.premise
        names = [f"{prefix}_{ci}_{r}" for r in range(len(rows))]
        mults.extend(names)
        lin, strict = cl.conclusion
        # conclusion lin = g . z + h  (< 0 if strict, <= 0 otherwise)
        conj = [f"(<= 0 {m})" for m in names]
        for j in range(dz.n_vars):
            lhs = _sum([_scaled(r.a[j], m) for r, m in zip(rows, names) if j in r.a])
            conj.append(f"(= {lhs} {_aff_text(lin.coef.get(j, {}))})")
        rhs = _sum([_scaled(r.b, m) for r, m in zip(rows, names) if r.b != 0] + [_aff_text(lin.const)])
        if not strict:
            conj.append(f"(<= {rhs} 0)")
        else:
            strict_ms = [m for r, m in zip(rows, names) if r.strict]
            if strict_ms:
                conj.append(f"(or (< {rhs} 0) (and (<= {rhs} 0) (< 0 {_sum(strict_ms)})))")
            else:
                conj.append(f"(< {rhs} 0)")
        parts.append("(and " + " ".join(conj) + ")")
    if not parts:
        return Encoding("true", [])
    return Encoding(parts[0] if len(parts) == 1 else "(and " + " ".join(parts) + ")", mults)


def premise_queries(dz: Dualized, prefix: str) -> list[tuple[list[str], str]]:
    """Per clause: (coordinate symbols, SMT text of box and premise) for a feasibility check."""
    zs = [f"{prefix}_z{j}" for j in range(dz.n_vars)]
    out = []
    box = premise_text(dz.box_rows(), zs)
    for cl in dz.clauses:
        out.append((zs, f"(and {box} {premise_text(cl.premise, zs)})"))
    return out


def encode_constraints(constraints, sym: SymbolicModel, bounds, vocab, session) -> tuple[list[str], list[str], list[str]]:
    """Quantifier-free hard constraints plus multiplier symbols.

    Returns ``(formulas, multipliers, fallbacks)``: constraints outside the
    linear fragment are returned by name in ``fallbacks`` and left for the caller.
    ``session`` decides premise feasibility.
    """
    formulas, mults, fallbacks = [], [], []
    for ci, c in enumerate(constraints):
        try:
            dz = dualize(c.formula, sym, bounds, vocab)
        except NotDualizable:
            fallbacks.append(c.name)
            continue
        feasible = []
        for zs, text in premise_queries(dz, f"fz{ci}"):
            session.push()
            try:
                session.declare_reals(zs)
                session.assert_formula(text)
                r = session.check(want_model=False)
            finally:
                session.pop()
            if r.unknown:
                fallbacks.append(c.name)
                break
            feasible.append(r.sat)
        else:
            enc = emit(dz, f"fm{ci}", feasible)
            formulas.append(enc.formula)
            mults.extend(enc.multipliers)
    return formulas, mults, fallbacks


__all__ = ["NotDualizable", "dualize", "emit", "encode_constraints", "premise_queries"]
