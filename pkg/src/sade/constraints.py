"""First-order domain constraints over instances and model outputs.

Concrete syntax (one constraint per top-level form, ``;`` comments)::

    (constraint deny-low-income
      (forall (x)
        (=> (and (= (feat x ch) 0) (< (feat x income) 5000))
            (< (pred x approved) 0))))

Terms: numbers, ``(feat v name)``, ``(pred v target)``, ``(sum (pred v))``,
``+ - *`` and ``/`` by a nonzero constant. Formulas: ``forall and or not =>``,
comparisons ``< <= = >= >``, ``true``/``false`` and ``(eqexcept v w name)``
which states that v and w agree on every feature except ``name``.

Features are referenced in original units; the recorded scaling of the
dataset is applied when a formula is instantiated or evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Mapping, Sequence, Union

from .sexpr import SExprSyntaxError, String, Symbol, parse_all, rational_literal
from .dataio import Dataset, Scaling, Schema

COMPARE_OPS = ("<", "<=", "=", ">=", ">")


class ConstraintError(ValueError):
    """Raised for syntax or name-resolution failures."""

    def __init__(self, message: str, errors: Sequence["Issue"] = ()):
        super().__init__(message)
        self.errors = list(errors)


@dataclass(frozen=True)
class Issue:
    kind: str  # unknown-feature | unknown-target | unbound-variable | shadowed-variable | arity
    message: str


# --------------------------------------------------------------------------- AST: terms


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Feat:
    var: str
    name: str


@dataclass(frozen=True)
class Pred:
    var: str
    name: str


@dataclass(frozen=True)
class SumPreds:
    var: str


@dataclass(frozen=True)
class Add:
    args: tuple


@dataclass(frozen=True)
class Sub:
    """``(- a)`` negates, ``(- a b c)`` is a - b - c."""

    args: tuple


@dataclass(frozen=True)
class Mul:
    args: tuple


@dataclass(frozen=True)
class Div:
    num: "Term"
    den: Const


Term = Union[Const, Feat, Pred, SumPreds, Add, Sub, Mul, Div]

# --------------------------------------------------------------------------- AST: formulas


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Compare:
    op: str
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class Implies:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class EqExcept:
    left: str
    right: str
    name: str


@dataclass(frozen=True)
class Forall:
    vars: tuple[str, ...]
    body: "Formula"


Formula = Union[BoolConst, Compare, And, Or, Not, Implies, EqExcept, Forall]


@dataclass(frozen=True)
class NamedConstraint:
    name: str
    formula: Formula


@dataclass
class ConstraintSet:
    constraints: list[NamedConstraint]
    source: str = ""

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    @property
    def formulas(self) -> list[Formula]:
        return [c.formula for c in self.constraints]

    def to_text(self) -> str:
        return "\n".join(f"(constraint {c.name} {to_text(c.formula)})" for c in self.constraints) + "\n"


# --------------------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    """Names a constraint may mention, plus the scaling back to original units."""

    features: list[str]
    targets: list[str]
    groups: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    scaling: dict[str, Scaling] = field(default_factory=dict)

    @classmethod
    def from_dataset(cls, d: Dataset) -> "Vocabulary":
        return cls(list(d.feature_names), list(d.target_names), dict(d.onehot_groups), dict(d.scaling))

    @classmethod
    def from_schema(cls, schema: Schema) -> "Vocabulary":
        features: list[str] = []
        groups: dict[str, list[tuple[str, str]]] = {}
        for c in schema.features:
            if c.kind == "numeric":
                features.append(c.name)
            else:
                if c.categories is None:
                    raise ConstraintError(f"categorical column {c.name!r} needs declared categories")
                groups[c.name] = [(f"{c.name}={v}", v) for v in c.categories]
                features.extend(col for col, _ in groups[c.name])
        if schema.task == "multiclass-classification":
            t = schema.targets[0]
            if t.categories is None:
                raise ConstraintError(f"multiclass target {t.name!r} needs declared classes")
            targets = list(t.categories)
        elif schema.task == "binary-classification":
            targets = [schema.targets[0].name]
        else:
            targets = [t.name for t in schema.targets]
        return cls(features, targets, groups)


def _as_vocab(v) -> Vocabulary:
    if isinstance(v, Vocabulary):
        return v
    if isinstance(v, Dataset):
        return Vocabulary.from_dataset(v)
    if isinstance(v, Schema):
        return Vocabulary.from_schema(v)
    raise TypeError(f"cannot derive a vocabulary from {type(v).__name__}")


# --------------------------------------------------------------------------- parsing


def _err(msg: str, node) -> SExprSyntaxError:
    if isinstance(node, list):
        node = node[0] if node and isinstance(node[0], Symbol) else None
    if isinstance(node, Symbol):
        return SExprSyntaxError(msg, node.line, node.column)
    return SExprSyntaxError(msg, 0, 0)


def _sym(node, what: str) -> str:
    if not isinstance(node, Symbol):
        raise _err(f"expected {what}", node)
    return node.name


class _Parser:
    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def formula(self, e) -> Formula:
        if isinstance(e, Symbol):
            if e.name == "true":
                return BoolConst(True)
            if e.name == "false":
                return BoolConst(False)
            raise _err(f"expected a formula, found {e.name!r}", e)
        if not isinstance(e, list) or not e:
            raise _err("expected a formula", e)
        head = _sym(e[0], "operator")
        args = e[1:]
        if head == "forall":
            if len(args) != 2 or not isinstance(args[0], list) or not args[0]:
                raise _err("forall takes a variable list and a body", e)
            return Forall(tuple(_sym(v, "variable name") for v in args[0]), self.formula(args[1]))
        if head in ("and", "or"):
            parts = tuple(self.formula(a) for a in args)
            return And(parts) if head == "and" else Or(parts)
        if head == "not":
            if len(args) != 1:
                raise _err("not takes one argument", e)
            return Not(self.formula(args[0]))
        if head == "=>":
            if len(args) != 2:
                raise _err("=> takes two arguments", e)
            return Implies(self.formula(args[0]), self.formula(args[1]))
        if head == "eqexcept":
            if len(args) != 3:
                raise _err("eqexcept takes two variables and a feature name", e)
            return EqExcept(_sym(args[0], "variable"), _sym(args[1], "variable"), _sym(args[2], "feature name"))
        if head in COMPARE_OPS:
            if len(args) != 2:
                raise _err(f"{head} takes two arguments", e)
            cat = self._categorical_test(head, args)
            if cat is not None:
                return cat
            return Compare(head, self.term(args[0]), self.term(args[1]))
        raise _err(f"unknown formula operator {head!r}", e)

    def _categorical_test(self, op, args):
        # (= (feat v group) value) on a one-hot group becomes a test on the value's column
        if op != "=":
            return None
        for a, b in (args, args[::-1]):
            if (
                isinstance(a, list)
                and len(a) == 3
                and a[0] == "feat"
                and isinstance(a[2], Symbol)
                and a[2].name in self.vocab.groups
            ):
                group = self.vocab.groups[a[2].name]
                value = b.value if isinstance(b, String) else (b.name if isinstance(b, Symbol) else None)
                if value is None:
                    raise _err(f"categorical feature {a[2].name!r} can only be compared to a category", a[0])
                for col, cat in group:
                    if cat == value or (_num(cat) is not None and _num(cat) == _num(value)):
                        return Compare("=", Feat(_sym(a[1], "variable"), col), Const(Fraction(1)))
                raise _err(f"{value!r} is not a category of {a[2].name!r}", a[0])
        return None

    def term(self, e) -> Term:
        if isinstance(e, Symbol):
            v = _num(e.name)
            if v is None:
                raise _err(f"expected a term, found {e.name!r}", e)
            return Const(v)
        if not isinstance(e, list) or not e:
            raise _err("expected a term", e)
        head = _sym(e[0], "operator")
        args = e[1:]
        if head == "feat":
            if len(args) != 2:
                raise _err("feat takes a variable and a feature name", e)
            return Feat(_sym(args[0], "variable"), _sym(args[1], "feature name"))
        if head == "pred":
            if len(args) != 2:
                raise _err("pred takes a variable and a target name", e)
            return Pred(_sym(args[0], "variable"), _sym(args[1], "target name"))
        if head == "sum":
            if len(args) != 1 or not isinstance(args[0], list) or len(args[0]) != 2 or args[0][0] != "pred":
                raise _err("sum expects (sum (pred v))", e)
            return SumPreds(_sym(args[0][1], "variable"))
        if head == "+":
            if not args:
                raise _err("+ needs arguments", e)
            return Add(tuple(self.term(a) for a in args))
        if head == "-":
            if not args:
                raise _err("- needs arguments", e)
            return Sub(tuple(self.term(a) for a in args))
        if head == "*":
            if not args:
                raise _err("* needs arguments", e)
            return Mul(tuple(self.term(a) for a in args))
        if head == "/":
            if len(args) != 2:
                raise _err("/ takes two arguments", e)
            den = self.term(args[1])
            if not isinstance(den, Const) or den.value == 0:
                raise _err("division only by a nonzero constant", e)
            return Div(self.term(args[0]), den)
        raise _err(f"unknown term operator {head!r}", e)


def _num(tok: str) -> Fraction | None:
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError, TypeError):
        return None


def _raise_if_invalid(f: Formula, vocab: Vocabulary):
    issues = validate(f, vocab)
    if issues:
        raise ConstraintError("; ".join(i.message for i in issues), issues)


def parse_constraint(text: str, vocab) -> Formula:
    """Parse one formula and resolve its names against ``vocab``."""
    vocab = _as_vocab(vocab)
    items = parse_all(text)
    if len(items) != 1:
        raise ConstraintError(f"expected one formula, found {len(items)}")
    f = _Parser(vocab).formula(items[0])
    _raise_if_invalid(f, vocab)
    return f


def parse_constraints(text: str, vocab) -> ConstraintSet:
    """Parse a constraint file: ``(constraint <name> <formula>)`` forms."""
    vocab = _as_vocab(vocab)
    parser = _Parser(vocab)
    out: list[NamedConstraint] = []
    seen = set()
    for item in parse_all(text):
        if not isinstance(item, list) or len(item) != 3 or item[0] != "constraint":
            raise _err("expected (constraint <name> <formula>)", item)
        name = _sym(item[1], "constraint name")
        if name in seen:
            raise _err(f"duplicate constraint name {name!r}", item[1])
        seen.add(name)
        f = parser.formula(item[2])
        _raise_if_invalid(f, vocab)
        out.append(NamedConstraint(name, f))
    return ConstraintSet(out, text)


def load_constraints(path, vocab) -> ConstraintSet:
    with open(path, encoding="utf-8") as fh:
        return parse_constraints(fh.read(), vocab)


BUNDLED = ("loan", "expense", "music")


def bundled_constraints(name: str) -> str:
    """Text of a constraint file shipped with the package (``loan``, ``expense``, ``music``)."""
    if name not in BUNDLED:
        raise ValueError(f"no bundled constraint file {name!r}; choose from {BUNDLED}")
    return resources.files("sade").joinpath("data", f"{name}.smt").read_text(encoding="utf-8")


# --------------------------------------------------------------------------- printing


def _const_text(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def term_text(t: Term) -> str:
    if isinstance(t, Const):
        return _const_text(t.value)
    if isinstance(t, Feat):
        return f"(feat {t.var} {t.name})"
    if isinstance(t, Pred):
        return f"(pred {t.var} {t.name})"
    if isinstance(t, SumPreds):
        return f"(sum (pred {t.var}))"
    if isinstance(t, Div):
        return f"(/ {term_text(t.num)} {term_text(t.den)})"
    op = {Add: "+", Sub: "-", Mul: "*"}[type(t)]
    return f"({op} " + " ".join(term_text(a) for a in t.args) + ")"


def to_text(f: Formula) -> str:
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Compare):
        return f"({f.op} {term_text(f.lhs)} {term_text(f.rhs)})"
    if isinstance(f, (And, Or)):
        op = "and" if isinstance(f, And) else "or"
        return f"({op}" + "".join(" " + to_text(a) for a in f.args) + ")"
    if isinstance(f, Not):
        return f"(not {to_text(f.arg)})"
    if isinstance(f, Implies):
        return f"(=> {to_text(f.lhs)} {to_text(f.rhs)})"
    if isinstance(f, EqExcept):
        return f"(eqexcept {f.left} {f.right} {f.name})"
    if isinstance(f, Forall):
        return f"(forall ({' '.join(f.vars)}) {to_text(f.body)})"
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------- validation


def _children(node):
    if isinstance(node, (Add, Sub, Mul, And, Or)):
        return node.args
    if isinstance(node, Div):
        return (node.num, node.den)
    if isinstance(node, Compare):
        return (node.lhs, node.rhs)
    if isinstance(node, Not):
        return (node.arg,)
    if isinstance(node, Implies):
        return (node.lhs, node.rhs)
    if isinstance(node, Forall):
        return (node.body,)
    return ()


def validate(f: Formula, vocab) -> list[Issue]:
    """Name resolution and scoping check; returns a (possibly empty) issue list."""
    vocab = _as_vocab(vocab)
    issues: list[Issue] = []
    features = set(vocab.features)
    targets = set(vocab.targets)

    def visit(node, bound: tuple[str, ...]):
        if isinstance(node, Forall):
            for v in node.vars:
                if v in bound or node.vars.count(v) > 1:
                    issues.append(Issue("shadowed-variable", f"variable {v!r} is quantified twice"))
            bound = bound + node.vars
        elif isinstance(node, (Feat, Pred, SumPreds)):
            if node.var not in bound:
                issues.append(Issue("unbound-variable", f"variable {node.var!r} is not bound by a forall"))
            if isinstance(node, Feat) and node.name not in features and node.name not in vocab.groups:
                issues.append(Issue("unknown-feature", f"unknown feature {node.name!r}"))
            if isinstance(node, Feat) and node.name in vocab.groups:
                issues.append(
                    Issue("arity", f"categorical feature {node.name!r} may only appear as (= (feat v {node.name}) value)")
                )
            if isinstance(node, Pred) and node.name not in targets:
                issues.append(Issue("unknown-target", f"unknown target {node.name!r}"))
        elif isinstance(node, EqExcept):
            for v in (node.left, node.right):
                if v not in bound:
                    issues.append(Issue("unbound-variable", f"variable {v!r} is not bound by a forall"))
            if node.name not in features and node.name not in vocab.groups:
                issues.append(Issue("unknown-feature", f"unknown feature {node.name!r}"))
        elif isinstance(node, Div) and (not isinstance(node.den, Const) or node.den.value == 0):
            issues.append(Issue("arity", "division only by a nonzero constant"))
        elif isinstance(node, Compare) and node.op not in COMPARE_OPS:
            issues.append(Issue("arity", f"unknown comparison {node.op!r}"))
        for c in _children(node):
            visit(c, bound)

    visit(f, ())
    return issues


def eqexcept_pairs(node: EqExcept, vocab) -> list[str]:
    """Feature columns that ``eqexcept`` equates (all but the excluded feature)."""
    vocab = _as_vocab(vocab)
    skip = {node.name}
    if node.name in vocab.groups:
        skip = {col for col, _ in vocab.groups[node.name]}
    return [c for c in vocab.features if c not in skip]


def expand_eqexcept(f: Formula, vocab) -> Formula:
    """Rewrite every ``eqexcept`` into its conjunction of feature equalities."""
    vocab = _as_vocab(vocab)

    def go(node):
        if isinstance(node, EqExcept):
            return And(
                tuple(Compare("=", Feat(node.left, c), Feat(node.right, c)) for c in eqexcept_pairs(node, vocab))
            )
        if isinstance(node, And):
            return And(tuple(go(a) for a in node.args))
        if isinstance(node, Or):
            return Or(tuple(go(a) for a in node.args))
        if isinstance(node, Not):
            return Not(go(node.arg))
        if isinstance(node, Implies):
            return Implies(go(node.lhs), go(node.rhs))
        if isinstance(node, Forall):
            return Forall(node.vars, go(node.body))
        return node

    return go(f)


def quantified_vars(f: Formula) -> list[str]:
    out: list[str] = []

    def visit(node):
        if isinstance(node, Forall):
            out.extend(node.vars)
        for c in _children(node):
            visit(c)

    visit(f)
    return out


def strip_foralls(f: Formula) -> tuple[list[str], Formula]:
    """Peel leading quantifiers: (vars, quantifier-free body)."""
    vars_: list[str] = []
    while isinstance(f, Forall):
        vars_.extend(f.vars)
        f = f.body
    return vars_, f


def mentions_pred(node) -> bool:
    if isinstance(node, (Pred, SumPreds)):
        return True
    return any(mentions_pred(c) for c in _children(node))


def is_instance_level(f: Formula) -> bool:
    """One quantified instance and no nested quantifiers."""
    vars_, body = strip_foralls(f)
    return len(vars_) == 1 and not quantified_vars(body)


# --------------------------------------------------------------------------- instantiation


def smt_symbol(var: str, i: int) -> str:
    return f"{var}_{i}"


class _Emitter:
    """Render terms/formulas as SMT-LIB given feature terms for every variable."""

    def __init__(self, vocab: Vocabulary, model, env: dict[str, list[str]], bounds=()):
        self.vocab = vocab
        self.bounds = list(bounds)
        self.model = model
        self.env = env
        self.index = {n: i for i, n in enumerate(vocab.features)}
        self.tindex = {n: k for k, n in enumerate(vocab.targets)}
        self._rows: dict[str, list[str]] = {}

    def feat(self, var: str, name: str) -> str:
        x = self.env[var][self.index[name]]
        s = self.vocab.scaling.get(name)
        if s is None:
            return x
        if s.degenerate:
            return rational_literal(s.lo)
        return f"(+ {rational_literal(s.lo)} (* {rational_literal(s.hi - s.lo)} {x}))"

    def rows(self, var: str) -> list[str]:
        if var not in self._rows:
            from .model import affine_terms

            self._rows[var] = affine_terms(self.model, self.env[var])
        return self._rows[var]

    def term(self, t: Term) -> str:
        if isinstance(t, Const):
            return rational_literal(t.value)
        if isinstance(t, Feat):
            return self.feat(t.var, t.name)
        if isinstance(t, Pred):
            return self.rows(t.var)[self.tindex[t.name]]
        if isinstance(t, SumPreds):
            rows = self.rows(t.var)
            return rows[0] if len(rows) == 1 else "(+ " + " ".join(rows) + ")"
        if isinstance(t, Div):
            return f"(/ {self.term(t.num)} {self.term(t.den)})"
        op = {Add: "+", Sub: "-", Mul: "*"}[type(t)]
        return f"({op} " + " ".join(self.term(a) for a in t.args) + ")"

    def formula(self, f: Formula) -> str:
        if isinstance(f, BoolConst):
            return "true" if f.value else "false"
        if isinstance(f, Compare):
            return f"({f.op} {self.term(f.lhs)} {self.term(f.rhs)})"
        if isinstance(f, And):
            return "(and " + " ".join(self.formula(a) for a in f.args) + ")" if f.args else "true"
        if isinstance(f, Or):
            return "(or " + " ".join(self.formula(a) for a in f.args) + ")" if f.args else "false"
        if isinstance(f, Not):
            return f"(not {self.formula(f.arg)})"
        if isinstance(f, Implies):
            return f"(=> {self.formula(f.lhs)} {self.formula(f.rhs)})"
        if isinstance(f, EqExcept):
            return self.formula(expand_eqexcept(f, self.vocab))
        if isinstance(f, Forall):
            return self.forall(f)
        raise TypeError(f"not a formula: {f!r}")

    def forall(self, f: Forall) -> str:
        d = len(self.vocab.features)
        decls, guards = [], []
        saved = {v: self.env.get(v) for v in f.vars}
        saved_rows = {v: self._rows.pop(v, None) for v in f.vars}
        for v in f.vars:
            syms = [smt_symbol(v, i) for i in range(d)]
            self.env[v] = syms
            decls.extend(f"({s} Real)" for s in syms)
            guards.extend(domain_guard(syms, self.bounds, self.vocab))
        body = self.formula(f.body)
        for v in f.vars:
            self._rows.pop(v, None)
            if saved[v] is None:
                del self.env[v]
            else:
                self.env[v] = saved[v]
            if saved_rows[v] is not None:
                self._rows[v] = saved_rows[v]
        if not decls:
            return body
        guard = "(and " + " ".join(guards) + ")" if guards else "true"
        return f"(forall ({' '.join(decls)}) (=> {guard} {body}))"


def box_guard(symbols: Sequence[str], bounds: Sequence[tuple[Fraction, Fraction]]) -> list[str]:
    out = []
    for s, (lo, hi) in zip(symbols, bounds):
        out.append(f"(<= {rational_literal(lo)} {s})")
        out.append(f"(<= {s} {rational_literal(hi)})")
    return out


def onehot_blocks(vocab) -> list[list[int]]:
    """Column indices of each one-hot group."""
    index = {n: i for i, n in enumerate(vocab.features)}
    return [[index[col] for col, _ in group] for group in vocab.groups.values()]


def domain_guard(symbols: Sequence[str], bounds: Sequence[tuple[Fraction, Fraction]], vocab=None) -> list[str]:
    """Box bounds plus, per one-hot group, the equality ``sum of its columns = 1``.

    Quantified points then range over the convex hull of valid encodings
    rather than every 0/1 combination, so a constraint about one category does
    not also restrict the weights of the others.
    """
    out = box_guard(symbols, bounds)
    if vocab is not None and len(symbols) == len(vocab.features):
        for block in onehot_blocks(vocab):
            cols = [symbols[i] for i in block]
            total = cols[0] if len(cols) == 1 else "(+ " + " ".join(cols) + ")"
            out.append(f"(= {total} 1)")
    return out


def _check_model(model, vocab: Vocabulary):
    k, d1 = model.shape
    if k != len(vocab.targets):
        raise ConstraintError(f"model has {k} outputs but the constraints know {len(vocab.targets)} targets")
    if d1 != len(vocab.features) + 1:
        raise ConstraintError(f"model expects {d1 - 1} features, vocabulary has {len(vocab.features)}")


def instantiate(f: Formula, model, bounds: Sequence[tuple[Fraction, Fraction]], vocab) -> str:
    """SMT-LIB text of ``f`` with model rows substituted for ``pred``.

    Each ``forall`` becomes a solver quantifier over fresh reals guarded by the
    box ``bounds``. ``model`` is a :class:`~sade.model.LinearModel` (weights
    appear as exact literals) or a :class:`~sade.model.SymbolicModel` (weights
    appear as free symbols).
    """
    vocab = _as_vocab(vocab)
    _check_model(model, vocab)
    if len(bounds) != len(vocab.features):
        raise ConstraintError("one (lower, upper) pair per feature is required")
    em = _Emitter(vocab, model, {}, [(Fraction(lo), Fraction(hi)) for lo, hi in bounds])
    return em.formula(f)


def instantiate_body(f: Formula, model, env: Mapping[str, Sequence[str]], vocab, bounds=()) -> str:
    """Body of ``f`` below its leading quantifiers, each variable bound to the given feature terms.

    ``bounds`` guards any quantifier nested inside the body.
    """
    vocab = _as_vocab(vocab)
    _check_model(model, vocab)
    _, body = strip_foralls(f)
    em = _Emitter(vocab, model, {k: list(v) for k, v in env.items()}, [(Fraction(a), Fraction(b)) for a, b in bounds])
    return em.formula(body)


# --------------------------------------------------------------------------- evaluation


def _compare(op: str, a, b) -> bool:
    return {"<": a < b, "<=": a <= b, "=": a == b, ">=": a >= b, ">": a > b}[op]


def eval_on_point(
    f: Formula,
    model,
    assignment: Mapping[str, Sequence],
    vocab,
    labels: Mapping[str, Sequence] | None = None,
) -> bool:
    """Truth value of the body of ``f`` with every quantified variable fixed.

    ``assignment`` maps variables to scaled feature vectors. ``pred`` reads the
    model's output, or the matching entry of ``labels`` when given
    (label-as-prediction mode; ``model`` may then be ``None``). Fractions in,
    exact arithmetic out.
    """
    vocab = _as_vocab(vocab)
    index = {n: i for i, n in enumerate(vocab.features)}
    tindex = {n: k for k, n in enumerate(vocab.targets)}
    cache: dict[str, list] = {}

    def outputs(var):
        if var not in cache:
            if var not in assignment:
                raise ConstraintError(f"variable {var!r} has no value", [Issue("unbound-variable", var)])
            if labels is not None:
                cache[var] = list(labels[var])
            else:
                cache[var] = list(model.predict_exact(assignment[var]) if _exact(assignment[var]) else model.predict(assignment[var]))
        return cache[var]

    def feat(var, name):
        if var not in assignment:
            raise ConstraintError(f"variable {var!r} has no value", [Issue("unbound-variable", var)])
        v = assignment[var][index[name]]
        s = vocab.scaling.get(name)
        return v if s is None else s.to_original(v)

    def term(t):
        if isinstance(t, Const):
            return t.value
        if isinstance(t, Feat):
            return feat(t.var, t.name)
        if isinstance(t, Pred):
            return outputs(t.var)[tindex[t.name]]
        if isinstance(t, SumPreds):
            return sum(outputs(t.var))
        if isinstance(t, Add):
            return sum((term(a) for a in t.args), Fraction(0))
        if isinstance(t, Sub):
            vals = [term(a) for a in t.args]
            return -vals[0] if len(vals) == 1 else vals[0] - sum(vals[1:])
        if isinstance(t, Mul):
            out = Fraction(1)
            for a in t.args:
                out = out * term(a)
            return out
        if isinstance(t, Div):
            num = term(t.num)
            return num / t.den.value if isinstance(num, Fraction) else num / float(t.den.value)
        raise TypeError(t)

    def form(g) -> bool:
        if isinstance(g, BoolConst):
            return g.value
        if isinstance(g, Compare):
            a, b = term(g.lhs), term(g.rhs)
            if not (isinstance(a, Fraction) and isinstance(b, Fraction)):
                a, b = float(a), float(b)
            return _compare(g.op, a, b)
        if isinstance(g, And):
            return all(form(a) for a in g.args)
        if isinstance(g, Or):
            return any(form(a) for a in g.args)
        if isinstance(g, Not):
            return not form(g.arg)
        if isinstance(g, Implies):
            return (not form(g.lhs)) or form(g.rhs)
        if isinstance(g, EqExcept):
            return form(expand_eqexcept(g, vocab))
        if isinstance(g, Forall):
            return form(g.body)
        raise TypeError(g)

    return form(f)


def _exact(xs) -> bool:
    return all(isinstance(v, (Fraction, int)) for v in xs)


def holds_for_labels(cs: ConstraintSet, x, y, vocab) -> bool:
    """Label-as-prediction check of every instance-level constraint on one example."""
    for c in cs:
        if not is_instance_level(c.formula):
            continue
        var = strip_foralls(c.formula)[0][0]
        if not eval_on_point(c.formula, None, {var: x}, vocab, labels={var: y}):
            return False
    return True

