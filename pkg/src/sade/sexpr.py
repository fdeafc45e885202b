"""Minimal s-expression reader shared by the constraint parser and the solver bridge."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union


class SExprSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Symbol:
    name: str
    line: int = 0
    column: int = 0

    def __eq__(self, other):
        if isinstance(other, Symbol):
            return self.name == other.name
        if isinstance(other, str):
            return self.name == other
        return NotImplemented

    def __hash__(self):
        return hash(self.name)

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class String:
    value: str


SExpr = Union[Symbol, String, list]


def _tokens(text: str):
    """Yield (token, line, column); ';' starts a line comment."""
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if c.isspace():
            i, col = i + 1, col + 1
            continue
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c in "()":
            yield c, line, col
            i, col = i + 1, col + 1
            continue
        if c == '"':
            j = i + 1
            buf = []
            while j < n:
                if text[j] == '"':
                    # SMT-LIB escapes a quote by doubling it
                    if j + 1 < n and text[j + 1] == '"':
                        buf.append('"')
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            if j >= n:
                raise SExprSyntaxError("unterminated string", line, col)
            yield String("".join(buf)), line, col
            consumed = text[i : j + 1]
            line += consumed.count("\n")
            col = col + len(consumed) if "\n" not in consumed else len(consumed) - consumed.rfind("\n")
            i = j + 1
            continue
        if c == "|":
            j = text.find("|", i + 1)
            if j < 0:
                raise SExprSyntaxError("unterminated quoted symbol", line, col)
            yield Symbol(text[i + 1 : j], line, col), line, col
            col += j + 1 - i
            i = j + 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in '();"':
            j += 1
        yield Symbol(text[i:j], line, col), line, col
        col += j - i
        i = j


def parse_all(text: str) -> list[SExpr]:
    """Parse every top-level s-expression in ``text``."""
    stack: list[list] = []
    opens: list[tuple[int, int]] = []
    out: list[SExpr] = []
    for tok, line, col in _tokens(text):
        if tok == "(":
            stack.append([])
            opens.append((line, col))
        elif tok == ")":
            if not stack:
                raise SExprSyntaxError("unexpected ')'", line, col)
            done = stack.pop()
            opens.pop()
            (stack[-1] if stack else out).append(done)
        else:
            (stack[-1] if stack else out).append(tok)
    if stack:
        line, col = opens[-1]
        raise SExprSyntaxError("unclosed '('", line, col)
    return out


def parse_one(text: str) -> SExpr:
    items = parse_all(text)
    if len(items) != 1:
        raise SExprSyntaxError(f"expected one s-expression, found {len(items)}", 1, 1)
    return items[0]


def first_expr_end(text: str) -> int | None:
    """Index just past the first complete top-level expression, or ``None``.

    A bare atom counts as complete only once whitespace follows it.
    """
    depth = 0
    in_str = in_bar = False
    atom = False
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if in_str:
            if c == '"':
                if i + 1 < n and text[i + 1] == '"':
                    i += 1
                else:
                    in_str = False
                    if depth == 0:
                        return i + 1
        elif in_bar:
            if c == "|":
                in_bar = False
        elif c == '"':
            in_str = True
        elif c == "|":
            in_bar = True
            atom = atom or depth == 0
        elif c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
            if depth == 0:
                return i + 1
            if depth < 0:
                return i + 1
        elif c.isspace():
            if depth == 0 and atom:
                return i
        elif depth == 0:
            atom = True
        i += 1
    return None


def to_text(e: SExpr) -> str:
    if isinstance(e, list):
        return "(" + " ".join(to_text(x) for x in e) + ")"
    if isinstance(e, String):
        return '"' + e.value.replace('"', '""') + '"'
    return e.name


def parse_numeral(tok: str) -> Fraction | None:
    """Parse an SMT-LIB numeral/decimal token; ``None`` if it is not a number."""
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError):
        return None


def rational_literal(q: Fraction) -> str:
    """Exact SMT-LIB spelling of a rational: ``2``, ``(- 2)``, ``(/ 1 3)``, ``(- (/ 1 3))``."""
    q = Fraction(q)
    mag = abs(q)
    body = str(mag.numerator) if mag.denominator == 1 else f"(/ {mag.numerator} {mag.denominator})"
    return f"(- {body})" if q < 0 else body
