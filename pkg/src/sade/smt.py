"""SMT-LIB 2 session over a child solver process."""

from __future__ import annotations

import enum
import logging
import os
import select
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence

from .sexpr import String, Symbol, first_expr_end, parse_one, to_text

log = logging.getLogger(__name__)

DEFAULT_SOLVER = ("z3", "-in", "-smt2")


class SolverError(RuntimeError):
    """The solver rejected a command (parse error, bad option, ...)."""


class SolverCrash(SolverError):
    """The solver process died or stopped answering; the session is unusable."""


class Verdict(str, enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class SolverConfig:
    solver_command: Sequence[str] = DEFAULT_SOLVER
    # None skips set-logic and lets the solver pick; see README for why z3 prefers that
    logic: str | None = None
    per_check_timeout: int = 5000  # milliseconds
    decimal_precision: int = 20
    random_seed: int = 0
    timeout_option: str = ":timeout"
    # extra wall-clock slack before a silent solver is declared dead
    grace_seconds: float = 30.0

    def __post_init__(self):
        if isinstance(self.solver_command, str):
            self.solver_command = shlex.split(self.solver_command)
        self.solver_command = tuple(self.solver_command)
        if not self.solver_command:
            raise ValueError("solver_command is empty")
        if int(self.per_check_timeout) <= 0:
            raise ValueError("per_check_timeout must be a positive number of milliseconds")
        if int(self.decimal_precision) <= 0:
            raise ValueError("decimal_precision must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverConfig":
        d = dict(d or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "solver_command": list(self.solver_command),
            "logic": self.logic,
            "per_check_timeout": self.per_check_timeout,
            "decimal_precision": self.decimal_precision,
            "random_seed": self.random_seed,
            "timeout_option": self.timeout_option,
        }


@dataclass
class CheckResult:
    verdict: Verdict
    assignment: dict[str, Fraction] = field(default_factory=dict)
    # symbols whose value is a decimal approximation of an irrational number
    approximate: set[str] = field(default_factory=set)
    unsat_core: list[str] | None = None
    elapsed: float = 0.0  # milliseconds
    reason: str | None = None

    @property
    def sat(self) -> bool:
        return self.verdict is Verdict.SAT

    @property
    def unsat(self) -> bool:
        return self.verdict is Verdict.UNSAT

    @property
    def unknown(self) -> bool:
        return self.verdict is Verdict.UNKNOWN


def _value(e) -> tuple[Fraction | bool | None, bool]:
    """Decode a model value: (value, approximate). ``None`` for algebraic numbers."""
    if isinstance(e, Symbol):
        if e.name in ("true", "false"):
            return e.name == "true", False
        tok = e.name
        approx = tok.endswith("?")
        try:
            # via Decimal: Fraction(str) trips the int digit limit on very long numerals
            return Fraction(Decimal(tok.rstrip("?"))), approx
        except (ArithmeticError, ValueError):
            raise SolverError(f"cannot read value {tok!r}") from None
    if isinstance(e, list) and e and isinstance(e[0], Symbol):
        head = e[0].name
        if head == "-" and len(e) == 2:
            v, a = _value(e[1])
            return (None if v is None else -v), a
        if head == "/" and len(e) == 3:
            n, a1 = _value(e[1])
            d, a2 = _value(e[2])
            if n is None or d is None:
                return None, True
            return n / d, a1 or a2
        if head == "root-obj":
            return None, True
    raise SolverError(f"cannot read value {to_text(e)!r}")


class SolverSession:
    """One live solver process.

    Use as a context manager. Every command is answered (``:print-success``),
    so errors surface at the command that caused them.
    """

    def __init__(self, cfg: SolverConfig | None = None):
        self.cfg = cfg or SolverConfig()
        self._proc: subprocess.Popen | None = None
        self._buf = ""
        self._scopes: list[dict] = []
        self.n_checks = 0
        self._spawn()

    # ----------------------------------------------------------------- process plumbing

    def _spawn(self):
        exe = self.cfg.solver_command[0]
        if shutil.which(exe) is None and not os.path.isfile(exe):
            raise SolverCrash(f"solver executable not found: {exe!r}")
        try:
            self._proc = subprocess.Popen(
                list(self.cfg.solver_command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SolverCrash(f"cannot start solver {exe!r}: {exc}") from exc
        self._buf = ""
        self._scopes = [{"reals": [], "bools": [], "assertions": 0}]
        try:
            self._setup()
        except SolverCrash:
            self.close()
            raise
        except SolverError as exc:
            self.close()
            raise SolverCrash(f"solver rejected session setup: {exc}") from exc

    def _setup(self):
        self._raw("(set-option :print-success true)")
        self._configure()

    def _configure(self):
        self.command("(set-option :produce-models true)")
        self.command("(set-option :produce-unsat-cores true)")
        self.command(f"(set-option {self.cfg.timeout_option} {int(self.cfg.per_check_timeout)})")
        self.command(f"(set-option :random-seed {int(self.cfg.random_seed)})")
        if self.cfg.logic:
            self.command(f"(set-logic {self.cfg.logic})")

    def restart(self):
        """Kill the process and start a fresh one with the same setup."""
        self.close()
        self._spawn()

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.poll() is None:
                proc.stdin.write("(exit)\n")
                proc.stdin.flush()
                proc.wait(timeout=1)
        except (OSError, subprocess.TimeoutExpired, ValueError):
            pass
        finally:
            if proc.poll() is None:
                proc.kill()
                proc.wait()
            for stream in (proc.stdin, proc.stdout):
                try:
                    stream.close()
                except OSError:
                    pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    @property
    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def _write(self, text: str):
        if not self.alive:
            raise SolverCrash("solver process is not running")
        try:
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SolverCrash(f"solver pipe closed: {exc}") from exc

    def _read(self, wait: float) -> str:
        deadline = time.monotonic() + wait
        fd = self._proc.stdout.fileno()
        while True:
            end = first_expr_end(self._buf)
            if end is not None:
                out, self._buf = self._buf[:end], self._buf[end:].lstrip()
                return out.strip()
            left = deadline - time.monotonic()
            if left <= 0:
                self.close()
                raise SolverCrash("solver stopped responding")
            ready, _, _ = select.select([fd], [], [], left)
            if not ready:
                continue
            chunk = os.read(fd, 65536).decode()
            if not chunk:
                self.close()
                raise SolverCrash("solver process exited")
            self._buf += chunk

    def _raw(self, cmd: str, wait: float | None = None) -> str:
        self._write(cmd)
        return self._read(self.cfg.grace_seconds if wait is None else wait)

    def command(self, cmd: str, wait: float | None = None):
        """Send one command; return its parsed response (``success`` is swallowed)."""
        cmd = cmd.strip()
        if first_expr_end(cmd + " ") != len(cmd):
            # an unbalanced command would leave the solver waiting for more input
            raise SolverError(f"malformed command text: {cmd[:500]}")
        resp = self._raw(cmd, wait)
        e = parse_one(resp)
        if isinstance(e, list) and e and e[0] == "error":
            msg = e[1].value if len(e) > 1 and isinstance(e[1], String) else to_text(e)
            raise SolverError(f"{msg} -- in: {cmd[:500]}")
        if isinstance(e, Symbol) and e.name == "unsupported":
            raise SolverError(f"unsupported command: {cmd[:200]}")
        if isinstance(e, Symbol) and e.name == "success":
            return None
        return e

    # ----------------------------------------------------------------- declarations / scopes

    def _declared(self) -> set[str]:
        return {n for s in self._scopes for n in s["reals"] + s["bools"]}

    @property
    def reals(self) -> list[str]:
        return [n for s in self._scopes for n in s["reals"]]

    @property
    def depth(self) -> int:
        return len(self._scopes) - 1

    @property
    def assertion_count(self) -> int:
        return sum(s["assertions"] for s in self._scopes)

    def _declare(self, names: Iterable[str], sort: str):
        names = list(names)
        seen = self._declared()
        for n in names:
            if n in seen:
                raise SolverError(f"symbol {n!r} already declared")
            seen.add(n)
        key = "reals" if sort == "Real" else "bools"
        for n in names:
            self.command(f"(declare-const {n} {sort})")
            self._scopes[-1][key].append(n)

    def declare_reals(self, names: Iterable[str]):
        self._declare(names, "Real")

    def declare_bools(self, names: Iterable[str]):
        self._declare(names, "Bool")

    def is_declared(self, name: str) -> bool:
        return name in self._declared()

    def assert_formula(self, text: str, label: str | None = None):
        """Assert ``text``; with a label, assert ``label => text`` so it can be assumed."""
        if label is not None:
            if not self.is_declared(label):
                self.declare_bools([label])
            text = f"(=> {label} {text})"
        self.command(f"(assert {text})")
        self._scopes[-1]["assertions"] += 1

    def push(self):
        self.command("(push 1)")
        self._scopes.append({"reals": [], "bools": [], "assertions": 0})

    def pop(self):
        if self.depth == 0:
            raise SolverError("pop at scope depth 0")
        self.command("(pop 1)")
        self._scopes.pop()

    def reset(self):
        self.command("(reset)")
        self._scopes = [{"reals": [], "bools": [], "assertions": 0}]
        # reset drops options on some solvers; replay them
        self.command("(set-option :print-success true)")
        self._configure()

    # ----------------------------------------------------------------- queries

    def check(
        self,
        assumptions: Sequence[str] = (),
        *,
        want_model: bool = True,
        want_core: bool = True,
        symbols: Sequence[str] | None = None,
    ) -> CheckResult:
        """Check satisfiability under ``assumptions`` (assertion labels).

        Unknown (timeout, incompleteness) is an ordinary verdict. A Sat result
        carries values for ``symbols`` (default: every declared real).
        """
        cmd = f"(check-sat-assuming ({' '.join(assumptions)}))" if assumptions else "(check-sat)"
        wait = self.cfg.per_check_timeout / 1000.0 * 2 + self.cfg.grace_seconds
        t0 = time.monotonic()
        e = self.command(cmd, wait=wait)
        elapsed = (time.monotonic() - t0) * 1000.0
        self.n_checks += 1
        if not isinstance(e, Symbol) or e.name not in ("sat", "unsat", "unknown"):
            raise SolverError(f"unexpected check-sat answer {to_text(e) if e is not None else 'success'!r}")
        res = CheckResult(Verdict(e.name), elapsed=elapsed)
        if res.sat and want_model:
            names = self.reals if symbols is None else list(symbols)
            if names:
                res.assignment, res.approximate = self.get_values(names)
        elif res.unsat and want_core and assumptions:
            try:
                core = self.command("(get-unsat-core)")
                res.unsat_core = [str(s) for s in core] if isinstance(core, list) else []
            except SolverError:
                res.unsat_core = None
        elif res.unknown:
            # the wire protocol stays within the core command set, so no get-info here
            res.reason = "timeout" if elapsed >= self.cfg.per_check_timeout else "incomplete"
        return res

    def get_values(self, terms: Sequence[str]) -> tuple[dict, set[str]]:
        """Values of ``terms`` in the current model; irrational ones come back as decimals."""
        resp = self.command(f"(get-value ({' '.join(terms)}))")
        out: dict = {}
        approx: set[str] = set()
        missing: list[str] = []
        for term, pair in zip(terms, resp):
            v, a = _value(pair[1])
            if v is None:
                missing.append(term)
                continue
            out[term] = v
            if a:
                approx.add(term)
        if missing:
            p = int(self.cfg.decimal_precision)
            self.command("(set-option :pp.decimal true)")
            self.command(f"(set-option :pp.decimal_precision {p})")
            try:
                resp = self.command(f"(get-value ({' '.join(missing)}))")
            finally:
                self.command("(set-option :pp.decimal false)")
            for term, pair in zip(missing, resp):
                v, _ = _value(pair[1])
                if v is None:
                    raise SolverError(f"no numeric value for {term}")
                out[term] = v
                approx.add(term)
        return out, approx

    def eval_bools(self, terms: Sequence[str]) -> list[bool]:
        vals, _ = self.get_values(terms)
        return [bool(vals[t]) for t in terms]


def check_formulas(
    formulas: Sequence[str],
    reals: Sequence[str] = (),
    cfg: SolverConfig | None = None,
    bools: Sequence[str] = (),
) -> CheckResult:
    """One-shot satisfiability check in a throwaway session."""
    with SolverSession(cfg) as s:
        s.declare_reals(reals)
        s.declare_bools(bools)
        for f in formulas:
            s.assert_formula(f)
        return s.check()
