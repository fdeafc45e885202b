from __future__ import annotations

import shutil
from fractions import Fraction

import numpy as np
import pytest

from sade.constraints import Vocabulary, parse_constraints
from sade.dataio import Dataset, Scaling, generate_synthetic, scale_features

HAVE_Z3 = shutil.which("z3") is not None

needs_solver = pytest.mark.skipif(not HAVE_Z3, reason="z3 executable not on PATH")


def line_dataset(xs, ys, task="binary-classification", name="out") -> Dataset:
    """One feature ``x`` already in [0, 1], unscaled, bounds (0, 1)."""
    X = np.asarray(xs, dtype=float).reshape(-1, 1)
    Y = np.asarray(ys, dtype=float).reshape(-1, 1)
    d = Dataset(X, Y, ["x"], [name], task)
    d.bounds = [(Fraction(0), Fraction(1))]
    return d


def line_constraints(text: str, d: Dataset):
    return parse_constraints(text, Vocabulary.from_dataset(d))


def synthetic(name: str, n: int, rate: float, seed: int = 0):
    """Scaled synthetic dataset, its parsed constraints and the injected violator indices."""
    syn = generate_synthetic({"name": name, "n": n, "violation_rate": rate}, seed=seed)
    d = scale_features(syn.dataset)
    return d, parse_constraints(syn.constraints, Vocabulary.from_dataset(d)), syn.violating


@pytest.fixture
def unit_vocab():
    return Vocabulary(["x"], ["out"])


@pytest.fixture
def loan_vocab():
    return Vocabulary(
        ["income", "ch=0", "ch=1"],
        ["loan"],
        {"ch": [("ch=0", "0"), ("ch=1", "1")]},
        {"income": Scaling(Fraction(0), Fraction(10000))},
    )


# --------------------------------------------------------------------------- acceptance reporting

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion.

    Call ``acceptance(ok, detail)``; the line is printed both immediately and in
    the terminal summary.
    """
    key = request.node.name

    def record(ok: bool, detail: str):
        _ACCEPTANCE[key] = (bool(ok), detail)
        print(f"\n{'PASS' if ok else 'FAIL'} {key}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")
