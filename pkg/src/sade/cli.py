"""``sade`` command line: train, exact-train, verify, adi, eval, cv, synth.

Every subcommand reads one YAML config (``--config``); flags override it.
Relative paths inside the config resolve against the config file's folder.
Reports are JSON files in ``--out``; failures print a JSON error object on
stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import yaml

from . import __version__
from .constraints import ConstraintError, ConstraintSet, Vocabulary, load_constraints
from .dataio import (
    DataError,
    Dataset,
    Schema,
    apply_scaling,
    compute_bounds,
    generate_synthetic,
    load_csv,
    scale_features,
    scaling_from_dict,
    scaling_to_dict,
    write_csv,
)
from .evalharness import EvalError, cross_validate, evaluate
from .model import LinearModel
from .sexpr import SExprSyntaxError
from .smt import SolverConfig, SolverError
from .trainer import NoAdmissibleModel, TrainConfig, TrainingError, exact_maxsmt_train, sade_train
from .verifier import adversity_index, prove_admissible

log = logging.getLogger("sade")

EXIT_OK = 0
EXIT_FAIL = 1  # ran, but the outcome is negative (e.g. no proof)
EXIT_ERROR = 2  # bad input or internal failure


class ConfigError(ValueError):
    pass


class RunConfig:
    """Parsed config file plus command-line overrides."""

    def __init__(self, raw: dict, base: Path, args: argparse.Namespace):
        self.raw = raw
        self.base = base
        self.out = Path(args.out or raw.get("out", "out"))
        self.seed = args.seed if args.seed is not None else raw.get("seed", 0)
        self.jobs = args.jobs or raw.get("jobs", 1)
        train = dict(raw.get("train") or {})
        train.setdefault("seed", self.seed)
        if args.seed is not None:
            train["seed"] = args.seed
        try:
            self.train = TrainConfig.from_dict(train)
            solver = dict(raw.get("solver") or {})
            if args.solver:
                solver["solver_command"] = args.solver
            self.solver = SolverConfig.from_dict(solver)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def path(self, key: str, required: bool = True) -> Path | None:
        v = self.raw.get(key)
        if v is None:
            if required:
                raise ConfigError(f"config is missing {key!r}")
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p

    def schema(self) -> Schema:
        s = self.raw.get("schema")
        if s is None:
            raise ConfigError("config is missing 'schema'")
        if isinstance(s, str):
            p = Path(s) if Path(s).is_absolute() else self.base / s
            s = _read_yaml(p)
        try:
            return Schema.from_dict(s)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schema: {exc}") from exc


def _read_yaml(path: Path) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=str)


def _train_data(cfg: RunConfig) -> tuple[Dataset, ConstraintSet]:
    d = load_csv(cfg.path("data"), cfg.schema())
    if cfg.raw.get("scale", True):
        d = scale_features(d)
    d.bounds = compute_bounds(d, cfg.raw.get("bounds"))
    cs = load_constraints(cfg.path("constraints"), Vocabulary.from_dataset(d))
    return d, cs


def _save_model(path: Path, model: LinearModel, d: Dataset) -> None:
    out = model.to_dict()
    out["preprocessing"] = {
        "scaling": scaling_to_dict(d.scaling),
        "bounds": [[str(lo), str(hi)] for lo, hi in d.bounds],
    }
    _write_json(path, out)


def _load_model(cfg: RunConfig):
    path = cfg.path("model")
    if not path.is_file():
        raise FileNotFoundError(f"no such model file: {path}")
    with path.open(encoding="utf-8") as fh:
        raw = json.load(fh)
    pre = raw.get("preprocessing") or {}
    scaling = scaling_from_dict(pre.get("scaling", {}))
    bounds = [(Fraction(lo), Fraction(hi)) for lo, hi in pre["bounds"]] if "bounds" in pre else None
    return LinearModel.from_dict(raw), scaling, bounds


def _model_data(cfg: RunConfig, key: str = "data"):
    """Model plus a dataset (``key``) preprocessed the way the model was trained."""
    model, scaling, bounds = _load_model(cfg)
    d = apply_scaling(load_csv(cfg.path(key), cfg.schema()), scaling, bounds)
    if bounds is None:
        d.bounds = compute_bounds(d, cfg.raw.get("bounds"))
    if list(model.feature_names) and list(model.feature_names) != list(d.feature_names):
        raise ConfigError("model features do not match the dataset encoding")
    cs = load_constraints(cfg.path("constraints"), Vocabulary.from_dataset(d))
    return model, d, cs


# --------------------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig) -> int:
    d, cs = _train_data(cfg)
    bundle = sade_train(d, cs, cfg.train, cfg.solver)
    cert = prove_admissible(bundle.model, cs, d.bounds, d, cfg.solver)
    bundle.certificate = cert.to_dict(Vocabulary.from_dataset(d))
    _save_model(cfg.out / "model.json", bundle.model, d)
    _write_json(cfg.out / "run_report.json", bundle.report())
    _write_json(cfg.out / "certificate.json", bundle.certificate)
    _emit({"command": "train", "certificate": cert.status.value, "best_loss": bundle.best.loss, "out": str(cfg.out)})
    return EXIT_OK if cert.proven else EXIT_FAIL


def cmd_exact_train(cfg: RunConfig) -> int:
    d, cs = _train_data(cfg)
    res = exact_maxsmt_train(d, cs, cfg.train, cfg.solver)
    cert = prove_admissible(res.model, cs, d.bounds, d, cfg.solver)
    _save_model(cfg.out / "model.json", res.model, d)
    report = {
        "satisfied_soft": res.satisfied_soft,
        "n_soft": res.n_soft,
        "rounds": res.result.rounds,
        "elapsed_ms": res.result.elapsed,
        "certificate": cert.to_dict(Vocabulary.from_dataset(d)),
    }
    _write_json(cfg.out / "run_report.json", report)
    _emit({"command": "exact-train", "certificate": cert.status.value, "satisfied_soft": res.satisfied_soft})
    return EXIT_OK if cert.proven else EXIT_FAIL


def cmd_verify(cfg: RunConfig) -> int:
    model, d, cs = _model_data(cfg)
    v = prove_admissible(model, cs, d.bounds, d, cfg.solver)
    _write_json(cfg.out / "certificate.json", v.to_dict(Vocabulary.from_dataset(d)))
    _emit({"command": "verify", "status": v.status.value})
    return EXIT_OK if v.proven else EXIT_FAIL


def cmd_adi(cfg: RunConfig) -> int:
    model, d, cs = _model_data(cfg)
    deltas = cfg.raw.get("deltas", [0.01, 0.1])
    if not isinstance(deltas, list):
        deltas = [deltas]
    vocab = Vocabulary.from_dataset(d)
    reports = []
    for delta in deltas:
        try:
            rep = adversity_index(model, cs, d, delta, d.bounds, cfg.solver, jobs=cfg.jobs)
        except ValueError as exc:
            raise ConfigError(f"delta {delta!r}: {exc}") from exc
        reports.append(rep.to_dict(vocab))
    _write_json(cfg.out / "adi.json", {"reports": reports})
    _emit({"command": "adi", "adi": {str(r["delta"]): r["adi"] for r in reports}})
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    key = "test" if "test" in cfg.raw else "data"
    model, d, cs = _model_data(cfg, key)
    rep = evaluate(model, d, cs)
    _write_json(cfg.out / "eval.json", rep.to_dict())
    _emit({"command": "eval", **rep.to_dict()})
    return EXIT_OK


def cmd_cv(cfg: RunConfig) -> int:
    d, cs = _train_data(cfg)
    cv = dict(cfg.raw.get("cv") or {})
    grid = cv.get("grid") or {"alpha": [0.5, 1.0, 2.0]}
    res = cross_validate(
        d,
        cs,
        grid,
        k=int(cv.get("k", 5)),
        seed=cfg.seed,
        method=cv.get("method", "sade"),
        base=cfg.train,
        solver=cfg.solver,
        jobs=cfg.jobs,
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    res.write_json(cfg.out / "cv.json")
    res.write_csv(cfg.out / "cv.csv")
    _emit({"command": "cv", "selected": res.selected, "rule": res.rule})
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    spec = cfg.raw.get("synth")
    if not isinstance(spec, dict):
        raise ConfigError("config is missing the 'synth' mapping")
    syn = generate_synthetic(spec, cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.out / "data.csv", syn.rows, syn.schema)
    (cfg.out / "constraints.smt").write_text(syn.constraints, encoding="utf-8")
    with (cfg.out / "schema.yaml").open("w", encoding="utf-8") as fh:
        yaml.safe_dump(syn.schema.to_dict(), fh, sort_keys=False)
    _write_json(cfg.out / "synth.json", {"spec": spec, "seed": cfg.seed, "violating_rows": syn.violating})
    _emit({"command": "synth", "rows": len(syn.rows), "violating": len(syn.violating), "out": str(cfg.out)})
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "exact-train": cmd_exact_train,
    "verify": cmd_verify,
    "adi": cmd_adi,
    "eval": cmd_eval,
    "cv": cmd_cv,
    "synth": cmd_synth,
}


def _emit(obj) -> None:
    print(json.dumps(obj, default=str))


def _error(kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sade", description="Train linear models that provably satisfy domain constraints.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--out", help="output directory (overrides config)")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int)
        s.add_argument("--solver", help="solver command line, e.g. 'z3 -in -smt2'")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg_path = Path(args.config)
        cfg = RunConfig(_read_yaml(cfg_path), cfg_path.parent, args)
        return COMMANDS[args.command](cfg)
    except NoAdmissibleModel as exc:
        return _error("no-admissible-model", exc)
    except FileNotFoundError as exc:
        return _error("file-not-found", exc)
    except (ConstraintError, SExprSyntaxError) as exc:
        return _error("constraint-error", exc)
    except (DataError, ConfigError, EvalError, TrainingError, yaml.YAMLError) as exc:
        return _error("invalid-input", exc)
    except SolverError as exc:
        return _error("solver-error", exc)


if __name__ == "__main__":
    sys.exit(main())
