"""Linear models that provably satisfy universally quantified domain constraints."""

from __future__ import annotations

__version__ = "0.1.0"

from .constraints import ConstraintSet, Vocabulary, load_constraints, parse_constraints
from .dataio import Dataset, Schema, generate_synthetic, load_csv, scale_features
from .model import LinearModel
from .smt import SolverConfig
from .trainer import TrainConfig, exact_maxsmt_train, gd_train, sade_train
from .verifier import adversity_index, find_counterexample_near, prove_admissible

__all__ = [
    "ConstraintSet",
    "Dataset",
    "LinearModel",
    "Schema",
    "SolverConfig",
    "TrainConfig",
    "Vocabulary",
    "adversity_index",
    "exact_maxsmt_train",
    "find_counterexample_near",
    "gd_train",
    "generate_synthetic",
    "load_constraints",
    "load_csv",
    "parse_constraints",
    "prove_admissible",
    "sade_train",
    "scale_features",
]
