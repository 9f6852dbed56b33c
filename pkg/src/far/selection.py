"""Penalty-level selection on a fitted path: held-out validation or k-fold CV."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from far.linear_far import FitPath, factorize, lambda_grid, lambda_max, lambda_path, predict_linear
from far.penalty import Penalty

MODES = ("validation", "cv")
TIE_BREAKS = ("sparsest", "densest")


@dataclass(frozen=True)
class TuningRule:
    """How to choose lambda (and which basis dimensions to search)."""

    mode: str = "validation"
    k: int = 20
    q_candidates: tuple = (5, 6, 7, 8, 9, 10)
    d_candidates: tuple = (5, 6, 7, 8, 9, 10)
    tie_break: str = "sparsest"
    n_lambda: int = 100
    ratio: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown tuning mode {self.mode!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie-break {self.tie_break!r}")
        if self.mode == "cv" and self.k < 2:
            raise ValueError("k-fold CV needs k >= 2")
        if not self.q_candidates or not self.d_candidates:
            raise ValueError("candidate dimension lists must be nonempty")
        if self.n_lambda < 2:
            raise ValueError("n_lambda must be at least 2")


def select_index(errors, tie_break: str = "sparsest") -> int:
    """Argmin over a decreasing-lambda error curve with an explicit tie rule."""
    errors = np.asarray(errors, dtype=float)
    hits = np.flatnonzero(errors == np.min(errors))
    return int(hits[0] if tie_break == "sparsest" else hits[-1])


def kfold_indices(n: int, k: int, rng: np.random.Generator) -> list:
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if k > n:
        raise ValueError(f"cannot split {n} observations into {k} folds")
    if k < 2:
        raise ValueError("k-fold CV needs k >= 2")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


@dataclass
class PathSelection:
    path: FitPath
    index: int
    errors: np.ndarray
    fold_errors: np.ndarray | None = field(default=None, repr=False)

    @property
    def model(self):
        return self.path.models[self.index]

    @property
    def lam(self) -> float:
        return float(self.path.lambdas[self.index])


def validation_errors(path: FitPath, val_designs, val_y) -> np.ndarray:
    val_y = np.asarray(val_y, dtype=float)
    return np.array([np.mean((val_y - predict_linear(m, val_designs)) ** 2) for m in path.models])


def path_select(
    designs,
    y,
    penalty: Penalty,
    rule: TuningRule,
    *,
    response_mean: float = 0.0,
    val_designs=None,
    val_y=None,
    folds=None,
    factors=None,
    max_sweeps: int = 1000,
) -> PathSelection:
    """Fit a lambda path on ``designs`` and pick the level the rule prefers.

    Validation mode scores each model on ``(val_designs, val_y)``; ``val_y`` is
    on the raw (uncentred) scale. CV mode refits the path on every training
    fold with a shared grid whose first level empties every fold model.
    """
    y = np.asarray(y, dtype=float)
    factors = factors if factors is not None else [factorize(D) for D in designs]
    if rule.mode == "validation":
        if val_designs is None or val_y is None:
            raise ValueError("validation mode needs validation designs and responses")
        path = lambda_path(
            None, y, penalty, rule.n_lambda, ratio=rule.ratio, factors=factors,
            response_mean=response_mean, max_sweeps=max_sweeps,
        )
        errors = validation_errors(path, val_designs, val_y)
        return PathSelection(path, select_index(errors, rule.tie_break), errors)

    n = y.size
    if folds is None:
        folds = kfold_indices(n, rule.k, np.random.default_rng(rule.seed))
    designs = [np.asarray(D, dtype=float) for D in designs]
    yraw = y + response_mean
    fold_sets = []
    top = lambda_max(y=y, factors=factors)
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        ytr = yraw[train]
        mean_tr = float(ytr.mean())
        ftr = [factorize(D[train]) for D in designs]
        top = max(top, lambda_max(y=ytr - mean_tr, factors=ftr))
        fold_sets.append((train, test, ftr, ytr - mean_tr, mean_tr))
    lambdas = lambda_grid(top, rule.n_lambda, rule.ratio)

    fold_errors = np.empty((len(folds), lambdas.size))
    for f, (train, test, ftr, yc, mean_tr) in enumerate(fold_sets):
        path = lambda_path(
            None, yc, penalty, lambdas=lambdas, factors=ftr, response_mean=mean_tr, max_sweeps=max_sweeps
        )
        fold_errors[f] = validation_errors(path, [D[test] for D in designs], yraw[test])
    errors = fold_errors.mean(axis=0)
    path = lambda_path(
        None, y, penalty, lambdas=lambdas, factors=factors, response_mean=response_mean, max_sweeps=max_sweeps
    )
    return PathSelection(path, select_index(errors, rule.tie_break), errors, fold_errors)
