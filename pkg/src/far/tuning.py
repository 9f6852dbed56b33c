"""Choose lambda and basis dimensions by validation error or k-fold CV."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from far.basis import BasisSystem, FunctionalDataset, make_basis, project_all
from far.nonlinear_far import fit_nonlinear
from far.penalty import Penalty
from far.selection import TuningRule, kfold_indices, path_select


@dataclass
class TuningReport:
    lam: float
    q: int
    d: int | None
    cells: list = field(repr=False)
    lambdas: np.ndarray = field(repr=False)
    errors: np.ndarray = field(repr=False)
    fold_errors: dict = field(default_factory=dict, repr=False)
    mode: str = "validation"
    method: str = "linear"
    model: object = field(default=None, repr=False)
    basis: BasisSystem | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "method": self.method,
            "chosen": {"lambda": self.lam, "q": self.q, "d": self.d},
            "cells": [{"q": q, "d": d} for q, d in self.cells],
            "lambdas": self.lambdas.tolist(),
            "errors": self.errors.tolist(),
            "fold_errors": {f"{q},{d}": np.asarray(v).tolist() for (q, d), v in self.fold_errors.items()},
        }


def argmin_cell(errors: np.ndarray, lambdas: np.ndarray, tie_break: str = "sparsest") -> tuple[int, int]:
    """Minimum of an error surface; ties go to the larger lambda (or smaller, if densest), then earlier cell."""
    best = np.min(errors)
    rows, cols = np.nonzero(errors == best)
    lam = lambdas[rows, cols]
    pick = np.argmax(lam) if tie_break == "sparsest" else np.argmin(lam)
    hits = np.flatnonzero(lam == lam[pick])
    return int(rows[hits[0]]), int(cols[hits[0]])


def _cells(rule: TuningRule, method: str):
    if method == "linear":
        return [(int(q), None) for q in rule.q_candidates]
    return [(int(q), int(d)) for q in rule.q_candidates for d in rule.d_candidates]


def _tune(train, valid, rule, method, penalty, basis_kind):
    if method not in ("linear", "nonlinear"):
        raise ValueError(f"unknown method {method!r}")
    if valid is not None and not train.grid.same_as(valid.grid):
        raise ValueError("training and validation grids differ")
    cells = _cells(rule, method)
    folds = None
    if rule.mode == "cv":
        folds = kfold_indices(train.n, rule.k, np.random.default_rng(rule.seed))
    bases, fits, errs, lams, fold_errs = {}, [], [], [], {}
    for q, d in cells:
        if q not in bases:
            bases[q] = make_basis(basis_kind, q, train.grid)
        basis = bases[q]
        spec = {"kind": basis_kind, "q": q, "grid": train.grid.points.tolist()}
        th = project_all(train, basis)
        vth = project_all(valid, basis) if valid is not None else None
        vy = valid.raw_response if valid is not None else None
        if method == "linear":
            sel = path_select(
                list(th), train.response, penalty, rule,
                response_mean=train.response_mean,
                val_designs=None if vth is None else list(vth), val_y=vy, folds=folds,
            )
            model = sel.model
            model.basis = spec
            errors, lambdas = sel.errors, sel.path.lambdas
            if sel.fold_errors is not None:
                fold_errs[(q, d)] = sel.fold_errors
        else:
            model = fit_nonlinear(
                th, train.response, penalty, d, rule,
                response_mean=train.response_mean, val_scores=vth, val_y=vy, basis=spec,
            )
            errors, lambdas = model.val_errors, model.lambdas
        fits.append(model)
        errs.append(errors)
        lams.append(lambdas)
    errors = np.array(errs)
    lambdas = np.array(lams)
    row, col = argmin_cell(errors, lambdas, rule.tie_break)
    q, d = cells[row]
    model = fits[row]
    return TuningReport(
        float(lambdas[row, col]), q, d, cells, lambdas, errors, fold_errs,
        rule.mode, method, model, bases[q],
    )


def tune_validation(
    train: FunctionalDataset,
    valid: FunctionalDataset,
    rule: TuningRule,
    method: str = "linear",
    penalty: Penalty | None = None,
    basis_kind: str = "spline",
) -> TuningReport:
    """Fit on ``train`` for every candidate cell and score on ``valid``.

    Validation responses are only read when scoring, never while fitting a
    linear path.
    """
    if rule.mode != "validation":
        rule = TuningRule(**{**rule.__dict__, "mode": "validation"})
    return _tune(train, valid, rule, method, penalty or Penalty("lasso"), basis_kind)


def tune_cv(
    dataset: FunctionalDataset,
    rule: TuningRule,
    method: str = "linear",
    penalty: Penalty | None = None,
    basis_kind: str = "spline",
) -> TuningReport:
    """k-fold cross-validation with seeded random folds."""
    if rule.k > dataset.n:
        raise ValueError(f"k={rule.k} exceeds the sample size n={dataset.n}")
    if rule.mode != "cv":
        rule = TuningRule(**{**rule.__dict__, "mode": "cv"})
    return _tune(dataset, None, rule, method, penalty or Penalty("lasso"), basis_kind)


def holdout_q_selection(
    dataset: FunctionalDataset,
    fraction: float = 0.2,
    candidates=(5, 6, 7, 8, 9, 10),
    basis_kind: str = "spline",
    seed: int = 0,
) -> tuple[int, dict]:
    """Pick the basis dimension that best reconstructs randomly held-out time points.

    For each curve, ``round(fraction * T)`` grid points are held out at random;
    the basis is least-squares fitted to the remaining points and scored by the
    mean squared error on the held-out ones. Returns ``(q, {q: error})``.
    """
    if not 0 < fraction <= 0.5:
        raise ValueError("holdout fraction must lie in (0, 0.5]")
    candidates = [int(q) for q in candidates]
    if not candidates:
        raise ValueError("no candidate dimensions")
    T = len(dataset.grid)
    n_out = int(round(fraction * T))
    if T - n_out < max(candidates):
        raise ValueError(f"only {T - n_out} retained points for q={max(candidates)}")
    X = dataset.curves.reshape(-1, T)
    rng = np.random.default_rng(seed)
    held = np.zeros(X.shape, dtype=bool)
    for i in range(X.shape[0]):
        held[i, rng.choice(T, n_out, replace=False)] = True
    keep = (~held).astype(float)

    scores = {}
    for q in candidates:
        B = make_basis(basis_kind, q, dataset.grid).values
        G = np.einsum("nt,at,bt->nab", keep, B, B)
        rhs = np.einsum("nt,nt,at->na", keep, X, B)
        coef = np.linalg.solve(G, rhs[..., None])[..., 0]
        resid = (X - coef @ B)[held]
        scores[q] = float(np.mean(resid**2))
    best = min(candidates, key=lambda q: (scores[q], q))
    return best, scores
