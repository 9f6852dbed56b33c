"""Linear FAR: block coordinate descent with group shrinkage.

Each predictor contributes a block ``f_j = Theta_j eta_j``. A block update
projects the partial residual onto the column space of ``Theta_j`` and scales
the projection by ``(1 - c sqrt(n) / ||P_j||)_+``, with ``c = lambda`` for the
lasso and ``c = rho'(||f_j|| / sqrt(n))`` for concave penalties (local linear
approximation).
"""

from __future__ import annotations

import logging
from math import sqrt
from dataclasses import dataclass, field, replace

import numpy as np

from far.penalty import Penalty

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-10
_ALPHA_FLOOR = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class BlockFactor:
    """Orthogonal factor of one centred design block.

    ``Q`` spans the column space of the centred design, so ``S_j R = Q (Q^T R)``.
    ``coef_map`` recovers coefficients: ``eta = coef_map @ (Q^T f)``.
    """

    Q: np.ndarray = field(repr=False)
    coef_map: np.ndarray = field(repr=False)
    col_means: np.ndarray = field(repr=False)
    rank: int = 0

    def project(self, R: np.ndarray) -> np.ndarray:
        return self.Q @ (self.Q.T @ R)

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        return self.coef_map @ (self.Q.T @ f)


def factorize(design: np.ndarray) -> BlockFactor:
    A = np.asarray(design, dtype=float)
    if A.ndim != 2:
        raise ValueError("design blocks must be 2-d")
    if not np.all(np.isfinite(A)):
        raise FloatingPointError("non-finite values in design block")
    means = A.mean(axis=0)
    Ac = A - means
    U, s, Vt = np.linalg.svd(Ac, full_matrices=False)
    r = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return BlockFactor(
        np.ascontiguousarray(U[:, :r]),
        Vt[:r].T / s[:r],
        means,
        r,
    )


def block_update(factor: BlockFactor, R: np.ndarray, c: float) -> np.ndarray:
    """Shrunken, centred projection of the partial residual ``R`` onto one block."""
    R = np.asarray(R, dtype=float)
    n = R.size
    z = factor.Q.T @ R
    nrm = float(np.linalg.norm(z))
    if nrm == 0.0:
        return np.zeros(n)
    alpha = 1.0 - c * np.sqrt(n) / nrm
    if alpha <= _ALPHA_FLOOR:
        return np.zeros(n)
    f = factor.Q @ (alpha * z)
    return f - f.mean()


@dataclass
class LinearFarModel:
    """Fitted linear FAR model at a single penalty level."""

    etas: list
    fits: np.ndarray = field(repr=False)
    col_means: list = field(repr=False)
    response_mean: float
    penalty: Penalty
    objective: float
    sweeps: int = 0
    converged: bool = True
    basis: dict | None = None
    history: list = field(default_factory=list, repr=False)

    @property
    def lam(self) -> float:
        return self.penalty.lam

    @property
    def active_set(self) -> tuple:
        # eta_j is zero exactly when f_j is, and survives serialization
        return tuple(j for j, e in enumerate(self.etas) if np.any(e))

    @property
    def fitted_values(self) -> np.ndarray:
        return self.response_mean + self.fits.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "type": "linear",
            "basis": self.basis,
            "penalty": self.penalty.to_string(),
            "lambda": self.lam,
            "response_mean": self.response_mean,
            "etas": [np.asarray(e).tolist() for e in self.etas],
            "col_means": [np.asarray(m).tolist() for m in self.col_means],
            "active_set": list(self.active_set),
            "objective": self.objective,
            "sweeps": self.sweeps,
            "converged": self.converged,
        }


@dataclass
class FitPath:
    lambdas: np.ndarray
    models: list
    factors: list = field(repr=False, default_factory=list)

    @property
    def sweeps(self) -> list:
        return [m.sweeps for m in self.models]

    @property
    def converged(self) -> list:
        return [m.converged for m in self.models]

    def __len__(self) -> int:
        return len(self.models)


def objective(y: np.ndarray, fits: np.ndarray, penalty: Penalty) -> float:
    """Penalised least-squares criterion in terms of the fitted blocks."""
    n = y.size
    resid = y - fits.sum(axis=0)
    norms = np.linalg.norm(fits, axis=1) / np.sqrt(n)
    return float(resid @ resid / (2 * n) + sum(penalty.rho(float(t)) for t in norms))


def _as_factors(designs, factors):
    if factors is not None:
        return factors
    return [factorize(D) for D in designs]


def _sweeps(factors, y, F, penalty, use_lla, tol, max_sweeps, history):
    """Cyclic block coordinate descent with an active-set inner loop.

    Converged once a full sweep moves no block by more than ``tol`` in
    ``||.|| / sqrt(n)``. Returns ``(sweeps, converged)``; ``F`` is updated in place.
    Blocks are updated in coefficient space ``f_j = Q_j b_j``, so each update
    touches ``n``-vectors only through ``Q_j^T r`` and the residual refresh.
    """
    n = y.size
    sqn = np.sqrt(n)
    lam = penalty.lam
    Qs = [fac.Q for fac in factors]
    p = len(Qs)
    # warm starts are projected onto the block spans
    B = [Q.T @ F[j] for j, Q in enumerate(Qs)]
    for j, Q in enumerate(Qs):
        F[j] = Q @ B[j]
    full = list(range(p))
    nonzero = [bool(np.any(b)) for b in B]
    idx = full
    sweeps = 0
    r = y - F.sum(axis=0)
    while sweeps < max_sweeps:
        full_sweep = idx is full
        if full_sweep:
            r = y - F.sum(axis=0)
        max_change = 0.0
        for j in idx:
            Q = Qs[j]
            b = B[j]
            z = Q.T @ r
            if nonzero[j]:
                z += b
                c = penalty.rho_prime(sqrt(b @ b) / sqn) if use_lla else lam
            else:
                c = lam
            nrm = sqrt(z @ z)
            alpha = 1.0 - c * sqn / nrm if nrm > 0 else 0.0
            if alpha <= _ALPHA_FLOOR:
                if nonzero[j]:
                    max_change = max(max_change, sqrt(b @ b) / sqn)
                    r += Q @ b
                    F[j] = 0.0
                    B[j] = np.zeros_like(b)
                    nonzero[j] = False
                continue
            bnew = alpha * z
            delta = bnew - b
            max_change = max(max_change, sqrt(delta @ delta) / sqn)
            r -= Q @ delta
            F[j] = Q @ bnew
            B[j] = bnew
            nonzero[j] = True
        sweeps += 1
        if history is not None:
            history.append(objective(y, F, penalty))
        if not np.isfinite(max_change):
            raise FloatingPointError("non-finite values during coordinate descent")
        if full_sweep:
            if max_change <= tol:
                return sweeps, True
            idx = [j for j in full if nonzero[j]]
        elif max_change <= tol:
            idx = full
    return sweeps, False


def fit_at_lambda(
    designs,
    y,
    penalty: Penalty,
    init: LinearFarModel | None = None,
    *,
    factors=None,
    response_mean: float = 0.0,
    tol: float = 1e-6,
    max_sweeps: int = 1000,
    record: bool = False,
    basis: dict | None = None,
) -> LinearFarModel:
    """Minimise the FAR criterion at one penalty level.

    ``designs`` are the uncentred ``n x q_j`` blocks; ``y`` must be centred.
    For SCAD from a cold start, the lasso solution at the same level seeds
    the local-linear-approximation sweeps; a warm start (``init``, e.g. the
    previous model on a path) is used as the most recent estimate directly.
    """
    factors = _as_factors(designs, factors)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite response")
    p, n = len(factors), y.size
    F = np.zeros((p, n)) if init is None else np.array(init.fits, dtype=float, copy=True)
    history = [] if record else None
    if record:
        history.append(objective(y, F, penalty))

    sweeps, converged = 0, True
    if penalty.family == "lasso" or init is None:
        lasso = penalty if penalty.family == "lasso" else Penalty("lasso", penalty.lam)
        sweeps, converged = _sweeps(factors, y, F, lasso, False, tol, max_sweeps, history)
    if penalty.family != "lasso":
        more, done = _sweeps(factors, y, F, penalty, True, tol, max_sweeps, history)
        sweeps += more
        converged = converged and done
    if not converged:
        logger.debug("coordinate descent hit the sweep cap (%d) at lambda=%g", max_sweeps, penalty.lam)

    etas = [fac.coefficients(F[j]) for j, fac in enumerate(factors)]
    return LinearFarModel(
        etas=etas,
        fits=F,
        col_means=[fac.col_means for fac in factors],
        response_mean=float(response_mean),
        penalty=penalty,
        objective=objective(y, F, penalty),
        sweeps=sweeps,
        converged=converged,
        basis=basis,
        history=history or [],
    )


def lambda_max(designs=None, y=None, *, factors=None) -> float:
    """Smallest penalty level at which every block is shrunk to zero."""
    factors = _as_factors(designs, factors)
    y = np.asarray(y, dtype=float)
    norms = [np.linalg.norm(fac.Q.T @ y) for fac in factors]
    return float(max(norms, default=0.0) / np.sqrt(y.size))


def lambda_grid(lam_max: float, n_lambda: int = 100, ratio: float = 1e-3) -> np.ndarray:
    if n_lambda < 2:
        raise ValueError("a lambda path needs at least two points")
    if lam_max <= 0:
        return np.zeros(n_lambda)
    return lam_max * np.logspace(0.0, np.log10(ratio), n_lambda)


def lambda_path(
    designs,
    y,
    penalty: Penalty,
    n_lambda: int = 100,
    *,
    lambdas=None,
    ratio: float = 1e-3,
    factors=None,
    response_mean: float = 0.0,
    tol: float = 1e-6,
    max_sweeps: int = 1000,
    basis: dict | None = None,
) -> FitPath:
    """Fit a decreasing grid of penalty levels, warm-starting each from the last."""
    factors = _as_factors(designs, factors)
    y = np.asarray(y, dtype=float)
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(y=y, factors=factors), n_lambda, ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    models = []
    prev = None
    for lam in lambdas:
        prev = fit_at_lambda(
            None,
            y,
            penalty.with_lambda(lam),
            prev,
            factors=factors,
            response_mean=response_mean,
            tol=tol,
            max_sweeps=max_sweeps,
            basis=basis,
        )
        models.append(prev)
    return FitPath(lambdas, models, factors)


def block_contributions(model: LinearFarModel, new_designs) -> np.ndarray:
    """Per-block predictions ``(Theta* - training means) eta`` as a ``p x m`` array."""
    if len(new_designs) != len(model.etas):
        raise ValueError("number of design blocks does not match the model")
    rows = []
    for D, eta, mu in zip(new_designs, model.etas, model.col_means):
        D = np.asarray(D, dtype=float)
        if D.shape[1] != eta.size:
            raise ValueError("design block width does not match the model basis")
        rows.append((D - mu) @ eta)
    return np.array(rows)


def predict_linear(model: LinearFarModel, new_designs) -> np.ndarray:
    """Predictions for new score matrices (one per predictor)."""
    return model.response_mean + block_contributions(model, new_designs).sum(axis=0)


def threshold_linear(model: LinearFarModel, lam: float | None = None) -> LinearFarModel:
    """Zero every block with ``||f_j|| / sqrt(n) <= lam`` (default: the model's lambda)."""
    lam = model.lam if lam is None else float(lam)
    n = model.fits.shape[1]
    keep = np.linalg.norm(model.fits, axis=1) / np.sqrt(n) > lam
    fits = model.fits * keep[:, None]
    etas = [e if k else np.zeros_like(e) for e, k in zip(model.etas, keep)]
    return replace(model, etas=etas, fits=fits, history=[])


def kkt_residuals(model: LinearFarModel, designs=None, y=None, *, factors=None) -> tuple[float, float]:
    """Lasso optimality check.

    Returns ``(inactive, active)``: the largest excess of ``||S_j R_j|| / sqrt(n)``
    over ``lambda`` among zero blocks, and the largest ``||.|| / sqrt(n)`` gap
    between a nonzero block and its own block update.
    """
    factors = _as_factors(designs, factors)
    y = np.asarray(y, dtype=float)
    n = y.size
    sqn = np.sqrt(n)
    F = model.fits
    r = y - F.sum(axis=0)
    inactive = active = 0.0
    for j, fac in enumerate(factors):
        Rj = r + F[j]
        if np.linalg.norm(F[j]) == 0:
            inactive = max(inactive, float(np.linalg.norm(fac.Q.T @ Rj)) / sqn - model.lam)
        else:
            gap = np.linalg.norm(block_update(fac, Rj, model.lam) - F[j]) / sqn
            active = max(active, float(gap))
    return inactive, active
