"""Nonlinear FAR: single-index blocks ``g_j(theta_ij^T eta_j)``.

The fit alternates between a penalised link step, where each block is the
cubic B-spline design ``H_j`` evaluated at the current indices and handled by
the linear engine, and an unpenalised index step that minimises the residual
sum of squares over all ``eta_j`` through a first-order expansion of the
links around the current indices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline

from far.basis import clamped_knots
from far.linear_far import LinearFarModel, fit_at_lambda
from far.penalty import Penalty
from far.selection import PathSelection, TuningRule, kfold_indices, path_select

logger = logging.getLogger(__name__)

RIDGE = 1e-8
MAX_HALVINGS = 5


@dataclass(frozen=True)
class LinkBasis:
    """Cubic B-splines with uniform knots on ``[lo, hi]``, extended linearly outside."""

    lo: float
    hi: float
    d: int
    knots: np.ndarray = field(repr=False)

    @classmethod
    def on_range(cls, lo: float, hi: float, d: int) -> "LinkBasis":
        if d < 4:
            raise ValueError("a cubic link basis needs d >= 4")
        if not hi > lo:
            raise ValueError("link basis range is degenerate")
        return cls(float(lo), float(hi), int(d), clamped_knots(lo, hi, d))

    def _splines(self):
        spl = BSpline(self.knots, np.eye(self.d), 3)
        return spl, spl.derivative()

    def evaluate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        spl, dspl = self._splines()
        uc = np.clip(u, self.lo, self.hi)
        out = spl(uc)
        below, above = u < self.lo, u > self.hi
        if below.any():
            out[below] += (u[below] - self.lo)[:, None] * dspl(self.lo)
        if above.any():
            out[above] += (u[above] - self.hi)[:, None] * dspl(self.hi)
        return out

    def derivative(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        _, dspl = self._splines()
        return dspl(np.clip(u, self.lo, self.hi))

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "d": self.d, "knots": self.knots.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "LinkBasis":
        return cls(float(doc["lo"]), float(doc["hi"]), int(doc["d"]), np.asarray(doc["knots"], dtype=float))


def sign_normalize(eta: np.ndarray) -> np.ndarray:
    """Unit norm with the first nonzero component positive (zero vectors pass through)."""
    eta = np.asarray(eta, dtype=float)
    nrm = np.linalg.norm(eta)
    if nrm == 0:
        return eta.copy()
    eta = eta / nrm
    nz = np.flatnonzero(eta)
    return -eta if eta[nz[0]] < 0 else eta


def build_link_design(theta: np.ndarray, eta: np.ndarray, d: int) -> tuple[np.ndarray, LinkBasis | None]:
    """Link design ``H_j`` (rows ``h(theta_i^T eta)``) with knots spanning the indices.

    A constant index returns a zero design and ``None`` for the basis.
    """
    if d < 4:
        raise ValueError("a cubic link basis needs d >= 4")
    u = np.asarray(theta, dtype=float) @ np.asarray(eta, dtype=float)
    lo, hi = float(u.min()), float(u.max())
    if not hi - lo > 1e-12 * max(1.0, abs(lo), abs(hi)):
        return np.zeros((u.size, d)), None
    link = LinkBasis.on_range(lo, hi, d)
    return link.evaluate(u), link


@dataclass
class NonlinearFarModel:
    etas: np.ndarray = field(repr=False)
    xis: list = field(repr=False)
    links: list = field(repr=False)
    h_means: list = field(repr=False)
    fits: np.ndarray = field(repr=False)
    response_mean: float
    penalty: Penalty
    iterations: int = 0
    converged: bool = True
    thresholded: bool = False
    val_errors: np.ndarray | None = field(default=None, repr=False)
    lambdas: np.ndarray | None = field(default=None, repr=False)
    basis: dict | None = None

    @property
    def lam(self) -> float:
        return self.penalty.lam

    @property
    def d(self) -> int:
        return len(self.xis[0]) if self.xis else 0

    @property
    def active_set(self) -> tuple:
        return tuple(
            j for j, (x, lk) in enumerate(zip(self.xis, self.links)) if lk is not None and np.any(x)
        )

    @property
    def fitted_values(self) -> np.ndarray:
        return self.response_mean + self.fits.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "type": "nonlinear",
            "basis": self.basis,
            "penalty": self.penalty.to_string(),
            "lambda": self.lam,
            "response_mean": self.response_mean,
            "d": self.d,
            "etas": np.asarray(self.etas).tolist(),
            "xis": [np.asarray(x).tolist() for x in self.xis],
            "h_means": [np.asarray(m).tolist() for m in self.h_means],
            "links": [lk.to_dict() if lk is not None else None for lk in self.links],
            "active_set": list(self.active_set),
            "iterations": self.iterations,
            "converged": self.converged,
            "thresholded": self.thresholded,
        }


def block_values(scores, etas, xis, links, h_means) -> np.ndarray:
    """``p x n`` array of ``(h(theta^T eta) - h_mean)^T xi`` per block."""
    out = np.zeros((len(xis), np.asarray(scores[0]).shape[0]))
    for j, (th, e, xi, lk, mu) in enumerate(zip(scores, etas, xis, links, h_means)):
        if lk is None or not np.any(xi):
            continue
        out[j] = (lk.evaluate(th @ e) - mu) @ xi
    return out


def index_objective(scores, etas, xis, links, h_means, y) -> float:
    """Residual sum of squares as a function of the index vectors, links held fixed."""
    r = np.asarray(y, dtype=float) - block_values(scores, etas, xis, links, h_means).sum(axis=0)
    return float(r @ r)


def _active(xis, links):
    return [j for j, (xi, lk) in enumerate(zip(xis, links)) if lk is not None and np.any(xi)]


def linearized_system(scores, etas, xis, links, h_means, y):
    """Design ``Z`` and residual ``R`` of the linearised index problem.

    Column block ``j`` of ``Z`` is ``h'(theta_i^T eta_j)^T xi_j * theta_ij``, so
    the increments solve ``min ||R - Z delta||^2`` and the gradient of
    :func:`index_objective` over the active blocks is ``-2 Z^T R``.
    """
    active = _active(xis, links)
    R = np.asarray(y, dtype=float) - block_values(scores, etas, xis, links, h_means).sum(axis=0)
    cols = []
    for j in active:
        th = np.asarray(scores[j], dtype=float)
        slope = links[j].derivative(th @ etas[j]) @ xis[j]
        cols.append(slope[:, None] * th)
    Z = np.hstack(cols) if cols else np.zeros((R.size, 0))
    return active, Z, R


def index_gradient(scores, etas, xis, links, h_means, y) -> tuple[list, np.ndarray]:
    active, Z, R = linearized_system(scores, etas, xis, links, h_means, y)
    return active, -2.0 * Z.T @ R


@dataclass
class EtaUpdate:
    etas: np.ndarray
    accepted: bool
    step: float
    objective_old: float
    objective_new: float
    ridged: bool


def update_eta_step(scores, etas, xis, links, h_means, y) -> EtaUpdate:
    """One linearised least-squares update of all active index vectors jointly.

    Blocks with a zero link coefficient keep their index vector. If the exact
    residual sum of squares does not improve, the increment is halved up to
    five times before the old vectors are kept. Updated vectors have unit
    norm but keep their sign, since the links are tied to the current
    orientation; the sign convention is applied when the links are refitted.
    """
    etas = np.array(etas, dtype=float, copy=True)
    active, Z, R = linearized_system(scores, etas, xis, links, h_means, y)
    obj_old = float(R @ R)
    if not active:
        return EtaUpdate(etas, False, 0.0, obj_old, obj_old, False)

    A = Z.T @ Z
    b = Z.T @ R
    ridged = False
    scale = max(float(np.max(np.diag(A))), 1.0)
    if np.linalg.matrix_rank(A, tol=1e-12 * scale) < A.shape[0]:
        A = A + RIDGE * scale * np.eye(A.shape[0])
        ridged = True
        logger.debug("index update system is singular; ridge added")
    delta = np.linalg.solve(A, b)
    widths = [np.asarray(scores[j]).shape[1] for j in active]
    pieces = np.split(delta, np.cumsum(widths)[:-1])

    step = 1.0
    for _ in range(MAX_HALVINGS + 1):
        cand = etas.copy()
        for j, dj in zip(active, pieces):
            e = etas[j] + step * dj
            nrm = np.linalg.norm(e)
            if nrm > 0:
                cand[j] = e / nrm
        obj_new = index_objective(scores, cand, xis, links, h_means, y)
        if obj_new <= obj_old:
            return EtaUpdate(cand, True, step, obj_old, obj_new, ridged)
        step /= 2
    return EtaUpdate(etas, False, 0.0, obj_old, obj_old, ridged)


def pca_direction(theta: np.ndarray) -> np.ndarray:
    """Leading principal-component loading of a score matrix (sign-normalised)."""
    th = np.asarray(theta, dtype=float)
    th = th - th.mean(axis=0)
    w, V = np.linalg.eigh(th.T @ th / th.shape[0])
    return sign_normalize(V[:, -1])


def init_eta(
    scores,
    y,
    penalty: Penalty,
    rule: TuningRule,
    *,
    response_mean: float = 0.0,
    val_scores=None,
    val_y=None,
    folds=None,
) -> np.ndarray:
    """Starting index vectors from a tuned linear fit, PCA loadings for dropped blocks."""
    sel = path_select(
        list(scores), y, penalty, rule,
        response_mean=response_mean, val_designs=None if val_scores is None else list(val_scores),
        val_y=val_y, folds=folds,
    )
    out = []
    for th, eta in zip(scores, sel.model.etas):
        out.append(sign_normalize(eta) if np.any(eta) else pca_direction(th))
    return np.array(out)


def fit_xi_step(H, y, penalty: Penalty, lam: float, *, response_mean: float = 0.0) -> LinearFarModel:
    """Link coefficients for fixed designs: the linear engine with ``H_j`` as blocks."""
    return fit_at_lambda(list(H), y, penalty.with_lambda(lam), response_mean=response_mean)


def _empty_design(n: int, d: int) -> np.ndarray:
    return np.zeros((n, d))


def fit_nonlinear(
    scores,
    y,
    penalty: Penalty,
    d: int,
    rule: TuningRule,
    *,
    response_mean: float = 0.0,
    val_scores=None,
    val_y=None,
    max_outer: int = 25,
    tol: float = 1e-5,
    init=None,
    basis: dict | None = None,
    lam: float | None = None,
) -> NonlinearFarModel:
    """Alternate link fits over a lambda path with index updates at the chosen level.

    ``scores`` is ``(p, n, q)``; ``y`` is centred. With ``rule.mode ==
    "validation"`` the validation scores/responses pick lambda each round,
    otherwise k-fold CV on the training rows does. A fixed ``lam`` skips
    tuning altogether (``rule`` is then ignored).
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    p, n, _ = scores.shape
    folds = None
    if lam is None and rule.mode == "cv":
        folds = kfold_indices(n, rule.k, np.random.default_rng(rule.seed))
    if init is not None:
        etas = np.array(init, dtype=float)
    elif lam is not None:
        lin = fit_at_lambda(list(scores), y, penalty.with_lambda(lam))
        etas = np.array([sign_normalize(e) if np.any(e) else pca_direction(th) for th, e in zip(scores, lin.etas)])
    else:
        etas = init_eta(scores, y, penalty, rule, response_mean=response_mean, val_scores=val_scores, val_y=val_y, folds=folds)

    best, best_err = None, np.inf
    prev_fits = None
    it = 0
    for it in range(1, max_outer + 1):
        etas = np.array([sign_normalize(e) for e in etas])
        H, links = [], []
        for th, e in zip(scores, etas):
            Hj, lk = build_link_design(th, e, d)
            H.append(Hj)
            links.append(lk)
        if lam is None:
            val_H = None
            if val_scores is not None:
                val_H = [
                    lk.evaluate(th @ e) if lk is not None else _empty_design(th.shape[0], d)
                    for th, e, lk in zip(val_scores, etas, links)
                ]
            sel: PathSelection = path_select(
                H, y, penalty, rule, response_mean=response_mean, val_designs=val_H, val_y=val_y, folds=folds
            )
            lin, chosen, errors, lambdas = sel.model, sel.lam, sel.errors, sel.path.lambdas
            err = float(sel.errors[sel.index])
        else:
            lin = fit_xi_step(H, y, penalty, lam, response_mean=response_mean)
            chosen, errors, lambdas = float(lam), None, None
            err = lin.objective
        model = NonlinearFarModel(
            etas=etas.copy(),
            xis=[np.asarray(x, dtype=float) for x in lin.etas],
            links=links,
            h_means=[np.asarray(m, dtype=float) for m in lin.col_means],
            fits=lin.fits.copy(),
            response_mean=float(response_mean),
            penalty=penalty.with_lambda(chosen),
            iterations=it,
            converged=False,
            val_errors=errors,
            lambdas=lambdas,
            basis=basis,
        )
        if err < best_err:
            best, best_err = model, err

        if prev_fits is not None:
            change = np.sum((model.fits - prev_fits) ** 2) / n
            base = np.sum(prev_fits**2) / n
            if change <= tol * base or (base == 0 and change == 0):
                model.converged = True
                return model
        prev_fits = model.fits

        upd = update_eta_step(scores, etas, model.xis, links, model.h_means, y)
        etas = upd.etas

    logger.info("nonlinear FAR stopped after %d outer iterations without converging", it)
    return replace(best, converged=False)


def predict_nonlinear(model: NonlinearFarModel, new_scores) -> np.ndarray:
    new_scores = np.asarray(new_scores, dtype=float)
    vals = block_values(new_scores, model.etas, model.xis, model.links, model.h_means)
    return model.response_mean + vals.sum(axis=0)


def threshold_model(model: NonlinearFarModel, lam: float | None = None) -> NonlinearFarModel:
    """Drop blocks whose empirical norm ``||f_j|| / sqrt(n)`` does not exceed ``lam``.

    ``lam`` defaults to the model's own tuning level.
    """
    lam = model.lam if lam is None else float(lam)
    n = model.fits.shape[1]
    keep = np.linalg.norm(model.fits, axis=1) / np.sqrt(n) > lam
    fits = model.fits * keep[:, None]
    xis = [x if k else np.zeros_like(x) for x, k in zip(model.xis, keep)]
    return replace(model, fits=fits, xis=xis, thresholded=True)
