"""Time grids, orthonormal function bases and curve projection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

BASIS_KINDS = ("fourier", "spline")


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Sorted observation times on [0, 1] with trapezoidal quadrature weights."""

    points: np.ndarray
    weights: np.ndarray = field(repr=False)

    @classmethod
    def from_points(cls, points) -> "TimeGrid":
        t = np.asarray(points, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise BasisError("a time grid needs at least two points")
        if not np.all(np.isfinite(t)):
            raise BasisError("time grid contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise BasisError("time grid must be strictly increasing")
        if abs(t[0]) > 1e-12 or abs(t[-1] - 1.0) > 1e-12:
            raise BasisError("time grid must start at 0 and end at 1")
        t = t.copy()
        t[0], t[-1] = 0.0, 1.0
        dt = np.diff(t)
        w = np.zeros_like(t)
        w[:-1] += dt / 2
        w[1:] += dt / 2
        t.setflags(write=False)
        w.setflags(write=False)
        return cls(t, w)

    def __len__(self) -> int:
        return self.points.size

    def same_as(self, other: "TimeGrid") -> bool:
        return len(self) == len(other) and np.allclose(self.points, other.points, rtol=0, atol=1e-12)


def uniform_grid(T: int = 200) -> TimeGrid:
    return TimeGrid.from_points(np.linspace(0.0, 1.0, T))


@dataclass(frozen=True)
class BasisSystem:
    """An orthonormal basis evaluated on a grid.

    ``values`` is ``q x T``; row ``l`` holds ``b_l(t_k)``. Orthonormality is
    with respect to the grid quadrature, ``values @ diag(w) @ values.T == I``.
    """

    kind: str
    q: int
    values: np.ndarray = field(repr=False)
    grid: TimeGrid = field(repr=False)

    def gram(self) -> np.ndarray:
        return (self.values * self.grid.weights) @ self.values.T

    def synthesize(self, scores: np.ndarray) -> np.ndarray:
        """Map score rows back to curve values on the grid."""
        return np.asarray(scores) @ self.values

    def spec(self) -> dict:
        return {"kind": self.kind, "q": self.q, "grid": self.grid.points.tolist()}


def _weighted_gram_schmidt(V: np.ndarray, w: np.ndarray, passes: int = 2) -> np.ndarray:
    # modified Gram-Schmidt in <f, g> = sum_k w_k f_k g_k, run twice for stability
    Q = np.array(V, dtype=float, copy=True)
    for _ in range(passes):
        for l in range(Q.shape[0]):
            for m in range(l):
                Q[l] -= np.sum(w * Q[l] * Q[m]) * Q[m]
            nrm = np.sqrt(np.sum(w * Q[l] ** 2))
            if nrm < 1e-10:
                raise BasisError("basis functions are linearly dependent on this grid")
            Q[l] /= nrm
    return Q


def clamped_knots(lo: float, hi: float, n_basis: int, order: int = 4) -> np.ndarray:
    """Knot vector for ``n_basis`` B-splines with uniform interior knots on [lo, hi]."""
    n_interior = n_basis - order
    inner = np.linspace(lo, hi, n_interior + 2)
    return np.concatenate([np.full(order - 1, lo), inner, np.full(order - 1, hi)])


def bspline_matrix(x: np.ndarray, knots: np.ndarray, order: int = 4, nu: int = 0) -> np.ndarray:
    """Dense ``len(x) x n_basis`` matrix of B-spline values (or ``nu``-th derivatives)."""
    k = order - 1
    n_basis = knots.size - order
    x = np.asarray(x, dtype=float)
    if nu == 0:
        return BSpline.design_matrix(x, knots, k).toarray()
    out = np.empty((x.size, n_basis))
    eye = np.eye(n_basis)
    for l in range(n_basis):
        out[:, l] = BSpline(knots, eye[l], k).derivative(nu)(x)
    return out


def make_basis(kind: str, q: int, grid: TimeGrid) -> BasisSystem:
    """Construct an orthonormal basis of dimension ``q`` on ``grid``.

    ``"fourier"`` keeps ``sqrt(2) sin(k pi t)``, ``k = 1..q-1``, in rows
    ``2..q`` and places the constant, orthogonalised against those sines, in
    row 1. ``"spline"`` orthonormalises a clamped cubic B-spline basis with
    ``q - 4`` uniform interior knots.
    """
    if kind not in BASIS_KINDS:
        raise BasisError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")
    q = int(q)
    if q < 1:
        raise BasisError("basis dimension must be at least 1")
    if kind == "spline" and q < 4:
        raise BasisError("a cubic spline basis needs q >= 4")
    if len(grid) < q:
        raise BasisError(f"grid has {len(grid)} points, fewer than q={q}")
    t, w = grid.points, grid.weights

    if kind == "fourier":
        sines = np.sqrt(2.0) * np.sin(np.pi * np.arange(1, q)[:, None] * t)
        const = np.ones_like(t)
        if q > 1:
            sines = _weighted_gram_schmidt(sines, w)
            const = const - ((sines * w) @ const) @ sines
            const = const - ((sines * w) @ const) @ sines
        const = const / np.sqrt(np.sum(w * const**2))
        values = np.vstack([const, sines])
    else:
        knots = clamped_knots(0.0, 1.0, q)
        values = _weighted_gram_schmidt(bspline_matrix(t, knots).T, w)
    values.setflags(write=False)
    return BasisSystem(kind, q, values, grid)


@dataclass(frozen=True)
class FunctionalDataset:
    """``p`` functional predictors for ``n`` subjects plus a centred response.

    ``curves`` has shape ``(p, n, T)``. ``response`` is centred and
    ``response_mean`` holds the removed offset.
    """

    grid: TimeGrid
    curves: np.ndarray = field(repr=False)
    response: np.ndarray = field(repr=False)
    response_mean: float = 0.0
    curve_ids: tuple = ()
    predictor_ids: tuple = ()

    @classmethod
    def from_raw(cls, grid: TimeGrid, curves, y, curve_ids=None, predictor_ids=None) -> "FunctionalDataset":
        X = np.asarray(curves, dtype=float)
        if X.ndim != 3:
            raise BasisError("curves must have shape (p, n, T)")
        if X.shape[2] != len(grid):
            raise BasisError("curve length does not match the grid")
        if not np.all(np.isfinite(X)):
            raise BasisError("curves contain non-finite values")
        yc, mean = center_response(y)
        if yc.size != X.shape[1]:
            raise BasisError(f"response has {yc.size} entries but there are {X.shape[1]} curves")
        p, n = X.shape[:2]
        return cls(
            grid,
            X,
            yc,
            mean,
            tuple(curve_ids) if curve_ids is not None else tuple(range(n)),
            tuple(predictor_ids) if predictor_ids is not None else tuple(range(p)),
        )

    @property
    def n(self) -> int:
        return self.curves.shape[1]

    @property
    def p(self) -> int:
        return self.curves.shape[0]

    @property
    def raw_response(self) -> np.ndarray:
        return self.response + self.response_mean

    def subset(self, rows) -> "FunctionalDataset":
        rows = np.asarray(rows)
        ids = [self.curve_ids[i] for i in rows]
        return FunctionalDataset.from_raw(self.grid, self.curves[:, rows], self.raw_response[rows], ids, self.predictor_ids)


def center_response(y) -> tuple[np.ndarray, float]:
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise BasisError("empty response")
    if not np.all(np.isfinite(y)):
        raise BasisError("response contains non-finite values")
    mean = float(np.mean(y))
    yc = y - mean
    yc -= np.mean(yc)
    return yc, mean


def _check_compatible(dataset: FunctionalDataset, basis: BasisSystem) -> None:
    if not dataset.grid.same_as(basis.grid):
        raise BasisError("dataset grid differs from the basis grid")


def project_curves(dataset: FunctionalDataset, basis: BasisSystem, j: int) -> np.ndarray:
    """Score matrix ``Theta_j`` (n x q): quadrature inner products with each basis function."""
    _check_compatible(dataset, basis)
    if not 0 <= j < dataset.p:
        raise BasisError(f"predictor {j} does not exist")
    X = dataset.curves[j]
    if not np.all(np.isfinite(X)):
        raise BasisError("curves contain non-finite values")
    return (X * dataset.grid.weights) @ basis.values.T


def project_all(dataset: FunctionalDataset, basis: BasisSystem) -> np.ndarray:
    """All score matrices stacked as ``(p, n, q)``."""
    _check_compatible(dataset, basis)
    return np.einsum("jnt,t,lt->jnl", dataset.curves, dataset.grid.weights, basis.values)
