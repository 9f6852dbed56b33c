"""Synthetic linear and single-index studies with selection and prediction metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from dataclasses import asdict, dataclass, field

import numpy as np

from far.basis import FunctionalDataset, make_basis, project_all, uniform_grid
from far.io import atomic_write
from far.linear_far import predict_linear, threshold_linear
from far.nonlinear_far import NonlinearFarModel, predict_nonlinear, threshold_model
from far.penalty import parse_penalty
from far.selection import TuningRule
from far.tuning import holdout_q_selection, tune_validation

logger = logging.getLogger(__name__)

SCENARIOS = ("linear", "nonlinear")
RNG_ALGORITHM = "PCG64"
STUDY_COLUMNS = ["scenario", "n", "p", "s", "sigma_y", "method", "FN", "FP", "meanPE", "sePE"]


def _link_identity(u):
    return u


def _link_sine(u):
    return -u + np.sin(u)


# links for the first two predictors of the nonlinear scenario; the rest are null
NONLINEAR_LINKS = (_link_identity, _link_sine)


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "linear"
    n: int = 60
    p: int = 10
    s: int = 4
    sigma_x: float = 0.5
    sigma_y: float = 1.0
    T: int = 200
    seed: int = 0
    replicates: int = 100
    generator_q: int = 4

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "nonlinear" and self.s != len(NONLINEAR_LINKS):
            raise ValueError("the nonlinear scenario has exactly two signal predictors")
        if not 0 <= self.s <= self.p:
            raise ValueError("need 0 <= s <= p")
        if self.sigma_x < 0 or self.sigma_y < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.T < 2:
            raise ValueError("need at least two grid points")
        if self.n < 2 or self.replicates < 1:
            raise ValueError("need n >= 2 and at least one replicate")


@dataclass(frozen=True)
class SimTruth:
    """True index vectors (generator-basis coordinates) and the signal set."""

    etas: np.ndarray = field(repr=False)
    scenario: str = "linear"

    @property
    def signals(self) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(np.linalg.norm(self.etas, axis=1) > 0))

    def contributions(self, theta: np.ndarray) -> np.ndarray:
        """``p x n`` true additive components for generator coefficients ``theta`` (p, n, q0)."""
        u = np.einsum("jnl,jl->jn", theta, self.etas)
        if self.scenario == "linear":
            return u
        out = np.zeros_like(u)
        for j, g in enumerate(NONLINEAR_LINKS):
            out[j] = g(u[j])
        return out


@dataclass
class SelectionMetrics:
    fnr: float
    fpr: float
    mean_pe: float = float("nan")
    se_pe: float = float("nan")
    fn_zero_rate: float = float("nan")
    replicates: int = 0
    failures: int = 0


def draw_truth(config: SimConfig, rng: np.random.Generator) -> SimTruth:
    etas = np.zeros((config.p, config.generator_q))
    for j in range(config.s):
        e = rng.standard_normal(config.generator_q)
        etas[j] = e / np.linalg.norm(e)
    return SimTruth(etas, config.scenario)


def generate_dataset(config: SimConfig, truth: SimTruth | None = None, seed=None, rng=None):
    """Draw one dataset; returns ``(dataset, truth, f_true)``.

    Curves are ``b(t)^T theta_ij + w_ijk`` on a uniform grid, with ``b`` the
    4-dimensional sine/constant generator basis and ``theta_ij ~ N(0, I)``.
    ``f_true`` (p x n) holds the uncentred true components.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(config.seed if seed is None else seed))
    if truth is None:
        truth = draw_truth(config, rng)
    grid = uniform_grid(config.T)
    gen = make_basis("fourier", config.generator_q, grid)
    theta = rng.standard_normal((config.p, config.n, config.generator_q))
    curves = theta @ gen.values + config.sigma_x * rng.standard_normal((config.p, config.n, config.T))
    f_true = truth.contributions(theta)
    y = f_true.sum(axis=0) + config.sigma_y * rng.standard_normal(config.n)
    return FunctionalDataset.from_raw(grid, curves, y), truth, f_true


def evaluate_selection(active, truth: SimTruth, p: int | None = None) -> tuple[float, float]:
    """False-negative and false-positive rates of a selected set."""
    p = truth.etas.shape[0] if p is None else p
    signals = set(truth.signals)
    chosen = set(int(j) for j in active)
    fnr = len(signals - chosen) / len(signals) if signals else 0.0
    noise = p - len(signals)
    fpr = len(chosen - signals) / noise if noise else 0.0
    return fnr, fpr


def evaluate_pe(model, basis, test: FunctionalDataset) -> float:
    """Mean squared prediction error on a test set (raw response scale)."""
    scores = project_all(test, basis)
    if isinstance(model, NonlinearFarModel):
        pred = predict_nonlinear(model, scores)
    else:
        pred = predict_linear(model, list(scores))
    return float(np.mean((test.raw_response - pred) ** 2))


@dataclass(frozen=True)
class MethodSettings:
    method: str = "linear"
    penalty: str = "scad"
    q_candidates: tuple = (5, 6, 7, 8, 9, 10)
    d_candidates: tuple = (5, 6, 7, 8, 9, 10)
    q_selection: str = "validation"
    threshold: bool = True
    basis_kind: str = "spline"
    n_lambda: int = 100
    holdout_fraction: float = 0.2

    @classmethod
    def default_for(cls, scenario: str) -> "MethodSettings":
        if scenario == "nonlinear":
            return cls(method="nonlinear", penalty="lasso", q_selection="holdout")
        return cls()


def run_replicate(config: SimConfig, settings: MethodSettings, r: int) -> dict:
    seed = config.seed + r
    rng = np.random.Generator(np.random.PCG64(seed))
    truth = draw_truth(config, rng)
    train, _, _ = generate_dataset(config, truth, rng=rng)
    valid, _, _ = generate_dataset(config, truth, rng=rng)
    test, _, _ = generate_dataset(config, truth, rng=rng)

    q_cands = tuple(settings.q_candidates)
    if settings.q_selection == "holdout":
        q, _ = holdout_q_selection(valid, settings.holdout_fraction, q_cands, settings.basis_kind, seed=seed)
        q_cands = (q,)
    rule = TuningRule(
        mode="validation", q_candidates=q_cands, d_candidates=tuple(settings.d_candidates), n_lambda=settings.n_lambda
    )
    report = tune_validation(train, valid, rule, settings.method, parse_penalty(settings.penalty), settings.basis_kind)
    model = report.model
    if settings.threshold:
        model = threshold_model(model) if isinstance(model, NonlinearFarModel) else threshold_linear(model)
    fnr, fpr = evaluate_selection(model.active_set, truth, config.p)
    pe = evaluate_pe(model, report.basis, test)
    return {
        "replicate": r,
        "seed": seed,
        "fnr": fnr,
        "fpr": fpr,
        "pe": pe,
        "q": report.q,
        "d": report.d,
        "lambda": report.lam,
        "active_set": list(model.active_set),
        "signals": list(truth.signals),
    }


def aggregate(records: list) -> SelectionMetrics:
    ok = [r for r in records if "error" not in r]
    failures = len(records) - len(ok)
    if not ok:
        return SelectionMetrics(float("nan"), float("nan"), replicates=0, failures=failures)
    pe = np.array([r["pe"] for r in ok])
    fnr = np.array([r["fnr"] for r in ok])
    se = float(np.std(pe, ddof=1) / np.sqrt(pe.size)) if pe.size > 1 else 0.0
    return SelectionMetrics(
        fnr=float(np.mean(fnr)),
        fpr=float(np.mean([r["fpr"] for r in ok])),
        mean_pe=float(np.mean(pe)),
        se_pe=se,
        fn_zero_rate=float(np.mean(fnr == 0)),
        replicates=len(ok),
        failures=failures,
    )


def run_study(config: SimConfig, settings: MethodSettings | None = None, replicates: int | None = None, progress=None):
    """Run independent replicates (seed ``config.seed + r``); returns ``(metrics, records)``.

    A replicate that raises is recorded with its error and excluded from the
    aggregate.
    """
    settings = settings or MethodSettings.default_for(config.scenario)
    replicates = config.replicates if replicates is None else replicates
    records = []
    for r in range(replicates):
        try:
            rec = run_replicate(config, settings, r)
        except Exception as exc:  # isolate replicate failures
            logger.error("replicate %d failed: %s", r, exc)
            rec = {"replicate": r, "seed": config.seed + r, "error": repr(exc), "traceback": traceback.format_exc()}
        records.append(rec)
        if progress is not None:
            progress(rec)
    return aggregate(records), records


def study_row(config: SimConfig, settings: MethodSettings, metrics: SelectionMetrics) -> dict:
    se = metrics.se_pe if metrics.replicates > 1 else "NA"
    return {
        "scenario": config.scenario,
        "n": config.n,
        "p": config.p,
        "s": config.s,
        "sigma_y": config.sigma_y,
        "method": f"FAR-{settings.method}-{settings.penalty}",
        "FN": metrics.fnr,
        "FP": metrics.fpr,
        "meanPE": metrics.mean_pe,
        "sePE": se,
    }


def write_study(path_csv, path_jsonl, config, settings, metrics, records) -> None:
    """Aggregate CSV (one row) plus a per-replicate JSONL log, both written atomically."""
    buf = io.StringIO(newline="")
    w = csv.DictWriter(buf, fieldnames=STUDY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerow(study_row(config, settings, metrics))
    atomic_write(path_csv, buf.getvalue())
    if path_jsonl is not None:
        lines = [json.dumps({k: v for k, v in rec.items() if k != "traceback"}) + "\n" for rec in records]
        atomic_write(path_jsonl, "".join(lines))


def config_dict(config: SimConfig, settings: MethodSettings) -> dict:
    return {"sim": asdict(config), "method": asdict(settings), "rng": RNG_ALGORITHM}
