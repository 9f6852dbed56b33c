"""Command-line front end: ``far fit|predict|tune|simulate``.

Settings come from an optional JSON config (``--config``) with flags taking
precedence. Exit codes: 0 success, 2 bad input files, 3 bad configuration,
4 non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from far.basis import BasisError, make_basis, project_all
from far.io import (
    InputError,
    atomic_write,
    dumps,
    load_dataset,
    model_basis,
    model_from_dict,
    model_to_dict,
    read_model_doc,
    save_json,
)
from far.linear_far import fit_at_lambda, objective, predict_linear
from far.nonlinear_far import NonlinearFarModel, fit_nonlinear, predict_nonlinear, threshold_model
from far.penalty import parse_penalty
from far.selection import TuningRule, path_select
from far.simulation import RNG_ALGORITHM, MethodSettings, SimConfig, run_study, study_row, write_study
from far.tuning import tune_cv, tune_validation

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_STRICT = 0, 2, 3, 4
PATH_KEYS = ("curves", "response", "valid_curves", "valid_response", "model", "out")
RULE_KEYS = {f.name for f in fields(TuningRule)}

logger = logging.getLogger("far")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class StrictFailure(RuntimeError):
    pass


def _int_list(text) -> tuple:
    """``6``, ``5,7,9`` or ``5..10`` (inclusive) as a tuple of ints."""
    if isinstance(text, int):
        return (text,)
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as an integer or list") from None


def _lambda_arg(value):
    if value is None or value == "path":
        return None
    try:
        lam = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"--lambda must be a number or 'path', got {value!r}") from None
    if not lam >= 0:
        raise ConfigError("lambda must be nonnegative")
    return lam


def load_config(args) -> dict:
    """Merge the JSON config (if any) with explicitly given flags."""
    cfg = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON ({exc.msg})") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        base = Path(args.config).parent
        for key in PATH_KEYS:
            if isinstance(cfg.get(key), str):
                cfg[key] = str(base / cfg[key])
    for key, value in vars(args).items():
        if key in ("config", "command", "func") or value is None or value is False:
            continue
        cfg[key] = value
    return cfg


def _rule(cfg: dict, mode: str) -> TuningRule:
    raw = dict(cfg.get("tuning", {}))
    unknown = set(raw) - RULE_KEYS
    if unknown:
        raise ConfigError(f"unknown tuning keys: {sorted(unknown)}")
    raw["mode"] = raw.get("mode", mode)
    if "seed" in cfg:
        raw["seed"] = int(cfg["seed"])
    if "q" in cfg:
        raw["q_candidates"] = _int_list(cfg["q"])
    if "d" in cfg:
        raw["d_candidates"] = _int_list(cfg["d"])
    for key in ("q_candidates", "d_candidates"):
        if key in raw:
            raw[key] = _int_list(raw[key])
    return TuningRule(**raw)


def _method(cfg: dict) -> str:
    method = cfg.get("method", "linear")
    if method not in ("linear", "nonlinear"):
        raise ConfigError(f"unknown method {method!r}")
    return method


def _check_dims(kind: str, qs, ds, method: str, T: int) -> None:
    if kind not in ("spline", "fourier"):
        raise ConfigError(f"unknown basis {kind!r}")
    low = 4 if kind == "spline" else 1
    for q in qs:
        if q < low or q > T:
            raise ConfigError(f"q={q} is outside [{low}, {T}] for the {kind} basis")
    if method == "nonlinear" and any(d < 4 for d in ds):
        raise ConfigError("the nonlinear link basis needs d >= 4")


def _required(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise ConfigError(f"missing required setting '{key}'")
    return cfg[key]


def _emit(doc) -> None:
    sys.stdout.write(dumps(doc))


def cmd_fit(cfg: dict) -> int:
    method = _method(cfg)
    kind = cfg.get("basis", "spline")
    penalty = parse_penalty(cfg.get("penalty", "lasso"))
    lam = _lambda_arg(cfg.get("lambda", "path"))
    train = load_dataset(_required(cfg, "curves"), _required(cfg, "response"))
    valid = None
    if cfg.get("valid_curves"):
        valid = load_dataset(cfg["valid_curves"], _required(cfg, "valid_response"))
    rule = _rule(cfg, "validation" if valid is not None else "cv")
    qs, ds = rule.q_candidates, rule.d_candidates
    if len(qs) != 1 or (method == "nonlinear" and len(ds) != 1):
        raise ConfigError("fit takes a single q (and d); use 'tune' to search candidates")
    q, d = qs[0], ds[0]
    _check_dims(kind, qs, ds, method, len(train.grid))
    if lam is None and rule.mode == "cv" and rule.k > train.n:
        raise ConfigError(f"k={rule.k} exceeds the sample size n={train.n}")
    if lam is None and rule.mode == "validation" and valid is None:
        raise ConfigError("validation tuning needs valid_curves and valid_response")

    basis = make_basis(kind, q, train.grid)
    spec = {"kind": kind, "q": q, "grid": train.grid.points.tolist()}
    scores = project_all(train, basis)
    vscores = project_all(valid, basis) if valid is not None else None
    vy = valid.raw_response if valid is not None else None
    max_sweeps = int(cfg.get("max_sweeps", 1000))
    if max_sweeps < 1:
        raise ConfigError("max_sweeps must be positive")
    if method == "linear":
        if lam is not None:
            model = fit_at_lambda(
                list(scores), train.response, penalty.with_lambda(lam),
                response_mean=train.response_mean, basis=spec, max_sweeps=max_sweeps,
            )
        else:
            sel = path_select(
                list(scores), train.response, penalty, rule, response_mean=train.response_mean,
                val_designs=None if vscores is None else list(vscores), val_y=vy, max_sweeps=max_sweeps,
            )
            model = sel.model
            model.basis = spec
        summary = {"sweeps": model.sweeps}
    else:
        model = fit_nonlinear(
            scores, train.response, penalty, d, rule, response_mean=train.response_mean,
            val_scores=vscores, val_y=vy, basis=spec, lam=lam, max_outer=int(cfg.get("max_outer", 25)),
        )
        if cfg.get("threshold"):
            model = threshold_model(model)
        summary = {"iterations": model.iterations}
    summary = {
        "type": method,
        "penalty": model.penalty.to_string(),
        "lambda": model.lam,
        "q": q,
        "d": d if method == "nonlinear" else None,
        "active_set": [str(train.predictor_ids[j]) for j in model.active_set],
        "objective": objective(train.response, model.fits, model.penalty),
        **summary,
        "converged": bool(model.converged),
        "curve_ids": [str(c) for c in train.curve_ids],
        "fitted_values": model.fitted_values.tolist(),
    }
    if not model.converged and cfg.get("strict"):
        raise StrictFailure(f"fit did not converge at lambda={model.lam:g}")
    if cfg.get("out"):
        save_json(cfg["out"], model_to_dict(model, train.predictor_ids))
    _emit(summary)
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    doc = read_model_doc(_required(cfg, "model"))
    model = model_from_dict(doc)
    data = load_dataset(_required(cfg, "curves"))
    basis = model_basis(model, data.grid)
    scores = project_all(data, basis)
    ids = doc.get("predictor_ids")
    if ids is not None:
        order = {str(p): j for j, p in enumerate(data.predictor_ids)}
        missing = [p for p in ids if p not in order]
        if missing:
            raise InputError(f"{cfg['curves']}: no curves for predictor {missing[0]}")
        scores = scores[[order[p] for p in ids]]
    if scores.shape[0] != len(model.etas):
        raise InputError(f"model has {len(model.etas)} predictors, data has {scores.shape[0]}")
    if isinstance(model, NonlinearFarModel):
        pred = predict_nonlinear(model, scores)
    else:
        pred = predict_linear(model, list(scores))
    text = "curve_id,yhat\n" + "".join(f"{c},{v!r}\n" for c, v in zip(data.curve_ids, pred.tolist()))
    if cfg.get("out"):
        atomic_write(cfg["out"], text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_tune(cfg: dict) -> int:
    method = _method(cfg)
    kind = cfg.get("basis", "spline")
    penalty = parse_penalty(cfg.get("penalty", "lasso"))
    train = load_dataset(_required(cfg, "curves"), _required(cfg, "response"))
    valid = None
    if cfg.get("valid_curves"):
        valid = load_dataset(cfg["valid_curves"], _required(cfg, "valid_response"))
    rule = _rule(cfg, "validation" if valid is not None else "cv")
    _check_dims(kind, rule.q_candidates, rule.d_candidates, method, len(train.grid))
    if rule.mode == "validation":
        if valid is None:
            raise ConfigError("validation tuning needs valid_curves and valid_response")
        report = tune_validation(train, valid, rule, method, penalty, kind)
    else:
        if rule.k > train.n:
            raise ConfigError(f"k={rule.k} exceeds the sample size n={train.n}")
        report = tune_cv(train, rule, method, penalty, kind)
    doc = report.to_dict()
    doc["penalty"] = penalty.to_string()
    doc["basis"] = kind
    if cfg.get("out"):
        save_json(cfg["out"], doc)
    _emit({"lambda": report.lam, "q": report.q, "d": report.d})
    return EXIT_OK


def _sim_objects(cfg: dict):
    if cfg.get("rng", RNG_ALGORITHM) != RNG_ALGORITHM:
        raise ConfigError(f"only the {RNG_ALGORITHM} generator is supported")
    sim = dict(cfg.get("simulation", {}))
    if "seed" in cfg:
        sim["seed"] = int(cfg["seed"])
    if "replicates" in cfg:
        sim["replicates"] = int(cfg["replicates"])
    known = {f.name for f in fields(SimConfig)}
    if set(sim) - known:
        raise ConfigError(f"unknown simulation keys: {sorted(set(sim) - known)}")
    config = SimConfig(**sim)
    raw = dict(cfg.get("settings", {}))
    settings = MethodSettings.default_for(config.scenario)
    known = {f.name for f in fields(MethodSettings)}
    if set(raw) - known:
        raise ConfigError(f"unknown method settings: {sorted(set(raw) - known)}")
    for key in ("penalty", "basis"):
        if key in cfg:
            raw["basis_kind" if key == "basis" else key] = cfg[key]
    if "q" in cfg:
        raw["q_candidates"] = _int_list(cfg["q"])
    if "d" in cfg:
        raw["d_candidates"] = _int_list(cfg["d"])
    for key in ("q_candidates", "d_candidates"):
        if key in raw:
            raw[key] = _int_list(raw[key])
    settings = MethodSettings(**{**settings.__dict__, **raw})
    parse_penalty(settings.penalty)
    if config.scenario == "nonlinear" and settings.method != "nonlinear":
        raise ConfigError("the nonlinear scenario must be fitted with the nonlinear method")
    _check_dims(settings.basis_kind, settings.q_candidates, settings.d_candidates, settings.method, config.T)
    return config, settings


def cmd_simulate(cfg: dict) -> int:
    try:
        config, settings = _sim_objects(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    out = Path(_required(cfg, "out"))
    metrics, records = run_study(config, settings)
    write_study(out, out.with_suffix(".jsonl"), config, settings, metrics, records)
    _emit(study_row(config, settings, metrics) | {"replicates": metrics.replicates, "failures": metrics.failures})
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "tune": cmd_tune, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="seed for folds and simulations")
    common.add_argument("--penalty", help="lasso, scad or scad:a=A")
    common.add_argument("--lambda", dest="lambda", help="penalty level, or 'path' to tune it")
    common.add_argument("--q", help="basis dimension: INT, comma list, or LO..HI")
    common.add_argument("--d", help="link basis dimension: INT, comma list, or LO..HI")
    common.add_argument("--out", help="output file")
    common.add_argument("--strict", action="store_true", help="exit 4 if the fit does not converge")
    common.add_argument("--method", choices=("linear", "nonlinear"))
    common.add_argument("--basis", choices=("spline", "fourier"))
    common.add_argument("--curves", help="curve CSV")
    common.add_argument("--response", help="response CSV")
    common.add_argument("--valid-curves", dest="valid_curves", help="validation curve CSV")
    common.add_argument("--valid-response", dest="valid_response", help="validation response CSV")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="far", description="Sparse functional additive regression.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit a model and write it as JSON")
    sub.add_parser("tune", parents=[common], help="search lambda, q and d; write a tuning report")
    p = sub.add_parser("predict", parents=[common], help="predict from a saved model")
    p.add_argument("--model", help="model JSON written by 'fit'")
    p = sub.add_parser("simulate", parents=[common], help="run a simulation study")
    p.add_argument("--replicates", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        cfg.pop("verbose", None)
        return COMMANDS[args.command](cfg)
    except (InputError, BasisError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StrictFailure as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_STRICT
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
