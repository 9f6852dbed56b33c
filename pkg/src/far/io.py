"""CSV readers, model/report JSON, and atomic file output."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from far.basis import BasisError, FunctionalDataset, TimeGrid, make_basis
from far.linear_far import LinearFarModel
from far.nonlinear_far import LinkBasis, NonlinearFarModel
from far.penalty import parse_penalty

SCHEMA_DIR = Path(__file__).with_name("schemas")


class InputError(ValueError):
    """Malformed or inconsistent input files."""


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputError(f"{where}: cannot parse {text!r} as a number") from None


def _rows(path):
    try:
        with open(path, newline="") as fh:
            return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def read_curves(path):
    """Wide curve CSV: ``t,<grid>`` header, then ``curve_id,predictor_id,v1..vT`` rows.

    Returns ``(grid, curves, curve_ids, predictor_ids)`` with ``curves`` shaped
    ``(p, n, T)``; ids keep their first-seen order.
    """
    rows = _rows(path)
    if not rows or rows[0][0].strip() != "t":
        raise InputError(f"{path}: header must start with 't'")
    pts = [_float(v, f"{path} header") for v in rows[0][1:]]
    try:
        grid = TimeGrid.from_points(pts)
    except BasisError as exc:
        raise InputError(f"{path}: {exc}") from None
    T = len(grid)
    values, curve_ids, pred_ids = {}, [], []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != T + 2:
            raise InputError(f"{path} line {k}: expected {T + 2} fields, found {len(row)}")
        cid, pid = row[0].strip(), row[1].strip()
        if (cid, pid) in values:
            raise InputError(f"{path} line {k}: duplicate curve ({cid}, {pid})")
        values[cid, pid] = [_float(v, f"{path} line {k}") for v in row[2:]]
        if cid not in curve_ids:
            curve_ids.append(cid)
        if pid not in pred_ids:
            pred_ids.append(pid)
    if not values:
        raise InputError(f"{path}: no curves")
    curves = np.empty((len(pred_ids), len(curve_ids), T))
    for j, pid in enumerate(pred_ids):
        for i, cid in enumerate(curve_ids):
            if (cid, pid) not in values:
                raise InputError(f"{path}: curve_id {cid} has no row for predictor {pid}")
            curves[j, i] = values[cid, pid]
    return grid, curves, tuple(curve_ids), tuple(pred_ids)


def read_response(path) -> dict:
    """``curve_id,y`` CSV (header row required) as an ordered ``{id: y}`` mapping."""
    rows = _rows(path)
    if not rows or [c.strip() for c in rows[0]] != ["curve_id", "y"]:
        raise InputError(f"{path}: header must be 'curve_id,y'")
    out = {}
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise InputError(f"{path} line {k}: expected 2 fields, found {len(row)}")
        cid = row[0].strip()
        if cid in out:
            raise InputError(f"{path} line {k}: duplicate curve_id {cid}")
        out[cid] = _float(row[1], f"{path} line {k}")
    return out


def load_dataset(curves_path, response_path=None) -> FunctionalDataset:
    """Join curves and responses on ``curve_id``; without responses ``y`` is zero."""
    grid, curves, cids, pids = read_curves(curves_path)
    if response_path is None:
        y = np.zeros(len(cids))
    else:
        resp = read_response(response_path)
        missing = [c for c in cids if c not in resp]
        if missing:
            raise InputError(f"{response_path}: no response for curve_id {missing[0]}")
        extra = [c for c in resp if c not in set(cids)]
        if extra:
            raise InputError(f"{curves_path}: no curves for curve_id {extra[0]}")
        y = np.array([resp[c] for c in cids])
    try:
        return FunctionalDataset.from_raw(grid, curves, y, cids, pids)
    except BasisError as exc:
        raise InputError(str(exc)) from None


def write_curves(path, dataset: FunctionalDataset) -> None:
    rows = [["t", *map(repr, dataset.grid.points.tolist())]]
    for i, cid in enumerate(dataset.curve_ids):
        for j, pid in enumerate(dataset.predictor_ids):
            rows.append([str(cid), str(pid), *map(repr, dataset.curves[j, i].tolist())])
    atomic_write(path, _csv_text(rows))


def write_response(path, dataset: FunctionalDataset) -> None:
    rows = [["curve_id", "y"]] + [[str(c), repr(float(v))] for c, v in zip(dataset.curve_ids, dataset.raw_response)]
    atomic_write(path, _csv_text(rows))


def _csv_text(rows) -> str:
    return "".join(",".join(r) + "\n" for r in rows)


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temporary sibling, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(doc) -> str:
    # float repr is the shortest string that round-trips, so JSON is lossless
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def save_json(path, doc) -> None:
    atomic_write(path, dumps(doc))


def model_to_dict(model, predictor_ids=None) -> dict:
    doc = model.to_dict()
    if predictor_ids is not None:
        doc["predictor_ids"] = [str(p) for p in predictor_ids]
    return doc


def model_from_dict(doc: dict):
    """Rebuild a fitted model from its JSON form (enough to predict, not to refit)."""
    try:
        kind = doc["type"]
        penalty = parse_penalty(doc["penalty"], float(doc["lambda"]))
        etas = [np.asarray(e, dtype=float) for e in doc["etas"]]
        mean = float(doc["response_mean"])
        if kind == "linear":
            return LinearFarModel(
                etas=etas,
                fits=np.zeros((len(etas), 0)),
                col_means=[np.asarray(m, dtype=float) for m in doc["col_means"]],
                response_mean=mean,
                penalty=penalty,
                objective=float(doc["objective"]),
                sweeps=int(doc["sweeps"]),
                converged=bool(doc["converged"]),
                basis=doc["basis"],
            )
        if kind == "nonlinear":
            return NonlinearFarModel(
                etas=np.array(etas),
                xis=[np.asarray(x, dtype=float) for x in doc["xis"]],
                links=[LinkBasis.from_dict(lk) if lk is not None else None for lk in doc["links"]],
                h_means=[np.asarray(m, dtype=float) for m in doc["h_means"]],
                fits=np.zeros((len(etas), 0)),
                response_mean=mean,
                penalty=penalty,
                iterations=int(doc["iterations"]),
                converged=bool(doc["converged"]),
                thresholded=bool(doc["thresholded"]),
                basis=doc["basis"],
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model document: {exc!r}") from None
    raise InputError(f"unknown model type {kind!r}")


def read_model_doc(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: a model document must be a JSON object")
    return doc


def load_model(path):
    return model_from_dict(read_model_doc(path))


def model_basis(model, grid: TimeGrid):
    """Re-create the fitted basis on ``grid``, which must match the training grid."""
    spec = model.basis
    if spec is None:
        raise InputError("model carries no basis description")
    if not grid.same_as(TimeGrid.from_points(spec["grid"])):
        raise InputError("curve grid differs from the grid the model was fitted on")
    return make_basis(spec["kind"], int(spec["q"]), grid)


def load_schema(name: str) -> dict:
    with open(SCHEMA_DIR / f"{name}.schema.json") as fh:
        return json.load(fh)
