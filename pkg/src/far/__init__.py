"""Functional additive regression: sparse scalar-on-function regression."""

from far.basis import (
    BasisSystem,
    FunctionalDataset,
    TimeGrid,
    center_response,
    make_basis,
    project_all,
    project_curves,
    uniform_grid,
)
from far.penalty import Penalty, parse_penalty
from far.linear_far import (
    FitPath,
    LinearFarModel,
    block_update,
    fit_at_lambda,
    lambda_path,
    predict_linear,
    threshold_linear,
)
from far.nonlinear_far import (
    LinkBasis,
    NonlinearFarModel,
    build_link_design,
    fit_nonlinear,
    init_eta,
    predict_nonlinear,
    threshold_model,
    update_eta_step,
)

__all__ = [
    "BasisSystem",
    "FitPath",
    "FunctionalDataset",
    "LinearFarModel",
    "LinkBasis",
    "NonlinearFarModel",
    "Penalty",
    "TimeGrid",
    "block_update",
    "build_link_design",
    "center_response",
    "fit_at_lambda",
    "fit_nonlinear",
    "init_eta",
    "lambda_path",
    "make_basis",
    "parse_penalty",
    "predict_linear",
    "predict_nonlinear",
    "project_all",
    "project_curves",
    "threshold_linear",
    "threshold_model",
    "uniform_grid",
    "update_eta_step",
]

__version__ = "0.1.0"
