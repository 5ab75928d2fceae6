"""Generalized synthetic control: factor-model counterfactuals and per-lead ATT."""

from .att import ATT_COLUMNS, AttSeries, estimate_att, normal_p_value
from .cv import CvResult, cross_validate_rank
from .model import (
    GscConfig,
    GscModel,
    Projection,
    counterfactual,
    default_lambda_grid,
    fit_ife,
    fit_matrix_completion,
    panel_arrays,
    project_loadings,
)

__all__ = [
    "ATT_COLUMNS", "AttSeries", "estimate_att", "normal_p_value", "CvResult", "cross_validate_rank",
    "GscConfig", "GscModel", "Projection", "counterfactual", "default_lambda_grid", "fit_ife",
    "fit_matrix_completion", "panel_arrays", "project_loadings",
]
