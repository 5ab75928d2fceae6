"""Standard synthetic control engine."""

from .core import (
    OUTCOME_ANNUAL,
    OUTCOME_CUMULATIVE,
    BalanceRow,
    ScConfig,
    ScFit,
    ScreenedFit,
    ScWeights,
    ValidationResult,
    balance_table,
    fit_with_screening,
    predictor_value,
    screen_donors,
    solve_nested,
    validate_split,
    validation_rule,
)
from .placebo import PlaceboReport, run_placebos
from .simplex import SimplexSolution, simplex_lstsq, solve_inner_weights

__all__ = [
    "OUTCOME_ANNUAL", "OUTCOME_CUMULATIVE", "BalanceRow", "ScConfig", "ScFit", "ScreenedFit",
    "ScWeights", "ValidationResult", "balance_table", "fit_with_screening", "predictor_value",
    "screen_donors", "solve_nested", "validate_split", "validation_rule", "PlaceboReport",
    "run_placebos", "SimplexSolution", "simplex_lstsq", "solve_inner_weights",
]
