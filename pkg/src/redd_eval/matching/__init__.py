"""Genetic matching and panel matching with per-lead DiD effects."""

from .balance import BalanceReport, BalanceRow, MatchSet, balance_report, covariate_matrix, smd
from .genetic import GeneticConfig, GeneticResult, genetic_match
from .panel_match import (
    PANEL_METHODS,
    PanelAtt,
    PanelMatchConfig,
    PanelMatchResult,
    eligible,
    logit_irls,
    mahalanobis_history,
    panel_att,
    panel_match,
)

__all__ = [
    "BalanceReport", "BalanceRow", "MatchSet", "balance_report", "covariate_matrix", "smd",
    "GeneticConfig", "GeneticResult", "genetic_match", "PANEL_METHODS", "PanelAtt", "PanelMatchConfig",
    "PanelMatchResult", "eligible", "logit_irls", "mahalanobis_history", "panel_att", "panel_match",
]
