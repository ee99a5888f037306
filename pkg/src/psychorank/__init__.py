"""Psychometric re-ranking of LLM leaderboards.

Fits a one-factor continuous response model (linear factor analysis on
logit scores) to a models x benchmarks table and turns it into ability
estimates with standard errors, fit diagnostics and ranking comparisons.
"""

__version__ = "0.1.0"

from .crm import CrmItemParams, crm_convert, crm_density, crm_icc
from .estimator import EstimatorOptions, FitResult, chi_square, fit_ml, standard_errors, yb_scaling
from .fit_indices import FitIndexReport, aic, baseline_fit, cfi_tli, classify_fit, fit_indices, rmsea, srmr
from .ingest import IngestConfig, LogitMatrix, ParcelMatrix, load_leaderboard, normalize_score, to_logit
from .model import ModelSpec, ParamSet, implied_sigma, log_likelihood, model_df, standardize
from .modsearch import GreedyConfig, GreedyTrace, candidate_scores, detect_heywood, greedy_improve
from .ranking import benchmark_average, emit_comparison, rank_compare, spline_trend
from .scoring import ScoreTable, map_scores, reliability, score_se, score_table
from .simulator import GenConfig, recovery_report, simulate_crm, v1_truth

__all__ = [
    "CrmItemParams", "EstimatorOptions", "FitIndexReport", "FitResult", "GenConfig", "GreedyConfig",
    "GreedyTrace", "IngestConfig", "LogitMatrix", "ModelSpec", "ParamSet", "ParcelMatrix", "ScoreTable",
    "aic", "baseline_fit", "benchmark_average", "candidate_scores", "cfi_tli", "chi_square", "classify_fit",
    "crm_convert", "crm_density", "crm_icc", "detect_heywood", "emit_comparison", "fit_indices", "fit_ml",
    "greedy_improve", "implied_sigma", "load_leaderboard", "log_likelihood", "map_scores", "model_df",
    "normalize_score", "rank_compare", "recovery_report", "reliability", "rmsea", "score_se", "score_table",
    "simulate_crm", "spline_trend", "srmr", "standard_errors", "standardize", "v1_truth", "to_logit",
    "yb_scaling",
]
