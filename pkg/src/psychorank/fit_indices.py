"""
Global fit indices (SRMR, RMSEA with 90% CI, CFI, TLI), their cut-off
classification, the independence baseline and AIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .estimator import EstimatorOptions, fit_ml
from .model import ModelSpec

GOOD, ACCEPTABLE, POOR, NA = "good", "acceptable", "poor", "n/a"


def srmr(S, Sigma):
    """Standardised root mean square residual over the unique covariances."""
    S = np.asarray(S, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    d = np.diag(S)
    if np.any(d <= 0):
        raise ValueError("nonpositive sample variance")
    resid = (S - Sigma) / np.sqrt(np.outer(d, d))
    iu = np.triu_indices_from(S)
    return float(np.sqrt(np.sum(resid[iu] ** 2) / len(iu[0])))


def ncx2_cdf(x, df, nc, tail=1e-12):
    """Noncentral chi-square CDF as a Poisson mixture of central chi-square CDFs.

    Terms are added outward from the Poisson mode until the omitted
    Poisson mass is below ``tail``.
    """
    if x <= 0:
        return 0.0
    if nc <= 0:
        return float(stats.chi2.cdf(x, df))
    half = nc / 2.0
    mode = int(math.floor(half))
    width = max(10, int(8 * math.sqrt(half)) + 10)
    while True:
        lo = max(0, mode - width)
        j = np.arange(lo, mode + width + 1)
        w = stats.poisson.pmf(j, half)
        if 1.0 - w.sum() < tail or lo == 0 and stats.poisson.sf(j[-1], half) < tail:
            break
        width *= 2
    return float(np.clip(np.sum(w * stats.chi2.cdf(x, df + 2 * j)), 0.0, 1.0))


def _solve_nc(T, df, target):
    """Noncentrality ``nc`` with ``ncx2_cdf(T; df, nc) = target`` (0 if none)."""
    if ncx2_cdf(T, df, 0.0) < target:
        return 0.0
    hi = max(1.0, T)
    while ncx2_cdf(T, df, hi) > target:
        hi *= 2.0
    return optimize.brentq(lambda nc: ncx2_cdf(T, df, nc) - target, 0.0, hi, xtol=1e-10, rtol=1e-12)


def rmsea(T, df, n_obs, with_ci=True):
    """RMSEA ``sqrt(max(T - df, 0) / (df N))`` and its 90% interval.

    Returns ``(rmsea, (lo, hi))``; the interval is ``None`` when
    ``with_ci`` is False.
    """
    if df < 1:
        raise ValueError("RMSEA needs df >= 1")
    est = math.sqrt(max(T - df, 0.0) / (df * n_obs))
    if not with_ci:
        return est, None
    lo = math.sqrt(_solve_nc(T, df, 0.95) / (df * n_obs))
    hi = math.sqrt(_solve_nc(T, df, 0.05) / (df * n_obs))
    return est, (lo, hi)


def cfi_tli(T_t, df_t, T_b, df_b):
    """Comparative fit index and Tucker-Lewis index against a baseline.

    TLI is ``None`` when ``T_b / df_b <= 1``.
    """
    if df_t < 1 or df_b < 1:
        raise ValueError("CFI/TLI need positive degrees of freedom")
    num = max(T_t - df_t, 0.0)
    den = max(T_b - df_b, T_t - df_t, 0.0)
    cfi = 1.0 if den == 0 else 1.0 - num / den
    cfi = min(max(cfi, 0.0), 1.0)
    rb = T_b / df_b
    tli = None if rb <= 1.0 else (rb - T_t / df_t) / (rb - 1.0)
    return cfi, tli


def aic(loglik, n_free_params):
    return -2.0 * loglik + 2.0 * n_free_params


def baseline_fit(data, options=None):
    """Independence model: diagonal Psi, free means, no factor.

    The ML solution is closed form (``psi_pp = s_pp``); it is passed as the
    starting point so the optimiser only confirms it.
    """
    spec = ModelSpec.independence(data.n_vars)
    start = np.diag(data.S).copy()
    return fit_ml(data, spec, options or EstimatorOptions(), start=start)


def _classify_misfit(x):
    if x is None or not np.isfinite(x):
        return NA
    return GOOD if x < 0.05 else ACCEPTABLE if x < 0.08 else POOR


def _classify_incremental(x):
    if x is None or not np.isfinite(x):
        return NA
    return GOOD if x > 0.95 else ACCEPTABLE if x > 0.9 else POOR


@dataclass
class FitIndexReport:
    srmr: float
    rmsea: float
    rmsea_ci90: tuple
    cfi: float
    tli: float | None
    aic: float
    variant: str = "naive"
    labels: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "variant": self.variant,
            "srmr": self.srmr,
            "rmsea": self.rmsea,
            "rmsea_ci90": list(self.rmsea_ci90) if self.rmsea_ci90 else None,
            "cfi": self.cfi,
            "tli": self.tli,
            "aic": self.aic,
            "labels": dict(self.labels),
        }

    def acceptable(self):
        """True when no index is classified poor."""
        return all(v != POOR for v in self.labels.values())


def classify_fit(report):
    """Label each index good / acceptable / poor (``n/a`` when undefined)."""
    return {
        "rmsea": _classify_misfit(report.rmsea),
        "srmr": _classify_misfit(report.srmr),
        "cfi": _classify_incremental(report.cfi),
        "tli": _classify_incremental(report.tli),
    }


def fit_indices(fit, baseline, variant="naive"):
    """Build a FitIndexReport from a tested fit and its independence baseline.

    ``variant="scaled"`` feeds the robust-scaled statistics into RMSEA,
    CFI and TLI; SRMR and AIC do not depend on the variant.
    """
    if variant == "naive":
        T, Tb = fit.T, baseline.T
    elif variant == "scaled":
        T, Tb = fit.T_scaled, baseline.T_scaled
    else:
        raise ValueError(f"unknown variant {variant!r}")
    n = fit.n_obs if fit.n_multiplier == "M" else fit.n_obs - 1
    s = srmr(fit.S, fit.sigma)
    if fit.df >= 1 and np.isfinite(T):
        r, ci = rmsea(T, fit.df, n)
        cfi, tli = cfi_tli(T, fit.df, Tb, baseline.df)
    elif fit.df == 0:
        r, ci, cfi, tli = 0.0, (0.0, 0.0), 1.0, 1.0
    else:
        r, ci, cfi, tli = float("nan"), (float("nan"), float("nan")), float("nan"), None
    rep = FitIndexReport(s, r, ci, cfi, tli, fit.aic, variant)
    rep.labels = classify_fit(rep)
    return rep

