"""
MAP factor scores, their posterior standard error and composite reliability.

In the linear Gaussian model the posterior of a model's ability given its
logit scores is normal, so the MAP estimate is a fixed linear map of the
centred data and the posterior variance is the same for every row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import implied_sigma


def _params(fit_or_params):
    return getattr(fit_or_params, "params", fit_or_params)


def map_scores(fit, V):
    """``Xi Lambda' (Lambda Xi Lambda' + Psi)^-1 (V_m - mu)`` for every row of ``V``.

    ``V`` may be a LogitMatrix or an (M, P) array; rows not used in the
    fit are scored with the frozen parameters.
    """
    p = _params(fit)
    V = np.asarray(getattr(V, "V", V), dtype=float)
    sigma = implied_sigma(p)
    B = np.linalg.solve(sigma, p.lam @ p.xi)  # Sigma^-1 Lambda Xi, (P, F)
    theta = (V - p.mu) @ B
    return theta[:, 0] if theta.shape[1] == 1 else theta


def map_scores_precision_form(fit, V):
    """Same scores via ``(Lambda' Psi^-1 Lambda + Xi^-1)^-1 Lambda' Psi^-1 (V_m - mu)``."""
    p = _params(fit)
    V = np.asarray(getattr(V, "V", V), dtype=float)
    pinv = np.linalg.inv(p.psi)
    prec = p.lam.T @ pinv @ p.lam + np.linalg.inv(p.xi)
    theta = (V - p.mu) @ (pinv @ p.lam) @ np.linalg.inv(prec).T
    return theta[:, 0] if theta.shape[1] == 1 else theta


def posterior_cov(fit, form="auto"):
    """Posterior covariance of the ability.

    ``form="precision"`` uses ``(Xi^-1 + Lambda' Psi^-1 Lambda)^-1``;
    ``form="covariance"`` uses ``Xi - Xi Lambda' Sigma^-1 Lambda Xi`` which
    only needs Sigma invertible. ``auto`` tries the first and falls back.
    """
    p = _params(fit)
    if form in ("auto", "precision"):
        try:
            pinv = np.linalg.inv(p.psi)
            if not np.all(np.isfinite(pinv)):
                raise np.linalg.LinAlgError("singular Psi")
            return np.linalg.inv(np.linalg.inv(p.xi) + p.lam.T @ pinv @ p.lam)
        except np.linalg.LinAlgError:
            if form == "precision":
                raise
    lx = p.lam @ p.xi
    return p.xi - lx.T @ np.linalg.solve(implied_sigma(p), lx)


def score_se(fit, form="auto"):
    """Posterior standard deviation of the ability (scalar for one factor)."""
    cov = posterior_cov(fit, form)
    se = np.sqrt(np.diag(cov))
    return float(se[0]) if se.size == 1 else se


def reliability(fit, S=None, use_implied=False):
    """Composite reliability ``(sum lambda)^2 / 1'S1`` for a one-factor model.

    ``S`` defaults to the sample covariance stored on the fit; with
    ``use_implied`` the model-implied covariance is used instead. The raw
    value is returned; clip for display.
    """
    p = _params(fit)
    if p.lam.shape[1] != 1:
        raise ValueError("composite reliability is defined here for one factor")
    if use_implied:
        S = implied_sigma(p)
    elif S is None:
        S = fit.S
    total = float(np.sum(S))
    if total <= 0:
        raise ValueError("nonpositive total variance")
    return float(p.lam[:, 0].sum() ** 2 / total)


@dataclass
class ScoreTable:
    """Per-model abilities with their (common) posterior SE."""

    model_ids: list
    theta: np.ndarray
    se_theta: float
    reliability: float
    benchmark_average: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def reliability_clipped(self):
        return float(min(max(self.reliability, 0.0), 1.0))

    def ranks(self, values):
        """1 = best; ties share the lower rank."""
        from scipy.stats import rankdata

        return rankdata(-np.asarray(values), method="min").astype(int)

    def records(self):
        rank_t = self.ranks(self.theta)
        rank_a = self.ranks(self.benchmark_average) if self.benchmark_average is not None else None
        out = []
        for i, mid in enumerate(self.model_ids):
            rec = {"model_id": mid, "theta": float(self.theta[i]), "se_theta": self.se_theta}
            if self.benchmark_average is not None:
                rec["benchmark_average"] = float(self.benchmark_average[i])
            rec["rank_theta"] = int(rank_t[i])
            if rank_a is not None:
                rec["rank_average"] = int(rank_a[i])
            for k, v in self.metadata.items():
                rec[k] = v[i]
            out.append(rec)
        return out

    def write_csv(self, path):
        """Floats are written in shortest round-trip form, so re-reading is exact."""
        recs = self.records()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(recs[0]), lineterminator="\n")
            w.writeheader()
            for r in recs:
                w.writerow({k: (repr(v) if isinstance(v, float) else ("" if v is None else v))
                            for k, v in r.items()})


def score_table(fit, logits, data=None):
    """Score every row of ``logits`` and join model ids and metadata."""
    avg = np.asarray(data.scores).mean(axis=1) if data is not None else None
    meta = dict(data.metadata) if data is not None else {}
    return ScoreTable(list(logits.model_ids), map_scores(fit, logits), score_se(fit),
                      reliability(fit, logits.S), avg, meta)
