"""
Benchmark-average versus factor-score rankings, cubic B-spline trends
with +/- 2 SE bands, and the data files behind the comparison plots.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.interpolate import BSpline

PARAMS_KNOT = 70.0


def benchmark_average(data):
    """Per-model arithmetic mean over parcels (the leaderboard's ranking)."""
    scores = getattr(data, "scores", data)
    return np.asarray(scores, dtype=float).mean(axis=1)


@dataclass
class RankComparison:
    spearman: float
    kendall: float
    rank_average: np.ndarray
    rank_theta: np.ndarray
    theta: np.ndarray = field(repr=False)
    se_theta: float = 0.0

    def indistinguishable(self, i, j):
        """True when the +/- 1 SE whiskers of models i and j overlap."""
        return bool(abs(self.theta[i] - self.theta[j]) <= 2.0 * self.se_theta)

    def indistinguishable_matrix(self):
        t = self.theta
        return np.abs(t[:, None] - t[None, :]) <= 2.0 * self.se_theta

    def n_indistinguishable(self):
        """For each model, how many other models it cannot be told apart from."""
        order = np.sort(self.theta)
        w = 2.0 * self.se_theta
        hi = np.searchsorted(order, self.theta + w, side="right")
        lo = np.searchsorted(order, self.theta - w, side="left")
        return hi - lo - 1

    def to_dict(self):
        return {"spearman": self.spearman, "kendall": self.kendall, "se_theta": self.se_theta,
                "mean_n_indistinguishable": float(self.n_indistinguishable().mean())}


def _rank_desc(x):
    return stats.rankdata(-np.asarray(x), method="min").astype(int)


def rank_compare(avg, theta, se_theta):
    """Rank correlations and SE-overlap flags between two scorings."""
    avg = np.asarray(avg, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if avg.shape != theta.shape:
        raise ValueError("avg and theta must have equal length")
    rho = stats.spearmanr(avg, theta).statistic
    tau = stats.kendalltau(avg, theta).statistic
    return RankComparison(float(rho), float(tau), _rank_desc(avg), _rank_desc(theta), theta, float(se_theta))


@dataclass
class TrendFit:
    """Least-squares cubic B-spline with a band of +/- 2 prediction SEs."""

    x_name: str
    y_name: str
    x: np.ndarray
    y: np.ndarray
    internal_knots: np.ndarray
    coefficients: np.ndarray
    sigma2: float
    grid: np.ndarray
    fit: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    degree: int = 3
    ridge: float = 0.0
    knots: np.ndarray = field(default=None, repr=False)
    _cov_unscaled: np.ndarray = field(default=None, repr=False)

    def basis(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.knots[0], self.knots[-1])
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def predict(self, x, return_se=False):
        B = self.basis(x)
        f = B @ self.coefficients
        if not return_se:
            return f
        se = np.sqrt(self.sigma2 * np.einsum("ij,jk,ik->i", B, self._cov_unscaled, B))
        return f, se

    def rows(self):
        return [{"x": g, "fit": f, "lower": lo, "upper": hi}
                for g, f, lo, hi in zip(self.grid, self.fit, self.lower, self.upper)]


def knots_for(x, rule="percentile"):
    """Internal knots at the 25/50/75th percentiles, plus 70 for ``percentile_plus_70B``."""
    x = np.asarray(x, dtype=float)
    kn = list(np.percentile(x, [25, 50, 75]))
    if rule == "percentile_plus_70B":
        if x.min() < PARAMS_KNOT < x.max():
            kn.append(PARAMS_KNOT)
    elif rule != "percentile":
        raise ValueError(f"unknown knot rule {rule!r}")
    kn = np.unique(kn)
    return kn[(kn > x.min()) & (kn < x.max())]


def spline_trend(x, y, knot_rule="percentile", n_grid=101, x_name="x", y_name="y"):
    """Fit ``y ~ B-spline(x)`` and its mean-curve band on an even grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    if len(x) < 10:
        raise ValueError("need at least 10 points for a spline trend")
    if np.ptp(x) <= 0:
        raise ValueError("x is degenerate")
    k = 3
    internal = knots_for(x, knot_rule)
    t = np.r_[[x.min()] * (k + 1), internal, [x.max()] * (k + 1)]
    B = BSpline.design_matrix(x, t, k).toarray()
    BtB = B.T @ B
    ridge = 0.0
    if np.linalg.matrix_rank(BtB) < BtB.shape[0]:
        ridge = 1e-10
        BtB = BtB + ridge * np.eye(BtB.shape[0])
    cov = np.linalg.inv(BtB)
    coef = cov @ (B.T @ y)
    resid = y - B @ coef
    dof = max(len(x) - B.shape[1], 1)
    sigma2 = float(resid @ resid / dof)
    grid = np.linspace(x.min(), x.max(), n_grid)
    tf = TrendFit(x_name, y_name, x, y, internal, coef, sigma2, grid, grid, grid, grid,
                  k, ridge, t, cov)
    f, se = tf.predict(grid, return_se=True)
    tf.fit, tf.lower, tf.upper = f, f - 2 * se, f + 2 * se
    return tf


def default_trends(data, scores):
    """The comparison curves that the available metadata supports."""
    trends = []
    avg = benchmark_average(data)
    trends.append(spline_trend(avg, scores.theta, "percentile", x_name="benchmark_average", y_name="theta"))

    def meta(name):
        vals = data.metadata.get(name)
        if vals is None:
            return None
        arr = np.array([np.nan if v is None else float(v) for v in vals])
        return arr

    params = meta("param_count_billions")
    co2 = meta("co2_kg")
    for xv, yv, xn, yn, rule in [
        (params, scores.theta, "param_count_billions", "theta", "percentile_plus_70B"),
        (co2, scores.theta, "co2_kg", "theta", "percentile"),
        (params, co2, "param_count_billions", "co2_kg", "percentile_plus_70B"),
    ]:
        if xv is None or yv is None:
            continue
        ok = np.isfinite(xv) & np.isfinite(yv)
        if ok.sum() >= 10 and np.ptp(xv[ok]) > 0:
            trends.append(spline_trend(xv[ok], yv[ok], rule, x_name=xn, y_name=yn))
    return trends


def group_summaries(data, scores):
    """Dispersion of theta and of the benchmark average per architecture / model type."""
    avg = benchmark_average(data)
    out = {}
    for key in ("architecture", "model_type"):
        vals = data.metadata.get(key)
        if not vals or all(v is None for v in vals):
            continue
        rows = []
        for g in sorted({v for v in vals if v is not None}):
            idx = np.array([i for i, v in enumerate(vals) if v == g])
            th, av = scores.theta[idx], avg[idx]
            rows.append({
                "group": g, "n": int(len(idx)),
                "theta_mean": float(th.mean()), "theta_sd": float(th.std(ddof=1)) if len(idx) > 1 else 0.0,
                "average_mean": float(av.mean()), "average_sd": float(av.std(ddof=1)) if len(idx) > 1 else 0.0,
            })
        out[key] = rows
    return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def _write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def emit_comparison(data, scores, trends, out_dir):
    """Write the comparison table, trend grids and group summaries.

    Returns a dict of written paths keyed by artifact name.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    path = out / "comparison.csv"
    scores.write_csv(path)
    written["comparison"] = str(path)
    for tf in trends:
        path = out / f"trend_{tf.y_name}_vs_{tf.x_name}.csv"
        _write_rows(path, tf.rows())
        written[f"trend:{tf.y_name}~{tf.x_name}"] = str(path)
    groups = group_summaries(data, scores)
    for key, rows in groups.items():
        path = out / f"groups_{key}.csv"
        _write_rows(path, rows)
        written[f"groups:{key}"] = str(path)
    cmp_ = rank_compare(benchmark_average(data), scores.theta, scores.se_theta)
    summary = {
        "n_models": len(scores.model_ids),
        "se_theta": scores.se_theta,
        "reliability": scores.reliability,
        "ranking": cmp_.to_dict(),
        "trends": [{"x": t.x_name, "y": t.y_name, "internal_knots": t.internal_knots.tolist(),
                    "sigma2": t.sigma2, "ridge": t.ridge} for t in trends],
        "groups": groups,
    }
    path = out / "comparison_summary.json"
    path.write_text(json.dumps(round_floats(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written["summary"] = str(path)
    return written


def round_floats(obj, digits=9):
    """Recursively round floats to ``digits`` significant digits for stable output."""
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.{digits}g}") if np.isfinite(v) else None
    if isinstance(obj, dict):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist(), digits)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
