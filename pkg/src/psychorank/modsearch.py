"""
Greedy model improvement by freeing residual covariances.

Each round refits the model once per still-fixed parcel pair (an exact
likelihood-ratio modification index), frees the pair with the largest
chi-square drop, refits, and stops on acceptable fit, an inadmissible or
failed refit (rolled back), no AIC gain, or the iteration cap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .estimator import EstimationError, EstimatorOptions, FitResult, detect_heywood, fit_ml, quick_options
from .fit_indices import FitIndexReport, baseline_fit, fit_indices

log = logging.getLogger(__name__)

__all__ = ["Candidate", "GreedyConfig", "GreedyStep", "GreedyTrace", "candidate_scores",
           "detect_heywood", "greedy_improve"]

STOP_REASONS = ("acceptable_fit", "heywood", "nonconvergence", "aic_no_improvement",
                "max_iterations", "no_candidates")


@dataclass
class Candidate:
    pair: tuple
    delta_T: float
    delta_aic: float
    converged: bool
    fit: FitResult = field(repr=False)


def candidate_scores(fit, data, spec=None, options=None):
    """Rank every fixed residual covariance by the chi-square drop of its refit.

    Candidates whose refit did not converge are ranked last. Ties on
    ``delta_T`` are broken by the lexicographic order of the pair.
    """
    spec = spec or fit.spec
    opts = quick_options(options)
    out = []
    for pair in spec.candidate_pairs():
        new = fit_ml(data, spec.with_residual_cov(*pair), opts, start=fit)
        out.append(Candidate(pair, fit.T - new.T, new.aic - fit.aic, new.converged, new))
    out.sort(key=lambda c: (not c.converged, -c.delta_T, c.pair))
    return out


@dataclass(frozen=True)
class GreedyConfig:
    """Stopping rules.

    ``stop_on``: ``"acceptable"`` stops once no index is poor (and on an
    AIC that fails to improve); ``"aic"`` ignores the indices and stops
    only when AIC fails to improve; ``"never"`` runs until the cap, a
    Heywood case, non-convergence or exhaustion of candidates.
    ``variant`` picks naive or scaled statistics for the acceptability check.
    """

    max_iter: int = 10
    stop_on: str = "acceptable"
    variant: str = "naive"

    def __post_init__(self):
        if self.stop_on not in ("acceptable", "aic", "never"):
            raise ValueError("stop_on must be 'acceptable', 'aic' or 'never'")
        if self.variant not in ("naive", "scaled"):
            raise ValueError("variant must be 'naive' or 'scaled'")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass
class GreedyStep:
    added_pair: tuple
    fit: FitResult
    indices: FitIndexReport
    delta_T: float
    aic: float
    accepted: bool = False

    def to_dict(self, parcel_ids):
        i, j = self.added_pair
        return {
            "added_pair": [parcel_ids[i], parcel_ids[j]],
            "delta_T": self.delta_T,
            "aic": self.aic,
            "accepted": self.accepted,
            "converged": self.fit.converged,
            "heywood": [parcel_ids[h] for h in self.fit.heywood],
            "T": self.fit.T,
            "T_scaled": self.fit.T_scaled,
            "df": self.fit.df,
            "indices": self.indices.to_dict(),
        }


@dataclass
class GreedyTrace:
    """Every attempted addition plus the model the search settled on.

    ``final`` counts accepted additions: 0 means the initial model, ``k``
    means ``steps[k - 1]``.
    """

    initial: FitResult
    initial_indices: FitIndexReport
    baseline: FitResult
    steps: list = field(default_factory=list)
    stop_reason: str = ""
    final: int = 0

    @property
    def final_fit(self):
        return self.initial if self.final == 0 else self.steps[self.final - 1].fit

    @property
    def final_indices(self):
        return self.initial_indices if self.final == 0 else self.steps[self.final - 1].indices

    @property
    def accepted_steps(self):
        return [s for s in self.steps if s.accepted]

    def to_dict(self):
        ids = self.initial.parcel_ids
        return {
            "stop_reason": self.stop_reason,
            "final": self.final,
            "initial": {"aic": self.initial.aic, "T": self.initial.T, "df": self.initial.df,
                        "indices": self.initial_indices.to_dict()},
            "steps": [s.to_dict(ids) for s in self.steps],
        }


def greedy_improve(data, spec, stop=None, options=None):
    """Run the greedy residual-covariance search starting from ``spec``."""
    stop = stop or GreedyConfig()
    options = options or EstimatorOptions()
    current = fit_ml(data, spec, options)
    if not current.converged:
        raise EstimationError(f"initial fit did not converge ({current.message})")
    baseline = baseline_fit(data, options)
    idx = fit_indices(current, baseline, stop.variant)
    trace = GreedyTrace(current, idx, baseline)

    while True:
        if stop.stop_on == "acceptable" and idx.acceptable():
            trace.stop_reason = "acceptable_fit"
            break
        if len(trace.steps) >= stop.max_iter:
            trace.stop_reason = "max_iterations"
            break
        cands = candidate_scores(current, data, current.spec, options)
        if not cands:
            trace.stop_reason = "no_candidates"
            break
        best = cands[0]
        new = fit_ml(data, current.spec.with_residual_cov(*best.pair), options, start=best.fit)
        new_idx = fit_indices(new, baseline, stop.variant) if new.converged else idx
        step = GreedyStep(best.pair, new, new_idx, current.T - new.T, new.aic)
        trace.steps.append(step)
        log.info("step %d: add %s, delta_T=%.3f, AIC=%.3f", len(trace.steps), best.pair, step.delta_T, new.aic)
        if not new.converged:
            trace.stop_reason = "nonconvergence"
            break
        if new.heywood:
            trace.stop_reason = "heywood"
            break
        if stop.stop_on != "never" and not new.aic < current.aic:
            trace.stop_reason = "aic_no_improvement"
            break
        step.accepted = True
        trace.final = len(trace.steps)
        current, idx = new, new_idx
    return trace
