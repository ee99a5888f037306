"""
Greedy search for residual covariances
======================================

Plant a residual covariance between two parcels, start from the plain
one-factor model and let the greedy search free parameters until the
fit is acceptable.
"""

import numpy as np

from psychorank.estimator import EstimatorOptions, fit_ml
from psychorank.ingest import LogitMatrix
from psychorank.model import ModelSpec, ParamSet
from psychorank.modsearch import GreedyConfig, candidate_scores, greedy_improve
from psychorank.simulator import GenConfig, simulate_logits

lam = np.array([0.8, 0.75, 0.7, 0.65, 0.7, 0.75])
psi = np.diag(1 - lam ** 2)
psi[1, 3] = psi[3, 1] = -0.5 * np.sqrt(psi[1, 1] * psi[3, 3])
truth = ParamSet(np.zeros(6), lam[:, None], np.eye(1), psi)

V, _ = simulate_logits(GenConfig(2000, truth, seed=4))
data = LogitMatrix.from_logits(V, parcel_ids=["A", "B", "C", "D", "E", "F"])

# The modification index here is the exact chi-square drop of a refit.
fit = fit_ml(data, ModelSpec.one_factor(6))
for cand in candidate_scores(fit, data)[:5]:
    print(cand.pair, round(cand.delta_T, 2))

trace = greedy_improve(data, ModelSpec.one_factor(6), GreedyConfig(), EstimatorOptions(compute_se=False))
print("stop reason:", trace.stop_reason)
for step in trace.steps:
    print(step.added_pair, f"dT={step.delta_T:.2f}", f"AIC={step.aic:.2f}", "accepted" if step.accepted else "")
print("final residual covariances:", trace.final_fit.spec.residual_pairs)

# %%
# Stopping on AIC alone keeps adding small, noise-level covariances.
loose = greedy_improve(data, ModelSpec.one_factor(6), GreedyConfig(stop_on="aic", max_iter=4),
                       EstimatorOptions(compute_se=False))
print([s.added_pair for s in loose.accepted_steps], loose.stop_reason)
