"""
Fitting a one-factor model to a simulated leaderboard
=====================================================

Simulate 2000 models whose six benchmark scores follow the continuous
response model, fit the one-factor CFA by maximum likelihood and look at
the estimates, standard errors and global fit.
"""

import numpy as np

from psychorank.estimator import fit_ml
from psychorank.fit_indices import baseline_fit, fit_indices
from psychorank.ingest import to_logit
from psychorank.model import ModelSpec, standardize
from psychorank.simulator import GenConfig, simulate_crm, v1_truth

# Truth: standardized loadings of the v1 leaderboard, unit-variance logits.
truth = v1_truth(mu=np.array([0.2, 1.0, 0.1, -0.1, 0.8, -0.9]))
data, theta_true = simulate_crm(GenConfig(2000, truth, seed=1))
print(data.scores[:3].round(3))

# Bounded scores go to the logit scale before modelling.
logits = to_logit(data)
print("clamped cells:", logits.clamp_count)

fit = fit_ml(logits, ModelSpec.one_factor(data.n_parcels))
print(fit.message, "after", fit.iterations, "iterations")

for label, est, se in zip(fit.labels, fit.estimates(), fit.se):
    print(f"{label:24s} {est:8.3f} {se:7.3f}")

std = standardize(fit.params)
print("standardized loadings", std.loadings[:, 0].round(3))
print("truth                ", truth.lam[:, 0])

# %%
# Global fit. The truth is one-factor, so the indices should look good.
baseline = baseline_fit(logits)
report = fit_indices(fit, baseline)
print(f"T = {fit.T:.2f} on {fit.df} df, p = {fit.p_value:.3f}, Yuan-Bentler c = {fit.scaling_c:.3f}")
print(report.to_dict())
