"""
Item characteristic curves of the continuous response model
===========================================================

Expected benchmark score as a function of ability, computed by
Gauss-Hermite quadrature, next to the deterministic logistic curve.
"""

import numpy as np

from psychorank.crm import CrmItemParams, crm_density, crm_icc
from psychorank.ingest import logistic

item = CrmItemParams(mu=0.5, lam=1.4, sigma=0.9)
print("alpha", round(item.alpha, 3), "tau", round(item.tau, 3))

theta = np.linspace(-3, 3, 7)
print(np.column_stack([theta, crm_icc(theta, item), logistic(item.mu + item.lam * theta)]).round(4))

# The noise pulls the curve towards 0.5 except at the midpoint
print("ICC at tau:", crm_icc(item.tau, item))

# %%
# Conditional density of the score for a weak and a strong model
u = np.linspace(0.01, 0.99, 9)
for th in (-1.0, 1.0):
    print(th, crm_density(u, th, item).round(3))
