"""
Continuous response model helpers.

A bounded score ``U = logistic(mu + lambda theta + sigma z)`` with
``z ~ N(0, 1)``. Gives the alternative (alpha, tau) parameterisation, the
conditional S_B density of ``U`` and the item characteristic curve
``E(U | theta)`` by Gauss-Hermite quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ingest import logistic

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class CrmItemParams:
    mu: float
    lam: float
    sigma: float

    def __post_init__(self):
        if not self.lam > 0 or not self.sigma > 0:
            raise ValueError("lambda and sigma must be positive")

    @property
    def alpha(self):
        return self.lam / self.sigma

    @property
    def tau(self):
        return -self.mu / self.lam

    @classmethod
    def from_alpha_tau(cls, alpha, tau, lam):
        """Inverse of the (alpha, tau) conversion given the loading."""
        return cls(-tau * lam, lam, lam / alpha)


def crm_convert(mu, lam, sigma):
    """``(alpha, tau) = (lambda / sigma, -mu / lambda)``."""
    item = CrmItemParams(mu, lam, sigma)
    return item.alpha, item.tau


def crm_density(u, theta, item):
    """Conditional density of a score ``u`` in (0, 1) given ability ``theta``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    z = (np.log(u) - np.log1p(-u) - (item.mu + item.lam * theta)) / item.sigma
    out = np.exp(-0.5 * z * z) / (item.sigma * _SQRT_2PI * u * (1.0 - u))
    return out if out.ndim else float(out)


@lru_cache(maxsize=16)
def normal_quadrature(order):
    """Nodes and weights for expectations under N(0, 1); weights sum to 1."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


def crm_icc(theta, item, quad_order=61):
    """``E(U | theta)``: logistic-normal integral by Gauss-Hermite quadrature.

    ``theta`` may be a scalar or an array.
    """
    if quad_order < 10:
        raise ValueError("quad_order must be >= 10")
    z, w = normal_quadrature(int(quad_order))
    th = np.asarray(theta, dtype=float)
    eta = item.mu + item.lam * th[..., None] + item.sigma * z
    out = logistic(eta) @ w
    return out if np.ndim(out) else float(out)


def items_from_fit(fit):
    """Per-parcel CRM items from a one-factor fit (residual covariances ignored)."""
    p = fit.params
    if p.lam.shape[1] != 1:
        raise ValueError("CRM items need a one-factor fit")
    psi = np.diag(p.psi)
    if np.any(psi <= 0):
        raise ValueError("nonpositive residual variance: no CRM item curve")
    return [CrmItemParams(float(m), float(l), float(np.sqrt(s)))
            for m, l, s in zip(p.mu, p.lam[:, 0], psi)]


def icc_table(fit, theta_grid=None, quad_order=61):
    """Rows ``(theta, E(U_1|theta), ..., E(U_P|theta))`` for every parcel."""
    grid = np.linspace(-4, 4, 81) if theta_grid is None else np.asarray(theta_grid, dtype=float)
    items = items_from_fit(fit)
    cols = [crm_icc(grid, it, quad_order) for it in items]
    return grid, np.column_stack(cols)
