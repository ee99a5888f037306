"""
Synthetic leaderboards drawn from the continuous response model.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, replicate])``, so replicate ``r`` of seed ``s`` is
the same stream on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ParcelMatrix, logistic
from .model import ModelSpec, ParamLayout, ParamSet

V1_PARCELS = ["ARC", "HellaSwag", "MMLU", "TruthfulQA", "WinoGrande", "GSM8K"]
V1_STD_LOADINGS = np.array([0.997, 0.932, 0.918, 0.652, 0.957, 0.740])


def v1_truth(mu=None):
    """Unit-variance one-factor truth built from the v1 leaderboard's standardised loadings.

    ``lambda`` is the standardised loading and ``psi = 1 - lambda^2`` so each
    logit column has variance 1. Intercepts default to 0, which keeps the
    simulated scores away from the clamping margin.
    """
    lam = V1_STD_LOADINGS.copy()
    mu = np.zeros(len(lam)) if mu is None else np.asarray(mu, dtype=float)
    return ParamSet(mu, lam[:, None], np.eye(1), np.diag(1.0 - lam ** 2))


def rng_for(seed, replicate=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(replicate)])))


def _psd_sqrt(psi):
    psi = 0.5 * (psi + psi.T)
    w, Q = np.linalg.eigh(psi)
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ValueError("residual covariance must be positive semi-definite")
    return Q * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class GenConfig:
    """What to simulate.

    ``residual="logistic"`` replaces the normal residuals with standard
    logistic draws rescaled to unit variance before mixing by Psi, giving
    the same covariance but heavier-tailed residuals. Because those stay
    independent of the factor, the normal-theory chi-square remains
    asymptotically valid for them. ``residual="student_t"`` instead scales
    the whole deviation ``Lambda theta + omega`` of a row by one shared
    draw (multivariate t with ``t_df`` degrees of freedom, covariance
    unchanged), which does inflate the chi-square.
    """

    n_obs: int
    params: ParamSet
    seed: int = 0
    replicate: int = 0
    residual: str = "normal"
    parcel_ids: tuple | None = None
    t_df: float = 5.0

    def __post_init__(self):
        if self.n_obs < 2:
            raise ValueError("n_obs must be >= 2")
        if self.residual not in ("normal", "logistic", "student_t"):
            raise ValueError("residual must be 'normal', 'logistic' or 'student_t'")
        if self.residual == "student_t" and not self.t_df > 2:
            raise ValueError("t_df must exceed 2 for a finite covariance")
        _psd_sqrt(self.params.psi)


def simulate_logits(config):
    """Draw ``(V, theta)`` with ``V = mu + Lambda theta + omega``."""
    rng = rng_for(config.seed, config.replicate)
    p = config.params
    m = config.n_obs
    P, F = p.lam.shape
    theta = rng.standard_normal((m, F)) @ np.linalg.cholesky(p.xi).T
    if config.residual == "logistic":
        e = rng.logistic(size=(m, P)) * (np.sqrt(3.0) / np.pi)
    else:
        e = rng.standard_normal((m, P))
    omega = e @ _psd_sqrt(p.psi).T
    if config.residual == "student_t":
        nu = config.t_df
        w = np.sqrt((nu - 2.0) / rng.chisquare(nu, size=m))[:, None]
        theta = theta * w
        omega = omega * w
    V = p.mu + theta @ p.lam.T + omega
    return V, (theta[:, 0] if F == 1 else theta)


def simulate_crm(config):
    """Simulated ParcelMatrix and the true abilities."""
    V, theta = simulate_logits(config)
    tiny = np.finfo(float).eps
    U = np.clip(logistic(V), tiny, 1.0 - tiny)
    P = U.shape[1]
    ids = list(config.parcel_ids) if config.parcel_ids else (
        V1_PARCELS if P == len(V1_PARCELS) else [f"x{i + 1}" for i in range(P)])
    models = [f"sim{i:05d}" for i in range(config.n_obs)]
    return ParcelMatrix(U, models, ids), theta


def truth_vector(truth, spec):
    """Intercepts followed by the free covariance parameters, like ``FitResult.estimates``."""
    layout = ParamLayout(spec)
    return np.concatenate([truth.mu, layout.pack(truth.lam, truth.xi, truth.psi)])


def recovery_report(truth, fits, spec=None):
    """Bias, RMSE, empirical vs reported SE and interval coverage per parameter.

    Returns a dict of arrays aligned with ``labels``; ``within_3se`` is the
    share of replicates whose estimate is within three reported SEs of
    the truth and ``coverage`` the share covered by ``est +/- 1.96 SE``.
    """
    if not fits:
        raise ValueError("no fits given")
    spec = spec or fits[0].spec
    tv = truth_vector(truth, spec)
    est = np.array([f.estimates() for f in fits])
    if est.shape[1] != tv.size:
        raise ValueError("fits and truth have mismatched dimensions")
    se = np.array([f.se if f.se is not None else np.full(tv.size, np.nan) for f in fits])
    err = est - tv
    z = np.abs(err) / se
    return {
        "labels": list(fits[0].labels),
        "truth": tv,
        "bias": err.mean(axis=0),
        "rmse": np.sqrt((err ** 2).mean(axis=0)),
        "empirical_se": est.std(axis=0, ddof=1) if len(fits) > 1 else np.full(tv.size, np.nan),
        "mean_se": se.mean(axis=0),
        "coverage": (z <= 1.959963984540054).mean(axis=0),
        "within_3se": (z <= 3.0).mean(axis=0),
        "n_replicates": len(fits),
        "z": z,
    }


def one_factor_spec(truth):
    """Spec with every parcel loading on one factor and Psi's nonzero off-diagonals free."""
    P = truth.lam.shape[0]
    iu = np.triu_indices(P, 1)
    pairs = [(int(i), int(j)) for i, j in zip(*iu) if truth.psi[i, j] != 0]
    return ModelSpec.one_factor(P, pairs)
