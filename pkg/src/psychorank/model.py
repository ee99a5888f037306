"""
Confirmatory factor model with a mean structure.

``V = mu + Lambda theta + eps`` with ``theta ~ N(0, Xi)``, ``diag(Xi) = 1``
and ``eps ~ N(0, Psi)``. Psi is diagonal apart from the residual
covariances a ModelSpec frees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class SpecError(ValueError):
    """Invalid or over-parameterised model specification."""


class SingularCovarianceError(np.linalg.LinAlgError):
    """Implied covariance is singular or not positive definite."""

    def __init__(self, msg, rcond=float("nan")):
        super().__init__(f"{msg} (reciprocal condition number {rcond:.3g})")
        self.rcond = rcond


def _pair(i, j):
    i, j = int(i), int(j)
    if i == j:
        raise SpecError(f"residual covariance pair ({i}, {j}) is a variance, not a covariance")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class ModelSpec:
    """Which parameters of the factor model are free.

    Parameters
    ----------
    loading_pattern : bool ndarray, shape (P, F)
        True where a loading is estimated. A row of all False is allowed
        (indicator with no factor, as in the independence baseline).
    free_residual_cov : frozenset of (i, j) with i < j
    factor_cov_free : bool ndarray, shape (F, F)
        Symmetric; the diagonal is ignored (factor variances are fixed to 1).
    """

    loading_pattern: np.ndarray
    free_residual_cov: frozenset = frozenset()
    factor_cov_free: np.ndarray | None = None

    def __post_init__(self):
        pat = np.array(self.loading_pattern, dtype=bool)
        if pat.ndim != 2:
            raise SpecError("loading_pattern must be P x F")
        p, f = pat.shape
        pairs = [tuple(x) for x in self.free_residual_cov]
        norm = {_pair(i, j) for i, j in pairs}
        if len(norm) != len(pairs):
            raise SpecError("duplicate residual covariance pair")
        for i, j in norm:
            if not (0 <= i < p and 0 <= j < p):
                raise SpecError(f"residual covariance pair ({i}, {j}) out of range")
        fc = np.zeros((f, f), dtype=bool) if self.factor_cov_free is None else np.array(self.factor_cov_free, dtype=bool)
        if fc.shape != (f, f) or not np.array_equal(fc, fc.T):
            raise SpecError("factor_cov_free must be a symmetric F x F mask")
        np.fill_diagonal(fc, False)
        pat.setflags(write=False)
        fc.setflags(write=False)
        object.__setattr__(self, "loading_pattern", pat)
        object.__setattr__(self, "free_residual_cov", frozenset(norm))
        object.__setattr__(self, "factor_cov_free", fc)

    # constructors -----------------------------------------------------
    @classmethod
    def one_factor(cls, n_vars, residual_covs=()):
        return cls(np.ones((n_vars, 1), dtype=bool), frozenset(residual_covs))

    @classmethod
    def independence(cls, n_vars):
        """Baseline: no factor, diagonal residual covariance."""
        return cls(np.zeros((n_vars, 1), dtype=bool))

    def with_residual_cov(self, i, j):
        pair = _pair(i, j)
        if pair in self.free_residual_cov:
            raise SpecError(f"pair {pair} is already free")
        return ModelSpec(self.loading_pattern, self.free_residual_cov | {pair}, self.factor_cov_free)

    # sizes --------------------------------------------------------------
    @property
    def n_vars(self):
        return self.loading_pattern.shape[0]

    @property
    def n_factors(self):
        return self.loading_pattern.shape[1]

    @property
    def residual_pairs(self):
        """Free residual covariance pairs in lexicographic order."""
        return sorted(self.free_residual_cov)

    @property
    def factor_pairs(self):
        f = self.n_factors
        return [(a, b) for a, b in combinations(range(f), 2) if self.factor_cov_free[a, b]]

    @property
    def n_cov_params(self):
        """Free parameters of the covariance structure."""
        return (int(self.loading_pattern.sum()) + self.n_vars
                + len(self.free_residual_cov) + len(self.factor_pairs))

    @property
    def n_free_params(self):
        """All free parameters, intercepts included (used for AIC)."""
        return self.n_cov_params + self.n_vars

    def candidate_pairs(self):
        """Parcel pairs whose residual covariance is still fixed at zero."""
        return [pr for pr in combinations(range(self.n_vars), 2) if pr not in self.free_residual_cov]

    # serialisation ------------------------------------------------------
    def to_dict(self, parcel_ids=None):
        names = list(parcel_ids) if parcel_ids is not None else list(range(self.n_vars))
        loads = [[names[p], int(f)] for p, f in zip(*np.nonzero(self.loading_pattern))]
        return {
            "n_factors": self.n_factors,
            "n_vars": self.n_vars,
            "loadings": loads,
            "residual_covariances": [[names[i], names[j]] for i, j in self.residual_pairs],
            "factor_covariances": [[a, b] for a, b in self.factor_pairs],
        }

    @classmethod
    def from_dict(cls, d, parcel_ids=None):
        """Build from the structure written by ``to_dict``.

        Parcels may be referred to by name (needs ``parcel_ids``) or index.
        When ``loadings`` is absent every parcel loads on factor 0.
        """
        def idx(x):
            if isinstance(x, (int, np.integer)):
                return int(x)
            if parcel_ids is None:
                raise SpecError(f"parcel name {x!r} given but no parcel ids to resolve it")
            try:
                return list(parcel_ids).index(x)
            except ValueError:
                raise SpecError(f"unknown parcel {x!r}") from None

        p = d.get("n_vars", len(parcel_ids) if parcel_ids is not None else None)
        if p is None:
            raise SpecError("n_vars is required when parcel ids are not supplied")
        f = int(d.get("n_factors", 1))
        pat = np.zeros((p, f), dtype=bool)
        if d.get("loadings") is None:
            pat[:, 0] = True
        else:
            for name, fac in d["loadings"]:
                if not 0 <= int(fac) < f:
                    raise SpecError(f"factor index {fac} out of range")
                pat[idx(name), int(fac)] = True
        fc = np.zeros((f, f), dtype=bool)
        for a, b in d.get("factor_covariances", []):
            fc[a, b] = fc[b, a] = True
        pairs = frozenset(_pair(idx(a), idx(b)) for a, b in d.get("residual_covariances", []))
        return cls(pat, pairs, fc)

    def dumps(self, parcel_ids=None):
        return json.dumps(self.to_dict(parcel_ids), indent=2)

    @classmethod
    def loads(cls, text, parcel_ids=None):
        return cls.from_dict(json.loads(text), parcel_ids)


@dataclass(frozen=True)
class ParamSet:
    """Intercepts, loadings, factor covariance and residual covariance."""

    mu: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("mu", "lam", "xi", "psi"):
            arr = np.array(getattr(self, name), dtype=float)
            if name == "lam" and arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        p, f = self.lam.shape
        if self.mu.shape != (p,) or self.psi.shape != (p, p) or self.xi.shape != (f, f):
            raise SpecError("inconsistent parameter shapes")

    @property
    def sigma(self):
        return self.psi.diagonal() ** 0.5

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("mu", "lam", "xi", "psi")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("mu", "lam", "xi", "psi")})


class ParamLayout:
    """Maps between a ModelSpec's free covariance parameters and a flat vector.

    Order: free loadings (row-major over the pattern), the P residual
    variances, residual covariances (lexicographic), factor covariances.
    """

    def __init__(self, spec):
        self.spec = spec
        self.load_idx = tuple(np.nonzero(spec.loading_pattern))
        self.pairs = spec.residual_pairs
        self.fpairs = spec.factor_pairs
        self.n_load = len(self.load_idx[0])
        self.n_var = spec.n_vars
        self.n_rcov = len(self.pairs)
        self.n_fcov = len(self.fpairs)
        self.size = self.n_load + self.n_var + self.n_rcov + self.n_fcov

    @property
    def slices(self):
        a = self.n_load
        b = a + self.n_var
        c = b + self.n_rcov
        return slice(0, a), slice(a, b), slice(b, c), slice(c, self.size)

    def labels(self, parcel_ids=None):
        names = list(parcel_ids) if parcel_ids is not None else [f"x{i + 1}" for i in range(self.n_var)]
        out = [f"lambda[{names[p]},{f}]" for p, f in zip(*self.load_idx)]
        out += [f"psi[{n}]" for n in names]
        out += [f"psi[{names[i]}~{names[j]}]" for i, j in self.pairs]
        out += [f"xi[{a},{b}]" for a, b in self.fpairs]
        return out

    def unpack(self, theta):
        """Flat vector -> (Lambda, Xi, Psi)."""
        sl, sv, sc, sf = self.slices
        p, f = self.spec.loading_pattern.shape
        lam = np.zeros((p, f))
        lam[self.load_idx] = theta[sl]
        psi = np.diag(np.asarray(theta[sv], dtype=float))
        for (i, j), v in zip(self.pairs, theta[sc]):
            psi[i, j] = psi[j, i] = v
        xi = np.eye(f)
        for (a, b), v in zip(self.fpairs, theta[sf]):
            xi[a, b] = xi[b, a] = v
        return lam, xi, psi

    def pack(self, lam, xi, psi):
        theta = [np.asarray(lam)[self.load_idx], np.diag(psi)]
        theta.append(np.array([psi[i, j] for i, j in self.pairs]))
        theta.append(np.array([xi[a, b] for a, b in self.fpairs]))
        return np.concatenate(theta).astype(float)

    def grad_from_dsigma(self, G, lam, xi):
        """Chain rule from a symmetric ``dF/dSigma`` matrix to the flat vector.

        ``G`` may be stacked as (..., P, P); derivatives are taken treating
        Sigma's symmetric entries as a single parameter.
        """
        G = np.asarray(G)
        gl = 2.0 * G @ (lam @ xi)
        out = [gl[(...,) + self.load_idx], np.diagonal(G, axis1=-2, axis2=-1)]
        out.append(np.stack([2.0 * G[..., i, j] for i, j in self.pairs], axis=-1)
                   if self.pairs else np.zeros(G.shape[:-2] + (0,)))
        if self.fpairs:
            LGL = np.swapaxes(lam, -1, -2) @ G @ lam
            out.append(np.stack([2.0 * LGL[..., a, b] for a, b in self.fpairs], axis=-1))
        else:
            out.append(np.zeros(G.shape[:-2] + (0,)))
        return np.concatenate(out, axis=-1)


def implied_sigma(params):
    """``Lambda Xi Lambda^T + Psi``, symmetric to the bit."""
    lx = params.lam @ params.xi
    sigma = lx @ params.lam.T + params.psi
    return 0.5 * (sigma + sigma.T)


def _chol_or_raise(sigma):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        rcond = 1.0 / np.linalg.cond(sigma) if np.all(np.isfinite(sigma)) else 0.0
        raise SingularCovarianceError("implied covariance is not positive definite", rcond) from None


def log_likelihood(params, moments, n_obs):
    """Normal log-likelihood of the data summarised by ``moments = (k, S)``."""
    k, S = (np.asarray(x, dtype=float) for x in moments)
    sigma = implied_sigma(params)
    L = _chol_or_raise(sigma)
    p = len(k)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    sinv = np.linalg.inv(sigma)
    d = params.mu - k
    quad = float(d @ sinv @ d)
    return -0.5 * n_obs * (p * LOG_2PI + logdet + float(np.trace(S @ sinv)) + quad)


def model_df(spec, n_vars=None):
    """Degrees of freedom of the covariance structure.

    Intercepts are saturated against the sample means, so only the
    ``P (P + 1) / 2`` unique covariances count as data.
    """
    p = spec.n_vars if n_vars is None else int(n_vars)
    if p != spec.n_vars:
        raise SpecError(f"spec has {spec.n_vars} variables, not {p}")
    df = p * (p + 1) // 2 - spec.n_cov_params
    if df < 0:
        raise SpecError(f"over-parameterised model: df = {df}")
    return df


@dataclass(frozen=True)
class StandardizedParams:
    """Completely standardised estimates (factor and indicator variances 1)."""

    loadings: np.ndarray
    intercepts: np.ndarray
    residual_variances: np.ndarray
    residual_correlations: dict = field(default_factory=dict)


def standardize(params, pairs=None):
    """Standardise loadings, intercepts and residual (co)variances.

    Loadings and intercepts are divided by the model-implied standard
    deviation of each indicator; residual variances are expressed as a
    share of the implied variance; residual covariances become residual
    correlations. ``pairs`` defaults to every nonzero off-diagonal of Psi.
    """
    sigma = implied_sigma(params)
    var = np.diag(sigma)
    if np.any(var <= 0):
        raise ValueError("nonpositive implied variance")
    sd = np.sqrt(var)
    fsd = np.sqrt(np.diag(params.xi))
    loadings = params.lam * fsd[None, :] / sd[:, None]
    psi = params.psi
    if pairs is None:
        iu = np.triu_indices_from(psi, 1)
        pairs = [(i, j) for i, j in zip(*iu) if psi[i, j] != 0.0]
    corr = {}
    for i, j in pairs:
        denom = psi[i, i] * psi[j, j]
        corr[(int(i), int(j))] = float(psi[i, j] / np.sqrt(denom)) if denom > 0 else float("nan")
    return StandardizedParams(loadings, params.mu / sd, np.diag(psi) / var, corr)
