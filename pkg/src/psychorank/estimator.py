"""
Maximum likelihood estimation of the factor model.

Intercepts are profiled out at the sample means (the mean structure is
saturated), so the optimiser only searches the covariance parameters.
Residual variances are left unconstrained on purpose: a negative
estimate (Heywood case) must be observable, not masked by a transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .model import (
    LOG_2PI,
    ModelSpec,
    ParamLayout,
    ParamSet,
    SingularCovarianceError,
    SpecError,
    implied_sigma,
    model_df,
)

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorOptions:
    """Optimiser and inference settings.

    ``n_multiplier`` chooses ``M`` or ``M - 1`` as the sample-size factor of
    the chi-square statistic. ``se_method`` is ``"sandwich"`` (robust, as
    in MLR) or ``"observed"`` (inverse observed information).
    """

    max_iter: int = 500
    gtol: float = 1e-6
    ftol: float = 1e-10
    n_multiplier: str = "M"
    se_method: str = "sandwich"
    heywood_tol: float = 1e-8
    compute_se: bool = True
    robust_scaling: bool = True
    polish_steps: int = 20

    def __post_init__(self):
        if self.n_multiplier not in ("M", "M-1"):
            raise ValueError("n_multiplier must be 'M' or 'M-1'")
        if self.se_method not in ("sandwich", "observed"):
            raise ValueError("se_method must be 'sandwich' or 'observed'")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FitResult:
    """Outcome of one ML fit.

    ``gradient_norm`` is the max-abs gradient of the per-observation
    discrepancy ``F_ML`` at the returned point. ``se`` is aligned with
    ``labels``: P intercepts first, then the covariance parameters in
    ``ParamLayout`` order.
    """

    spec: ModelSpec
    params: ParamSet
    loglik: float
    T: float
    df: int
    n_obs: int
    converged: bool
    iterations: int
    gradient_norm: float
    aic: float
    heywood: list
    parcel_ids: list
    k: np.ndarray
    S: np.ndarray
    se: np.ndarray | None = None
    se_method: str | None = None
    labels: list = field(default_factory=list)
    scaling_c: float = float("nan")
    T_scaled: float = float("nan")
    p_value: float = float("nan")
    p_value_scaled: float = float("nan")
    message: str = ""
    history: list = field(default_factory=list)
    theta: np.ndarray | None = None
    n_multiplier: str = "M"

    @property
    def sigma(self):
        return implied_sigma(self.params)

    @property
    def n_free_params(self):
        return self.spec.n_free_params

    def se_dict(self):
        if self.se is None:
            return {}
        return dict(zip(self.labels, self.se.tolist()))

    def estimates(self):
        """Flat estimate vector aligned with ``labels``."""
        return np.concatenate([self.params.mu, self.theta])

    def summary(self):
        """Plain-dict view suitable for JSON output."""
        std = None
        try:
            from .model import standardize

            s = standardize(self.params, self.spec.residual_pairs)
            std = {
                "loadings": s.loadings.tolist(),
                "intercepts": s.intercepts.tolist(),
                "residual_variances": s.residual_variances.tolist(),
                "residual_correlations": [
                    [self.parcel_ids[i], self.parcel_ids[j], v] for (i, j), v in s.residual_correlations.items()
                ],
            }
        except ValueError:
            pass
        return {
            "spec": self.spec.to_dict(self.parcel_ids),
            "converged": self.converged,
            "message": self.message,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "n_obs": self.n_obs,
            "loglik": self.loglik,
            "T": self.T,
            "df": self.df,
            "p_value": self.p_value,
            "scaling_c": self.scaling_c,
            "T_scaled": self.T_scaled,
            "p_value_scaled": self.p_value_scaled,
            "aic": self.aic,
            "heywood": [self.parcel_ids[i] for i in self.heywood],
            "parameters": self.params.to_dict(),
            "estimates": dict(zip(self.labels, self.estimates().tolist())),
            "se_method": self.se_method,
            "se": self.se_dict(),
            "standardized": std,
        }


# ---------------------------------------------------------------------------
# objective


def _n_mult(n_obs, convention):
    return n_obs if convention == "M" else n_obs - 1


class _Objective:
    """ML discrepancy ``F = log|Sigma| + tr(S Sigma^-1) - log|S| - P``.

    Works on an optimiser vector where free factor covariances are Fisher-z
    transformed; everything else is on its natural scale.
    """

    def __init__(self, layout, S):
        self.layout = layout
        self.S = S
        self.p = S.shape[0]
        sign, self.logdet_S = np.linalg.slogdet(S)
        if sign <= 0:
            raise SingularCovarianceError("sample covariance is singular", 1.0 / np.linalg.cond(S))
        self.fslice = layout.slices[3]

    def to_theta(self, x):
        theta = np.array(x, dtype=float)
        theta[self.fslice] = np.tanh(theta[self.fslice])
        return theta

    def to_x(self, theta):
        x = np.array(theta, dtype=float)
        x[self.fslice] = np.arctanh(np.clip(x[self.fslice], -0.999999, 0.999999))
        return x

    def __call__(self, x):
        theta = self.to_theta(x)
        lam, xi, psi = self.layout.unpack(theta)
        sigma = lam @ xi @ lam.T + psi
        sigma = 0.5 * (sigma + sigma.T)
        try:
            L = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            return np.inf, None
        if not np.all(np.isfinite(L)):
            return np.inf, None
        logdet = 2.0 * np.log(np.diag(L)).sum()
        sinv = np.linalg.inv(sigma)
        SSinv = self.S @ sinv
        f = logdet + np.trace(SSinv) - self.logdet_S - self.p
        G = sinv - sinv @ SSinv
        g = self.layout.grad_from_dsigma(0.5 * (G + G.T), lam, xi)
        g[self.fslice] *= 1.0 - theta[self.fslice] ** 2
        return float(f), g


# ---------------------------------------------------------------------------
# optimiser


def _bfgs(fun, x0, max_iter, gtol, ftol):
    """BFGS with Armijo backtracking; every accepted step lowers ``fun``.

    Returns ``(x, f, g, iterations, history, status)`` where ``status`` is
    one of ``"gtol"``, ``"stalled"``, ``"max_iter"``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise SingularCovarianceError("implied covariance at the starting values is not positive definite")
    n = len(x)
    H = np.eye(n)
    history = [f]
    first = True
    for it in range(max_iter):
        if np.max(np.abs(g)) <= gtol:
            return x, f, g, it, history, "gtol"
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            H = np.eye(n)
            d = -g
            slope = float(g @ d)
        step = 1.0
        for _ in range(60):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return x, f, g, it, history, "stalled"
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                H = np.eye(n) * sy / float(y @ y)
                first = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        assert f_new <= f, "optimiser accepted an ascent step"
        rel = abs(f - f_new) / (1.0 + abs(f))
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if rel < ftol and np.max(np.abs(g)) <= gtol:
            return x, f, g, it + 1, history, "gtol"
    status = "gtol" if np.max(np.abs(g)) <= gtol else "max_iter"
    return x, f, g, max_iter, history, status


def _fd_jacobian(fun, x, rel_step=1e-6):
    """Central-difference Jacobian of a vector function, step scaled by |x|."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(fun(xp)).ravel() - np.asarray(fun(xm)).ravel()) / (2.0 * h)
    return J


def _newton_polish(fun, x, f, g, steps):
    """A few Newton steps with a finite-difference Hessian of the gradient."""
    for _ in range(steps):
        if np.max(np.abs(g)) < 1e-12:
            break

        def grad(z):
            fz, gz = fun(z)
            if gz is None:
                raise SingularCovarianceError("left the positive-definite region")
            return gz

        try:
            H = _fd_jacobian(grad, x, 1e-5)
            H = 0.5 * (H + H.T)
            d = -np.linalg.solve(H, g)
        except (np.linalg.LinAlgError, SingularCovarianceError):
            break
        if float(g @ d) >= 0:
            break
        step, accepted = 1.0, False
        for _ in range(30):
            f_new, g_new = fun(x + step * d)
            if np.isfinite(f_new) and f_new <= f + 1e-12 * (1 + abs(f)) and \
                    np.max(np.abs(g_new)) < np.max(np.abs(g)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x, f, g = x + step * d, f_new, g_new
    return x, f, g


# ---------------------------------------------------------------------------
# fitting


def start_values(spec, S):
    """Half-variance starts: ``lambda_p = sqrt(s_pp / 2)``, ``psi_pp = s_pp / 2``."""
    layout = ParamLayout(spec)
    s = np.diag(S)
    lam = np.where(spec.loading_pattern, np.sqrt(s / 2.0)[:, None], 0.0)
    psi = np.diag(np.where(spec.loading_pattern.any(axis=1), s / 2.0, s))
    return layout.pack(lam, np.eye(spec.n_factors), psi)


def _reflect(lam, xi):
    """Flip factors whose loading column sums negative."""
    signs = np.where(lam.sum(axis=0) < 0, -1.0, 1.0)
    return lam * signs, xi * np.outer(signs, signs)


def detect_heywood(fit_or_params, tol=1e-8):
    """Indices of parcels with residual variance below ``-tol``."""
    params = fit_or_params.params if isinstance(fit_or_params, FitResult) else fit_or_params
    return [int(i) for i in np.nonzero(np.diag(params.psi) < -tol)[0]]


def fit_ml(data, spec, options=None, start=None):
    """Fit ``spec`` to ``data`` (a LogitMatrix) by maximum likelihood.

    Parameters
    ----------
    data : LogitMatrix
    spec : ModelSpec
    options : EstimatorOptions, optional
    start : ndarray or FitResult, optional
        Warm start. A FitResult from a nested spec is expanded with zeros
        for the newly freed residual covariances.

    Returns
    -------
    FitResult
        ``converged`` is False (not an exception) when the line search
        stalls, the iteration limit is hit, or Sigma leaves the positive
        definite region.
    """
    options = options or EstimatorOptions()
    if spec.n_vars != data.n_vars:
        raise SpecError(f"spec has {spec.n_vars} variables, data has {data.n_vars}")
    df = model_df(spec)
    if data.n_obs <= spec.n_cov_params:
        raise SpecError("number of observations must exceed the number of free covariance parameters")
    layout = ParamLayout(spec)
    obj = _Objective(layout, data.S)

    if start is None:
        theta0 = start_values(spec, data.S)
    elif isinstance(start, FitResult):
        theta0 = _expand_start(start, layout)
    else:
        theta0 = np.asarray(start, dtype=float)
    x0 = obj.to_x(theta0)
    if not np.isfinite(obj(x0)[0]):
        log.debug("warm start not admissible, falling back to default starts")
        x0 = obj.to_x(start_values(spec, data.S))

    x, f, g, iters, history, status = _bfgs(obj, x0, options.max_iter, options.gtol, options.ftol)
    if options.polish_steps:
        x, f, g = _newton_polish(obj, x, f, g, options.polish_steps)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = gnorm <= options.gtol
    message = "converged" if converged else status

    theta = obj.to_theta(x)
    lam, xi, psi = layout.unpack(theta)
    lam, xi = _reflect(lam, xi)
    theta = layout.pack(lam, xi, psi)
    params = ParamSet(data.k.copy(), lam, xi, psi)

    m = data.n_obs
    p = data.n_vars
    T = max(_n_mult(m, options.n_multiplier) * f, 0.0)
    loglik = -0.5 * m * (p * LOG_2PI + f + obj.logdet_S + p)
    aic_val = -2.0 * loglik + 2.0 * spec.n_free_params
    heywood = detect_heywood(params, options.heywood_tol)
    labels = [f"mu[{n}]" for n in data.parcel_ids] + layout.labels(data.parcel_ids)

    fit = FitResult(
        spec=spec, params=params, loglik=float(loglik), T=float(T), df=df, n_obs=m,
        converged=bool(converged), iterations=iters, gradient_norm=gnorm, aic=float(aic_val),
        heywood=heywood, parcel_ids=list(data.parcel_ids), k=data.k, S=data.S, labels=labels,
        message=message, history=[float(h) for h in history], theta=theta,
        n_multiplier=options.n_multiplier,
    )
    _, _, fit.p_value = chi_square(fit)
    if converged and options.compute_se:
        try:
            fit.se = standard_errors(fit, data, options.se_method)
            fit.se_method = options.se_method
        except np.linalg.LinAlgError as exc:
            log.warning("standard errors unavailable: %s", exc)
    if converged and options.robust_scaling and df >= 1:
        try:
            fit.scaling_c, fit.T_scaled = yb_scaling(fit, data)
            fit.p_value_scaled = float(stats.chi2.sf(fit.T_scaled, df))
        except np.linalg.LinAlgError as exc:
            log.warning("robust scaling unavailable: %s", exc)
    return fit


def _expand_start(prev, layout):
    """Map a previous fit's estimates into a (larger) layout, zeros elsewhere."""
    lam, xi, psi = prev.params.lam, prev.params.xi, prev.params.psi
    spec = layout.spec
    lam = np.where(spec.loading_pattern, lam, 0.0)
    keep = np.zeros_like(psi, dtype=bool)
    np.fill_diagonal(keep, True)
    for i, j in spec.residual_pairs:
        keep[i, j] = keep[j, i] = True
    return layout.pack(lam, xi, np.where(keep, psi, 0.0))


# ---------------------------------------------------------------------------
# inference


def chi_square(fit):
    """``(T, df, p)``; p is NaN when df is 0."""
    p = float(stats.chi2.sf(fit.T, fit.df)) if fit.df > 0 else float("nan")
    return fit.T, fit.df, p


def _full_loglik_grad(layout, k, S, m):
    """Gradient of the log-likelihood in (mu, covariance parameters)."""
    p = len(k)

    def grad(z):
        mu, theta = z[:p], z[p:]
        lam, xi, psi = layout.unpack(theta)
        sigma = lam @ xi @ lam.T + psi
        sinv = np.linalg.inv(0.5 * (sigma + sigma.T))
        d = mu - k
        A = S + np.outer(d, d)
        G = sinv - sinv @ A @ sinv
        g_cov = -0.5 * m * layout.grad_from_dsigma(0.5 * (G + G.T), lam, xi)
        g_mu = -m * sinv @ d
        return np.concatenate([g_mu, g_cov])

    return grad


def observed_information(fit, data):
    """Negative Hessian of the log-likelihood by central differences."""
    layout = ParamLayout(fit.spec)
    grad = _full_loglik_grad(layout, data.k, data.S, data.n_obs)
    H = _fd_jacobian(grad, fit.estimates(), 1e-5)
    return -0.5 * (H + H.T)


def casewise_scores(fit, data):
    """Per-model gradients of each row's log-density, shape (M, n_params)."""
    layout = ParamLayout(fit.spec)
    lam, xi = fit.params.lam, fit.params.xi
    sinv = np.linalg.inv(fit.sigma)
    R = data.V - fit.params.mu
    SR = R @ sinv
    G = sinv[None, :, :] - SR[:, :, None] * SR[:, None, :]
    g_cov = -0.5 * layout.grad_from_dsigma(G, lam, xi)
    return np.hstack([SR, g_cov])


def standard_errors(fit, data, method="observed"):
    """Standard errors aligned with ``fit.labels``.

    ``observed``: square roots of the diagonal of the inverse observed
    information. ``sandwich``: ``A^-1 B A^-1`` with ``B`` the sum of
    casewise score outer products.
    """
    A = observed_information(fit, data)
    evals = np.linalg.eigvalsh(A)
    if evals.min() <= 0:
        raise np.linalg.LinAlgError(
            f"information matrix not positive definite (smallest eigenvalue {evals.min():.3g})")
    Ainv = np.linalg.inv(A)
    if method == "observed":
        cov = Ainv
    elif method == "sandwich":
        sc = casewise_scores(fit, data)
        cov = Ainv @ (sc.T @ sc) @ Ainv
    else:
        raise ValueError(f"unknown SE method {method!r}")
    return np.sqrt(np.diag(cov))


def vech_indices(p):
    """Row/col indices of the lower triangle, column-major (vech order)."""
    rows, cols = [], []
    for j in range(p):
        for i in range(j, p):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def duplication_matrix(p):
    """``D`` with ``vec(A) = D vech(A)`` for symmetric ``A``."""
    rows, cols = vech_indices(p)
    D = np.zeros((p * p, len(rows)))
    for c, (i, j) in enumerate(zip(rows, cols)):
        D[j * p + i, c] = 1.0
        D[i * p + j, c] = 1.0
    return D


def asymptotic_cov_moments(V):
    """Fourth-moment estimate of the asymptotic covariance of vech(S)."""
    V = np.asarray(V, dtype=float)
    R = V - V.mean(axis=0)
    rows, cols = vech_indices(V.shape[1])
    d = R[:, rows] * R[:, cols]
    dm = d.mean(axis=0)
    return d.T @ d / len(d) - np.outer(dm, dm)


def yb_scaling(fit, data):
    """Kurtosis-based chi-square scaling factor and the scaled statistic.

    ``c = tr(U Gamma) / df`` with ``U = W - W Delta (Delta' W Delta)^-1 Delta' W``,
    ``W`` the normal-theory weight matrix at the fitted Sigma and ``Gamma``
    the fourth-moment covariance of the sample covariances. Equals 1 in
    expectation under multivariate normality.
    """
    if fit.df < 1:
        raise ValueError("scaling needs df >= 1")
    p = data.n_vars
    layout = ParamLayout(fit.spec)
    rows, cols = vech_indices(p)

    def vech_sigma(theta):
        lam, xi, psi = layout.unpack(theta)
        return (lam @ xi @ lam.T + psi)[rows, cols]

    delta = _fd_jacobian(vech_sigma, fit.theta, 1e-6)
    if np.linalg.matrix_rank(delta) < delta.shape[1]:
        raise np.linalg.LinAlgError("Jacobian of the covariance structure is rank deficient")
    sinv = np.linalg.inv(fit.sigma)
    D = duplication_matrix(p)
    W = 0.5 * D.T @ np.kron(sinv, sinv) @ D
    WD = W @ delta
    U = W - WD @ np.linalg.solve(delta.T @ WD, WD.T)
    gamma = asymptotic_cov_moments(data.V)
    c = float(np.trace(U @ gamma) / fit.df)
    return c, fit.T / c


def refit(fit, data, spec, options=None):
    """Fit ``spec`` warm-started from ``fit``."""
    return fit_ml(data, spec, options, start=fit)


def quick_options(options):
    """Options for throwaway refits: no SEs, no robust scaling."""
    return replace(options or EstimatorOptions(), compute_se=False, robust_scaling=False)
