import numpy as np
import pytest

from psychorank.ingest import LogitMatrix
from psychorank.model import ParamSet

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record a pass/fail line for the acceptance summary."""

    def record(number, ok, detail):
        _ACCEPTANCE.append((number, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}")


def exact_moment_data(S, n_obs=1500, seed=0, mean=None):
    """Data whose sample covariance (divisor M) equals ``S`` to rounding."""
    S = np.asarray(S, dtype=float)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n_obs, S.shape[0]))
    Z -= Z.mean(axis=0)
    C = Z.T @ Z / n_obs
    Z = Z @ np.linalg.inv(np.linalg.cholesky(C)).T
    V = Z @ np.linalg.cholesky(S).T
    if mean is not None:
        V = V + mean
    return V


def one_factor_params(lam, psi=None, mu=None, pairs=None):
    lam = np.asarray(lam, dtype=float)
    psi = np.diag(1.0 - lam ** 2) if psi is None else np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        psi = np.diag(psi)
    psi = psi.copy()
    for (i, j), r in (pairs or {}).items():
        psi[i, j] = psi[j, i] = r * np.sqrt(psi[i, i] * psi[j, j])
    mu = np.zeros(len(lam)) if mu is None else np.asarray(mu, dtype=float)
    return ParamSet(mu, lam[:, None], np.eye(1), psi)


@pytest.fixture
def logits_from():
    def make(V, **kw):
        return LogitMatrix.from_logits(V, **kw)

    return make
