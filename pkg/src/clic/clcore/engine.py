"""Gaussian-margin derivative engine.

All quantities are computed from the residual matrix e = m - X beta and a
quadratic moment matrix M = sum_i e_i e_i^T + extra.  With data, m = y and
extra = 0.  For expectations under a true law with subject means m_i and
common residual covariance Omega, m holds the means and extra = n Omega;
since the log composite likelihood is quadratic in y, this gives exact
expected values, scores and Hessians.
"""

from dataclasses import dataclass

import numpy as np

from .._kernels import margin_terms

__all__ = [
    "Evaluation",
    "evaluate",
    "log_cl",
    "score",
    "hessian",
    "per_subject_scores",
    "fisher_information",
    "ScoreRep",
    "score_representation",
    "cross_moment",
]


@dataclass
class Evaluation:
    value: float
    grad: np.ndarray
    hess: np.ndarray | None
    n: int


def _check(model, scheme, y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim != 2 or x.ndim != 3 or x.shape[:2] != y.shape:
        raise ValueError(f"shape mismatch: y {y.shape}, x {x.shape}")
    if y.shape[1] != model.d or scheme.d != model.d:
        raise ValueError("cluster size disagrees between data, model and scheme")
    if max(model.beta_cols, default=-1) >= x.shape[2]:
        raise ValueError("beta column outside the design")
    return y, x[:, :, list(model.beta_cols)]


def _terms(model, scheme, theta, m, order):
    _, ctheta = model.split(theta)
    sig, ds, d2s, nz = model.cov.derivs(ctheta)
    try:
        np.linalg.cholesky(sig)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("model covariance is not positive definite") from None
    return margin_terms(sig, ds, d2s, nz, scheme.idx, scheme.sizes, scheme.weights, m, order)


def evaluate(model, scheme, y, x, theta, order=2, extra=None):
    """Value, gradient and (order 2) Hessian of the log composite likelihood.

    Sums over subjects, not averages.
    """
    y, xb = _check(model, scheme, y, x)
    n = y.shape[0]
    beta, _ = model.split(theta)
    e = y - xb @ beta
    m = e.T @ e
    if extra is not None:
        m = m + extra
    const, a1, g, tr_ad, f, km, lm, tad2 = _terms(model, scheme, theta, m, order)
    value = n * const - 0.5 * np.sum(a1 * m)
    a1e = e @ a1
    grad_b = np.einsum("ndk,nd->k", xb, a1e)
    grad_c = -0.5 * n * tr_ad + 0.5 * np.einsum("cab,ab->c", g, m)
    grad = np.concatenate([grad_b, grad_c])
    hess = None
    if order >= 2:
        pb = model.p_beta
        hess = np.empty((model.p, model.p))
        hess[:pb, :pb] = -np.einsum("ndk,de,nel->kl", xb, a1, xb)
        ge = np.einsum("cde,ne->ncd", g, e)
        hess[:pb, pb:] = -np.einsum("ndk,ncd->kc", xb, ge)
        hess[pb:, :pb] = hess[:pb, pb:].T
        hess[pb:, pb:] = 0.5 * n * (f - tad2) + 0.5 * (lm - km)
    return Evaluation(float(value), grad, hess, n)


def log_cl(model, scheme, y, x, theta):
    return evaluate(model, scheme, y, x, theta, order=1).value


def score(model, scheme, y, x, theta):
    return evaluate(model, scheme, y, x, theta, order=1).grad


def hessian(model, scheme, y, x, theta):
    return evaluate(model, scheme, y, x, theta, order=2).hess


def per_subject_scores(model, scheme, y, x, theta):
    """n x p matrix whose row i is the gradient of subject i's contribution."""
    y, xb = _check(model, scheme, y, x)
    beta, _ = model.split(theta)
    e = y - xb @ beta
    _, a1, g, tr_ad, *_ = _terms(model, scheme, theta, np.zeros((model.d, model.d)), 1)
    s_b = np.einsum("ndk,nd->nk", xb, e @ a1)
    s_c = -0.5 * tr_ad[None, :] + 0.5 * np.einsum("cde,nd,ne->nc", g, e, e)
    return np.hstack([s_b, s_c])


def fisher_information(model, scheme, x, theta):
    """Expected negative Hessian (sum) when the model itself is true."""
    x = np.asarray(x, dtype=float)
    xb = x[:, :, list(model.beta_cols)]
    n = x.shape[0]
    _, ctheta = model.split(theta)
    sig, ds, d2s, nz = model.cov.derivs(ctheta)
    _, a1, _, _, f, *_ = margin_terms(sig, ds, d2s, nz, scheme.idx, scheme.sizes, scheme.weights, n * sig, 2)
    pb = model.p_beta
    out = np.zeros((model.p, model.p))
    out[:pb, :pb] = np.einsum("ndk,de,nel->kl", xb, a1, xb)
    out[pb:, pb:] = 0.5 * n * f
    return out


@dataclass
class ScoreRep:
    """Per-subject score as a quadratic polynomial in r = y - E y.

    s_i = c_i + a_i^T r_i + r_i^T Q r_i  (Q shared across subjects).
    """

    c: np.ndarray  # (n, p)
    a: np.ndarray  # (n, d, p)
    q: np.ndarray  # (p, d, d)


def score_representation(model, scheme, mean, x, theta):
    x = np.asarray(x, dtype=float)
    xb = x[:, :, list(model.beta_cols)]
    n, d, pb = xb.shape
    beta, _ = model.split(theta)
    delta = np.asarray(mean, dtype=float) - xb @ beta
    _, a1, g, tr_ad, *_ = _terms(model, scheme, theta, np.zeros((d, d)), 1)
    p = model.p
    c = np.empty((n, p))
    a = np.zeros((n, d, p))
    q = np.zeros((p, d, d))
    c[:, :pb] = np.einsum("ndk,nd->nk", xb, delta @ a1)
    a[:, :, :pb] = np.einsum("de,nek->ndk", a1, xb)
    c[:, pb:] = -0.5 * tr_ad[None, :] + 0.5 * np.einsum("cde,nd,ne->nc", g, delta, delta)
    a[:, :, pb:] = np.einsum("cde,ne->ndc", g, delta)
    q[pb:] = 0.5 * g
    return ScoreRep(c, a, q)


def cross_moment(rep1, rep2, omega, loading=None, kurtosis=None):
    """n^-1 sum_i E[s1_i s2_i^T] for r_i = T u_i with independent symmetric u.

    ``loading`` is T (d x K) with T T^T = omega and ``kurtosis`` holds the
    excess kurtosis of each u component.  Both default to a Gaussian law.
    """
    n = rep1.c.shape[0]
    mean1 = rep1.c + np.einsum("pde,ed->p", rep1.q, omega)[None, :]
    mean2 = rep2.c + np.einsum("pde,ed->p", rep2.q, omega)[None, :]
    out = mean1.T @ mean2 / n
    out += np.einsum("ndp,de,neq->pq", rep1.a, omega, rep2.a) / n
    qo1 = rep1.q @ omega
    qo2 = rep2.q @ omega
    out += 2.0 * np.einsum("pab,qba->pq", qo1, qo2)
    if kurtosis is not None and np.any(kurtosis):
        t = np.asarray(loading, dtype=float)
        d1 = np.einsum("aj,pab,bj->pj", t, rep1.q, t)
        d2 = np.einsum("aj,pab,bj->pj", t, rep2.q, t)
        out += np.einsum("pj,j,qj->pq", d1, np.asarray(kurtosis, dtype=float), d2)
    return out
