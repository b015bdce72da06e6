"""Compiled inner loops with pure-numpy twins.

Two kernels dominate runtime:

``margin_terms``
    Walks every margin S of a composite likelihood for one covariance
    matrix Sigma and accumulates the Gaussian-margin quantities every
    likelihood, score, Hessian and J computation is assembled from.  For a
    margin S with weight w, let P_S be inv(Sigma[S, S]) padded with zeros to
    d x d and D_k = dSigma/dtheta_k.  The kernel returns

    ========  ===========================================================
    const     sum_S w (-1/2 log|Sigma_S| - |S|/2 log 2pi)
    A1        sum_S w P_S
    G[k]      sum_S w P_S D_k P_S
    trAd[k]   sum_S w tr(P_S D_k)
    F[k,l]    sum_S w tr(P_S D_k P_S D_l)
    KM[k,l]   sum_S w 2 tr(P_S D_l P_S D_k P_S M)
    LM[k,l]   sum_S w tr(P_S D2_kl P_S M)
    tAd2[k,l] sum_S w tr(P_S D2_kl)
    ========  ===========================================================

    where M is a d x d residual moment matrix (sum of outer products).  The
    last four are only filled when ``order >= 2``.

``imhof_integrand``
    The Imhof integrand for P(sum_j lam_j (Z_j + delta_j)^2 > c).
"""

import math

import numpy as np

from . import _accel
from ._accel import njit

LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# margin_terms
# ---------------------------------------------------------------------------


@njit
def _margin_terms_nb(sigma, dsig, d2sig, d2nz, idx, sizes, weights, m, order):
    d = sigma.shape[0]
    pc = dsig.shape[0]
    nq = idx.shape[0]
    const = 0.0
    a1 = np.zeros((d, d))
    g = np.zeros((pc, d, d))
    tr_ad = np.zeros(pc)
    f = np.zeros((pc, pc))
    km = np.zeros((pc, pc))
    lm = np.zeros((pc, pc))
    tad2 = np.zeros((pc, pc))
    for q in range(nq):
        k = sizes[q]
        w = weights[q]
        ix = idx[q, :k]
        ss = np.empty((k, k))
        ms = np.empty((k, k))
        for a in range(k):
            for b in range(k):
                ss[a, b] = sigma[ix[a], ix[b]]
                ms[a, b] = m[ix[a], ix[b]]
        chol = np.linalg.cholesky(ss)
        logdet = 0.0
        for a in range(k):
            logdet += 2.0 * math.log(chol[a, a])
        p = np.linalg.inv(ss)
        const += w * (-0.5 * logdet - 0.5 * k * LOG2PI)
        for a in range(k):
            for b in range(k):
                a1[ix[a], ix[b]] += w * p[a, b]
        ds = np.empty((pc, k, k))
        gs = np.empty((pc, k, k))
        for c in range(pc):
            for a in range(k):
                for b in range(k):
                    ds[c, a, b] = dsig[c, ix[a], ix[b]]
            pd = p @ ds[c]
            gs[c] = pd @ p
            t = 0.0
            for a in range(k):
                t += pd[a, a]
                for b in range(k):
                    g[c, ix[a], ix[b]] += w * gs[c, a, b]
            tr_ad[c] += w * t
        if order >= 2:
            pm = p @ ms
            d2s = np.empty((k, k))
            for c in range(pc):
                dpm = ds[c] @ pm
                for l in range(c, pc):
                    s_f = 0.0
                    s_k = 0.0
                    for a in range(k):
                        for b in range(k):
                            s_f += gs[c, a, b] * ds[l, b, a]
                            s_k += gs[l, a, b] * dpm[b, a]
                    f[c, l] += w * s_f
                    km[c, l] += 2.0 * w * s_k
                    if d2nz[c, l]:
                        for a in range(k):
                            for b in range(k):
                                d2s[a, b] = d2sig[c, l, ix[a], ix[b]]
                        pd2 = p @ d2s
                        pd2pm = pd2 @ pm
                        s_l = 0.0
                        s_t = 0.0
                        for a in range(k):
                            s_l += pd2pm[a, a]
                            s_t += pd2[a, a]
                        lm[c, l] += w * s_l
                        tad2[c, l] += w * s_t
    if order >= 2:
        for c in range(pc):
            for l in range(c + 1, pc):
                f[l, c] = f[c, l]
                km[l, c] = km[c, l]
                lm[l, c] = lm[c, l]
                tad2[l, c] = tad2[c, l]
    return const, a1, g, tr_ad, f, km, lm, tad2


def _margin_terms_np(sigma, dsig, d2sig, d2nz, idx, sizes, weights, m, order):
    d = sigma.shape[0]
    pc = dsig.shape[0]
    const = 0.0
    a1 = np.zeros((d, d))
    g = np.zeros((pc, d, d))
    tr_ad = np.zeros(pc)
    f = np.zeros((pc, pc))
    km = np.zeros((pc, pc))
    lm = np.zeros((pc, pc))
    tad2 = np.zeros((pc, pc))
    for k in np.unique(sizes):
        sel = sizes == k
        ix = idx[sel, :k]
        w = weights[sel]
        rows, cols = ix[:, :, None], ix[:, None, :]
        ss = sigma[rows, cols]
        _, logdet = np.linalg.slogdet(ss)
        p = np.linalg.inv(ss)
        const += float(np.sum(w * (-0.5 * logdet - 0.5 * k * LOG2PI)))
        np.add.at(a1, (rows, cols), w[:, None, None] * p)
        ds = dsig[:, rows, cols]
        gs = p[None] @ ds @ p[None]
        np.add.at(g, (slice(None), rows, cols), w[None, :, None, None] * gs)
        tr_ad += np.einsum("q,qab,cqba->c", w, p, ds)
        if order >= 2:
            pm = p @ m[rows, cols]
            f += np.einsum("q,cqab,lqba->cl", w, gs, ds, optimize=True)
            km += 2.0 * np.einsum("q,lqab,cqbe,qea->cl", w, gs, ds, pm, optimize=True)
            if d2nz.any():
                d2s = d2sig[:, :, rows, cols]
                lm += np.einsum("q,qab,clqbe,qea->cl", w, p, d2s, pm, optimize=True)
                tad2 += np.einsum("q,qab,clqba->cl", w, p, d2s, optimize=True)
    return const, a1, g, tr_ad, f, km, lm, tad2


def margin_terms(sigma, dsig, d2sig, d2nz, idx, sizes, weights, m, order=2):
    """Dispatch to the active backend.  See the module docstring."""
    args = (
        np.ascontiguousarray(sigma, dtype=np.float64),
        np.ascontiguousarray(dsig, dtype=np.float64),
        np.ascontiguousarray(d2sig, dtype=np.float64),
        np.ascontiguousarray(d2nz, dtype=np.bool_),
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(sizes, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(m, dtype=np.float64),
        int(order),
    )
    if _accel.get_backend() == "numba":
        return _margin_terms_nb(*args)
    return _margin_terms_np(*args)


# ---------------------------------------------------------------------------
# imhof_integrand
# ---------------------------------------------------------------------------


@njit
def _imhof_integrand_nb(u, lam, delta2, c):
    out = np.empty(u.size)
    for t in range(u.size):
        ut = u[t]
        theta = -0.5 * c * ut
        logrho = 0.0
        for j in range(lam.size):
            x = lam[j] * ut
            x2 = x * x
            theta += 0.5 * (math.atan(x) + delta2[j] * x / (1.0 + x2))
            logrho += 0.25 * math.log1p(x2) + 0.5 * delta2[j] * x2 / (1.0 + x2)
        out[t] = math.sin(theta) / (ut * math.exp(logrho))
    return out


def _imhof_integrand_np(u, lam, delta2, c):
    x = np.multiply.outer(u, lam)
    x2 = x * x
    theta = 0.5 * np.sum(np.arctan(x) + delta2 * x / (1.0 + x2), axis=1) - 0.5 * c * u
    logrho = np.sum(0.25 * np.log1p(x2) + 0.5 * delta2 * x2 / (1.0 + x2), axis=1)
    return np.sin(theta) / (u * np.exp(logrho))


def imhof_integrand(u, lam, delta2, c):
    args = (
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(lam, dtype=np.float64),
        np.ascontiguousarray(delta2, dtype=np.float64),
        float(c),
    )
    if _accel.get_backend() == "numba":
        return _imhof_integrand_nb(*args)
    return _imhof_integrand_np(*args)
