"""Closed-form score, H and J for the mixed model under the full and pairwise
likelihoods, written in vec/vech calculus.

Coordinates are (beta, vech C, kappa) with Psi = C C^T and phi = kappa^2.
All functions return sums over subjects.  The expected-value forms assume
the model is true (E S_i = Omega_i, Gaussian fourth moments).  These are
deliberately independent of :mod:`clic.clcore.engine` and serve as its
cross-check.
"""

from itertools import combinations

import numpy as np

from ..matops import commutation, elimination, unvech, vec

__all__ = [
    "full_score",
    "full_fisher",
    "pairwise_score",
    "pairwise_J",
    "pairwise_H",
    "pairwise_operators",
]


def _unpack(z, theta, pb):
    z = np.asarray(z, dtype=float)
    r = z.shape[1]
    nc = r * (r + 1) // 2
    beta = theta[:pb]
    c = unvech(theta[pb : pb + nc], symmetric=False)
    kappa = theta[pb + nc]
    omega = z @ c @ c.T @ z.T + kappa**2 * np.eye(z.shape[0])
    return beta, c, kappa, omega, r


def _dpsi_left(c, r):
    # E_r (C^T kron I_r): maps vec of an r x r matrix to the vech C gradient
    return elimination(r) @ np.kron(c.T, np.eye(r))


def full_score(y, x, z, theta):
    x = np.asarray(x, dtype=float)
    pb = x.shape[2]
    beta, c, kappa, omega, r = _unpack(z, theta, pb)
    oi = np.linalg.inv(omega)
    out = np.zeros(theta.size)
    for yi, xi in zip(y, x):
        e = yi - xi @ beta
        s = np.outer(e, e)
        out[:pb] += e @ oi @ xi
        out[pb:-1] += vec(z.T @ oi @ (s - omega) @ oi @ z @ c) @ elimination(r).T
        out[-1] += kappa * np.trace(oi @ oi @ (s - omega))
    return out


def full_fisher(x, z, theta):
    """Expected Hessian (negative definite) of the full log-likelihood."""
    x = np.asarray(x, dtype=float)
    n, _, pb = x.shape
    beta, c, kappa, omega, r = _unpack(z, theta, pb)
    oi = np.linalg.inv(omega)
    left = _dpsi_left(c, r)
    zoz = z.T @ oi @ z
    out = np.zeros((theta.size, theta.size))
    for xi in x:
        out[:pb, :pb] -= xi.T @ oi @ xi
    cc = -left @ np.kron(zoz, zoz) @ (np.eye(r * r) + commutation(r)) @ left.T
    ck = -2.0 * kappa * left @ vec(z.T @ oi @ oi @ z)
    out[pb:-1, pb:-1] = n * cc
    out[pb:-1, -1] = out[-1, pb:-1] = n * ck
    out[-1, -1] = -2.0 * n * kappa**2 * np.trace(oi @ oi)
    return out


def pairwise_operators(omega):
    """A_1, A_2 and B for the pairwise likelihood at covariance ``omega``."""
    d = omega.shape[0]
    a1 = np.zeros((d, d))
    a2 = np.zeros((d, d))
    b = np.zeros((d * d, d * d))
    for j, k in combinations(range(d), 2):
        e = np.zeros((d, 2))
        e[j, 0] = e[k, 1] = 1.0
        inv = np.linalg.inv(e.T @ omega @ e)
        p1 = e @ inv @ e.T
        a1 += p1
        a2 += e @ inv @ inv @ e.T
        b += np.kron(p1, p1)
    return a1, a2, b


def pairwise_score(y, x, z, theta):
    x = np.asarray(x, dtype=float)
    pb = x.shape[2]
    beta, c, kappa, omega, r = _unpack(z, theta, pb)
    a1, a2, b = pairwise_operators(omega)
    zz = np.kron(z, z)
    cer = np.kron(c, np.eye(r)) @ elimination(r).T
    out = np.zeros(theta.size)
    for yi, xi in zip(y, x):
        e = yi - xi @ beta
        dev = np.outer(e, e) - omega
        out[:pb] += e @ a1 @ xi
        out[pb:-1] += vec(dev) @ b @ zz @ cer
        out[-1] += kappa * np.trace(a2 @ dev)
    return out


def pairwise_J(x, z, theta):
    x = np.asarray(x, dtype=float)
    n, _, pb = x.shape
    beta, c, kappa, omega, r = _unpack(z, theta, pb)
    a1, a2, b = pairwise_operators(omega)
    left = _dpsi_left(c, r)
    ztzt = np.kron(z.T, z.T)
    zz = np.kron(z, z)
    boob = b @ np.kron(omega, omega)
    out = np.zeros((theta.size, theta.size))
    for xi in x:
        out[:pb, :pb] += xi.T @ a1 @ omega @ a1 @ xi
    cc = left @ ztzt @ boob @ b @ zz @ (np.eye(r * r) + commutation(r)) @ left.T
    ck = 2.0 * kappa * left @ ztzt @ boob @ vec(a2)
    out[pb:-1, pb:-1] = n * cc
    out[pb:-1, -1] = out[-1, pb:-1] = n * ck
    out[-1, -1] = 2.0 * n * kappa**2 * np.trace(a2 @ omega @ a2 @ omega)
    return out


def pairwise_H(x, z, theta):
    """Expected Hessian (negative definite) of the pairwise log-likelihood."""
    x = np.asarray(x, dtype=float)
    n, _, pb = x.shape
    beta, c, kappa, omega, r = _unpack(z, theta, pb)
    a1, a2, b = pairwise_operators(omega)
    left = _dpsi_left(c, r)
    out = np.zeros((theta.size, theta.size))
    for xi in x:
        out[:pb, :pb] -= xi.T @ a1 @ xi
    cc = -left @ np.kron(z.T, z.T) @ b @ np.kron(z, z) @ (np.eye(r * r) + commutation(r)) @ left.T
    ck = -2.0 * kappa * left @ vec(z.T @ a2 @ z)
    out[pb:-1, pb:-1] = n * cc
    out[pb:-1, -1] = out[-1, pb:-1] = n * ck
    out[-1, -1] = -2.0 * n * kappa**2 * np.trace(a2)
    return out
