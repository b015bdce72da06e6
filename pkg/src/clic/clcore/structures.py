"""Covariance structures and candidate model specifications.

Every structure used here has the form

    Sigma = Z C C^T Z^T + kappa^2 I      (kappa optional)

with C lower triangular, parameterized by (vech C, kappa).  Three named
cases cover the candidate families:

* mixed model:    Z = random-effects design, residual term on
* exchangeable:   Z = 1_d (r = 1), so Sigma = c^2 11^T + kappa^2 I
* unstructured:   Z = I_d, no residual term, Sigma = L L^T
"""

from dataclasses import dataclass

import numpy as np

from ..matops import unvech, vech, vech_indices

__all__ = ["CholeskyCov", "ModelSpec"]


class CholeskyCov:
    def __init__(self, z, residual=True, kind="lmm"):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError("z must be a d x r matrix")
        self.z = z
        self.d, self.r = z.shape
        self.residual = bool(residual)
        self.kind = kind
        self._rows, self._cols = vech_indices(self.r)
        self.n_chol = self.r * (self.r + 1) // 2
        self.n_params = self.n_chol + int(self.residual)
        self._d2_cache = None

    def __repr__(self):
        return f"CholeskyCov(kind={self.kind!r}, d={self.d}, r={self.r}, residual={self.residual})"

    def __eq__(self, other):
        return (
            isinstance(other, CholeskyCov)
            and self.residual == other.residual
            and np.array_equal(self.z, other.z)
        )

    __hash__ = None

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        c = unvech(theta[: self.n_chol], symmetric=False)
        kappa = theta[self.n_chol] if self.residual else 0.0
        return c, kappa

    def pack(self, c, kappa=None):
        parts = [vech(np.tril(c))]
        if self.residual:
            parts.append([0.0 if kappa is None else kappa])
        return np.concatenate(parts)

    def psi(self, theta):
        c, _ = self.unpack(theta)
        return c @ c.T

    def sigma(self, theta):
        c, kappa = self.unpack(theta)
        zc = self.z @ c
        return zc @ zc.T + kappa**2 * np.eye(self.d)

    def _second(self):
        # constant second derivatives, built once
        if self._d2_cache is None:
            p, z = self.n_params, self.z
            d2 = np.zeros((p, p, self.d, self.d))
            nz = np.zeros((p, p), dtype=bool)
            for s, (a, b) in enumerate(zip(self._rows, self._cols)):
                for t, (c, dd) in enumerate(zip(self._rows, self._cols)):
                    if b == dd:
                        blk = np.outer(z[:, a], z[:, c])
                        d2[s, t] = blk + blk.T
                        nz[s, t] = True
            if self.residual:
                d2[-1, -1] = 2.0 * np.eye(self.d)
                nz[-1, -1] = True
            self._d2_cache = (d2, nz)
        return self._d2_cache

    def derivs(self, theta):
        """Sigma, dSigma (p, d, d), d2Sigma (p, p, d, d) and its nonzero mask."""
        c, kappa = self.unpack(theta)
        zc = self.z @ c
        sig = zc @ zc.T + kappa**2 * np.eye(self.d)
        ds = np.empty((self.n_params, self.d, self.d))
        for s, (a, b) in enumerate(zip(self._rows, self._cols)):
            blk = np.outer(self.z[:, a], zc[:, b])
            ds[s] = blk + blk.T
        if self.residual:
            ds[-1] = 2.0 * kappa * np.eye(self.d)
        d2, nz = self._second()
        return sig, ds, d2, nz

    def canonical(self, theta):
        """Representative with non-negative diagonal of C and kappa >= 0."""
        c, kappa = self.unpack(theta)
        signs = np.where(np.diag(c) < 0, -1.0, 1.0)
        return self.pack(c * signs[None, :], abs(kappa))

    def start(self, resid_cov):
        """Moment-based starting values from a residual covariance estimate."""
        s = 0.5 * (resid_cov + resid_cov.T)
        scale = max(np.trace(s) / self.d, 1e-8)
        if not self.residual:
            w, v = np.linalg.eigh(s)
            s_pd = (v * np.clip(w, 1e-3 * scale, None)) @ v.T
            return self.pack(np.linalg.cholesky(s_pd))
        # least squares fit of vech(S) on vech(Z Psi Z^T) and vech(I)
        iu = np.tril_indices(self.d)
        cols = []
        for a, b in zip(self._rows, self._cols):
            e = np.zeros((self.r, self.r))
            e[a, b] = e[b, a] = 1.0
            cols.append((self.z @ e @ self.z.T)[iu])
        cols.append(np.eye(self.d)[iu])
        coef, *_ = np.linalg.lstsq(np.column_stack(cols), s[iu], rcond=None)
        psi = unvech(coef[:-1])
        phi = max(coef[-1], 0.05 * scale)
        w, v = np.linalg.eigh(psi)
        psi = (v * np.clip(w, 1e-3 * scale, None)) @ v.T
        return self.pack(np.linalg.cholesky(psi), np.sqrt(phi))

    def at_boundary(self, theta, rtol=1e-6):
        c, kappa = self.unpack(theta)
        scale = np.sqrt(max(np.trace(self.sigma(theta)) / self.d, 1e-300))
        small = np.abs(np.diag(c)) < rtol * scale
        if self.residual and abs(kappa) < rtol * scale:
            return True
        return bool(np.any(small))

    def param_names(self):
        names = [f"C[{a + 1},{b + 1}]" for a, b in zip(self._rows, self._cols)]
        if self.residual:
            names.append("kappa")
        return names

    def natural(self, theta):
        """Interpretable covariance parameters."""
        c, kappa = self.unpack(theta)
        psi = c @ c.T
        if self.kind == "exchangeable":
            s2 = psi[0, 0] + kappa**2
            return {"sigma2": s2, "rho": psi[0, 0] / s2}
        if self.kind == "unstructured":
            return {"Sigma": psi}
        sd = np.sqrt(np.diag(psi))
        return {"Psi": psi, "phi": kappa**2, "resid_sd": abs(kappa), "re_sd": sd}


@dataclass(eq=False)
class ModelSpec:
    """A candidate model: mean columns of the design plus a covariance structure.

    The parameter vector is (beta, covariance parameters).
    """

    cov: CholeskyCov
    beta_cols: tuple
    name: str = ""

    def __post_init__(self):
        self.beta_cols = tuple(int(j) for j in self.beta_cols)
        if len(set(self.beta_cols)) != len(self.beta_cols):
            raise ValueError("duplicated beta column")

    @classmethod
    def exchangeable(cls, d, beta_cols=(0,), name=None):
        return cls(CholeskyCov(np.ones((d, 1)), True, "exchangeable"), beta_cols, name or "exchangeable")

    @classmethod
    def unstructured(cls, d, beta_cols=(0,), name=None):
        return cls(CholeskyCov(np.eye(d), False, "unstructured"), beta_cols, name or "unstructured")

    @classmethod
    def lmm(cls, z, beta_cols, name=None):
        return cls(CholeskyCov(z, True, "lmm"), beta_cols, name or "lmm")

    @property
    def d(self):
        return self.cov.d

    @property
    def p_beta(self):
        return len(self.beta_cols)

    @property
    def p(self):
        return self.p_beta + self.cov.n_params

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ValueError(f"expected {self.p} parameters, got shape {theta.shape}")
        return theta[: self.p_beta], theta[self.p_beta :]

    def param_names(self):
        return [f"beta{j}" for j in self.beta_cols] + self.cov.param_names()

    def canonical(self, theta):
        b, c = self.split(theta)
        return np.concatenate([b, self.cov.canonical(c)])

    def embed(self, theta, bigger):
        """Parameters of ``bigger`` reproducing this model's density (nested case)."""
        b, c = self.split(theta)
        out_b = np.zeros(bigger.p_beta)
        for j, col in enumerate(self.beta_cols):
            if col not in bigger.beta_cols:
                raise ValueError("mean model is not nested")
            out_b[bigger.beta_cols.index(col)] = b[j]
        if bigger.cov == self.cov:
            out_c = c
        elif bigger.cov.kind == "unstructured":
            out_c = bigger.cov.pack(np.linalg.cholesky(self.cov.sigma(c)))
        else:
            raise ValueError("cannot embed covariance into this structure")
        return np.concatenate([out_b, out_c])
