"""Model families, covariate designs and data generators.

Responses follow the clustered linear model

    y_i = x_i beta + z b_i + eps_i + shift,    i = 1..n

with a d x r random-effects design z shared by all clusters.  The
multivariate normal regression family is the same model written directly
through its cluster covariance Sigma.
"""

import csv
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "LmmSpec",
    "CholParam",
    "MvnRegSpec",
    "DesignSet",
    "TrueLaw",
    "rng_for",
    "simulate",
    "make_covariates",
    "sigma_schedule",
    "example3_delta",
    "BETA_LADDER",
    "SPRUCE_DAYS",
    "spruce_design",
    "SpruceData",
    "load_spruce_csv",
    "write_spruce_csv",
    "fetch_spruce",
    "synthetic_spruce",
]

BETA_LADDER = {
    "beta0": (0.3, 1.3, 0.00, 0.00),
    "beta1": (0.3, 1.3, 0.05, 0.02),
    "beta2": (0.3, 1.3, 0.15, 0.05),
    "beta3": (0.3, 1.3, 0.15, 0.10),
}

EPS1 = 0.07 * np.sqrt(200.0)
EPS2 = 0.05 * np.sqrt(200.0)


def _psd(a, what, tol=1e-10):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square")
    if not np.allclose(a, a.T, atol=tol):
        raise ValueError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(a).min() < -tol:
        raise ValueError(f"{what} must be positive semi-definite")
    return a


def _pd(a, what):
    a = _psd(a, what)
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} must be positive definite") from None
    return a


@dataclass(frozen=True)
class LmmSpec:
    beta: np.ndarray
    Psi: np.ndarray
    phi: float
    d: int

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "Psi", _psd(np.atleast_2d(self.Psi), "Psi"))
        if not self.phi > 0:
            raise ValueError("phi must be positive")

    @classmethod
    def exchangeable(cls, beta, sigma2, rho, d):
        """z = 1_d, Psi = sigma2 rho, phi = sigma2 (1 - rho)."""
        return cls(beta, [[sigma2 * rho]], sigma2 * (1.0 - rho), d)

    def sigma(self, z):
        z = np.asarray(z, dtype=float)
        return z @ self.Psi @ z.T + self.phi * np.eye(self.d)


@dataclass(frozen=True)
class CholParam:
    C: np.ndarray  # lower triangular
    kappa: float

    def __post_init__(self):
        c = np.asarray(self.C, dtype=float)
        if not np.allclose(c, np.tril(c)):
            raise ValueError("C must be lower triangular")
        signs = np.where(np.diag(c) < 0, -1.0, 1.0)
        object.__setattr__(self, "C", c * signs[None, :])
        object.__setattr__(self, "kappa", abs(float(self.kappa)))

    @classmethod
    def from_natural(cls, psi, phi):
        psi = _psd(np.atleast_2d(psi), "Psi")
        w, v = np.linalg.eigh(psi)
        jitter = 1e-14 * max(1.0, np.abs(w).max())
        return cls(np.linalg.cholesky(psi + jitter * np.eye(psi.shape[0])), np.sqrt(phi))

    @property
    def Psi(self):
        return self.C @ self.C.T

    @property
    def phi(self):
        return self.kappa**2


@dataclass(frozen=True)
class MvnRegSpec:
    beta: np.ndarray
    Sigma: np.ndarray
    structure: str = "fixed-matrix"  # exchangeable | unstructured | fixed-matrix

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "Sigma", _pd(self.Sigma, "Sigma"))
        if self.structure not in ("exchangeable", "unstructured", "fixed-matrix"):
            raise ValueError(f"unknown structure {self.structure!r}")

    @classmethod
    def exchangeable(cls, beta, sigma2, rho, d):
        if not -1.0 / (d - 1) < rho < 1.0:
            raise ValueError("rho outside the positive-definite range")
        return cls(beta, sigma2 * ((1 - rho) * np.eye(d) + rho), "exchangeable")

    @property
    def d(self):
        return self.Sigma.shape[0]


@dataclass(frozen=True)
class DesignSet:
    x: np.ndarray  # (n, d, s+1), first column ones
    z: np.ndarray  # (d, r), shared by all clusters

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if x.ndim != 3 or z.ndim != 2 or x.shape[1] != z.shape[0]:
            raise ValueError(f"inconsistent design shapes x {x.shape}, z {z.shape}")
        if not np.all(x[:, :, 0] == 1.0):
            raise ValueError("first column of every x_i must be ones")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def subset(self, rows):
        return DesignSet(self.x[rows], self.z)


@dataclass(frozen=True)
class TrueLaw:
    """Data-generating law.

    ``effects`` picks the law of the standardized random terms: for an
    :class:`LmmSpec` base it applies to b_i = C t_i (eps stays normal); for an
    :class:`MvnRegSpec` base it applies to the whole residual chol(Sigma) u_i.
    Student t terms are raw (variance df/(df-2)) unless ``t_scaled``.
    """

    base: object
    effects: str = "normal"  # normal | t | laplace
    df: float = 3.0
    t_scaled: bool = False
    mean_shift: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.base, (LmmSpec, MvnRegSpec)):
            raise TypeError("base must be an LmmSpec or MvnRegSpec")
        if self.effects not in ("normal", "t", "laplace"):
            raise ValueError(f"unknown effects law {self.effects!r}")
        if self.effects == "t" and not self.df > 2:
            raise ValueError("t effects need df > 2")
        if self.mean_shift is not None:
            shift = np.asarray(self.mean_shift, dtype=float)
            if shift.shape != (self.d,):
                raise ValueError("mean shift must have length d")
            object.__setattr__(self, "mean_shift", shift)

    @property
    def d(self):
        return self.base.d

    @property
    def beta(self):
        return self.base.beta

    def _unit_scale(self):
        if self.effects == "t" and not self.t_scaled:
            return self.df / (self.df - 2.0)
        return 1.0

    def _excess_kurtosis(self):
        if self.effects == "normal":
            return 0.0
        if self.effects == "laplace":
            return 3.0
        return 6.0 / (self.df - 4.0) if self.df > 4 else np.inf

    def loading(self, z):
        """(T, kurtosis) with residual r = T u, u independent, unit variance."""
        k = self._excess_kurtosis()
        s = np.sqrt(self._unit_scale())
        if isinstance(self.base, MvnRegSpec):
            return s * np.linalg.cholesky(self.base.Sigma), np.full(self.d, k)
        c = CholParam.from_natural(self.base.Psi, self.base.phi).C
        t = np.hstack([s * (np.asarray(z, float) @ c), np.sqrt(self.base.phi) * np.eye(self.d)])
        return t, np.concatenate([np.full(c.shape[1], k), np.zeros(self.d)])

    def residual_cov(self, z=None):
        if isinstance(self.base, MvnRegSpec):
            return self.base.Sigma * self._unit_scale()
        t, _ = self.loading(z)
        return t @ t.T

    def means(self, designs):
        x = designs.x
        k = self.beta.size
        if k > x.shape[2]:
            raise ValueError("beta longer than the design")
        m = x[:, :, :k] @ self.beta
        if self.mean_shift is not None:
            m = m + self.mean_shift
        return m

    def moments(self, designs):
        """Means, residual covariance, loading and excess kurtosis."""
        t, kurt = self.loading(designs.z)
        if np.any(np.isinf(kurt)):
            raise ValueError("fourth moments do not exist for this law; use Monte Carlo")
        return self.means(designs), t @ t.T, t, kurt


def _key(k):
    # strings map to a stable 32-bit word so named substreams are reproducible
    return zlib.crc32(k.encode()) if isinstance(k, str) else int(k)


def rng_for(seed, *keys):
    """Philox generator on the substream (seed, *keys); keys are ints or strings."""
    ss = np.random.SeedSequence([int(seed), *[_key(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def _unit_draws(rng, effects, size, df):
    if effects == "normal":
        return rng.standard_normal(size)
    if effects == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size)
    return rng.standard_t(df, size)


def simulate(law, designs, seed, rng=None):
    """Responses y (n, d) for every cluster in ``designs``."""
    if designs.d != law.d:
        raise ValueError("cluster size of law and designs differ")
    rng = rng if rng is not None else rng_for(seed)
    n, d = designs.n, designs.d
    mean = law.means(designs)
    if isinstance(law.base, MvnRegSpec):
        root = np.linalg.cholesky(law.base.Sigma)
        u = _unit_draws(rng, law.effects, (n, d), law.df)
        if law.effects == "t" and law.t_scaled:
            u *= np.sqrt((law.df - 2.0) / law.df)
        return mean + u @ root.T
    z = designs.z
    if z.shape[1] != law.base.Psi.shape[0]:
        raise ValueError("z does not match Psi")
    c = CholParam.from_natural(law.base.Psi, law.base.phi).C
    u = _unit_draws(rng, law.effects, (n, c.shape[1]), law.df)
    if law.effects == "t" and law.t_scaled:
        u *= np.sqrt((law.df - 2.0) / law.df)
    eps = np.sqrt(law.base.phi) * rng.standard_normal((n, d))
    return mean + u @ (z @ c).T + eps


_COVARIATE_SETTINGS = ("iid-normal", "correlated-normal", "multivariate-t")


def make_covariates(setting, n, d, n_covariates, seed=0, level="observation", df=3.0, rng=None):
    """Designs with an intercept plus ``n_covariates`` random covariates.

    ``level="observation"`` draws a covariate vector for every row of every
    cluster; ``level="cluster"`` draws one vector per cluster and repeats it.
    The multivariate t has scale matrix I (not variance-standardized).
    """
    if setting not in _COVARIATE_SETTINGS:
        raise ValueError(f"setting must be one of {_COVARIATE_SETTINGS}")
    if n_covariates < 1:
        raise ValueError("need at least one covariate")
    if level not in ("observation", "cluster"):
        raise ValueError("level must be 'observation' or 'cluster'")
    rng = rng if rng is not None else rng_for(seed)
    rows = n * d if level == "observation" else n
    k = n_covariates
    if setting == "correlated-normal":
        root = np.linalg.cholesky(0.2 * np.eye(k) + 0.8)
        cov = rng.standard_normal((rows, k)) @ root.T
    else:
        cov = rng.standard_normal((rows, k))
        if setting == "multivariate-t":
            cov /= np.sqrt(rng.chisquare(df, (rows, 1)) / df)
    cov = cov.reshape(n, d, k) if level == "observation" else np.repeat(cov[:, None, :], d, axis=1)
    x = np.concatenate([np.ones((n, d, 1)), cov], axis=2)
    return DesignSet(x, np.ones((d, 1)))


def example3_delta(label, n, rate="sqrt-log"):
    """Perturbation size of the Sigma(delta) family for labels Sigma1..Sigma4.

    ``rate`` sets Sigma3: ``"sqrt-log"`` gives sqrt(log n / n), ``"log10"``
    gives log10(n) / sqrt(n) and ``"log"`` gives log(n) / sqrt(n).
    """
    if label == "Sigma1":
        return 0.0
    if label == "Sigma2":
        return n**-0.5
    if label == "Sigma3":
        rates = {
            "sqrt-log": np.sqrt(np.log(n) / n),
            "log10": np.log10(n) / np.sqrt(n),
            "log": np.log(n) / np.sqrt(n),
        }
        try:
            return float(rates[rate])
        except KeyError:
            raise ValueError(f"unknown rate {rate!r}") from None
    if label == "Sigma4":
        return 0.2
    raise ValueError(f"unknown label {label!r}")


def sigma_schedule(kind, n=200, d=4, delta=None):
    """Cluster covariance matrices of the perturbation studies."""
    base = 0.5 * np.eye(d) + 0.5
    if kind == "Sigma1":
        out = base
    elif kind in ("Sigma2", "Sigma1a", "Sigma2a", "Sigma_delta"):
        if d != 4:
            raise ValueError(f"{kind} is defined for d = 4")
        if kind == "Sigma_delta":
            if delta is None:
                raise ValueError("Sigma_delta needs delta")
            bump = float(delta)
        else:
            bump = EPS1 / np.sqrt(n) if kind in ("Sigma2", "Sigma2a") else 0.0
        out = base.copy()
        out[0, 1] = out[1, 0] = out[2, 3] = out[3, 2] = 0.5 + bump
        if kind in ("Sigma1a", "Sigma2a"):
            dd = np.diag([1.0, 1.0, 1.0 + EPS2 / np.sqrt(n), 1.0 + EPS2 / np.sqrt(n)])
            out = dd @ out @ dd
    else:
        raise ValueError(f"unknown schedule {kind!r}")
    if np.linalg.eigvalsh(out).min() <= 0:
        raise ValueError(f"{kind} is not positive definite")
    return out


# ---------------------------------------------------------------- spruce data

SPRUCE_DAYS = (152, 174, 201, 227, 258, 469, 496, 528, 556, 579, 613, 639, 674)
_PERIOD1 = (152, 258)
_PERIOD2 = (469, 674)


def _spruce_rows(days):
    rows = []
    for t in days:
        if _PERIOD1[0] <= t <= _PERIOD1[1]:
            rows.append((1.0, (t - 152) / 100.0, 0.0))
        elif _PERIOD2[0] <= t <= _PERIOD2[1]:
            rows.append((1.0, (258 - 152) / 100.0, (t - 445) / 100.0))
        else:
            raise ValueError(f"day {t} outside both growth periods")
    return np.array(rows)


def spruce_design(days, ozone):
    """Designs of the piecewise-linear growth model.

    Fixed columns are (1, u1, u2, oz, oz*u1, oz*u2) and random columns
    (1, u1, u2) with u1, u2 the period-1 and period-2 time scales.
    """
    base = _spruce_rows(days)
    oz = np.asarray(ozone, dtype=float).reshape(-1)
    x = np.concatenate(
        [np.repeat(base[None], oz.size, axis=0), oz[:, None, None] * base[None]],
        axis=2,
    )
    return DesignSet(x, base)


@dataclass(frozen=True)
class SpruceData:
    y: np.ndarray  # (trees, days)
    days: tuple
    tree_ids: tuple
    plots: np.ndarray

    @property
    def ozone(self):
        return np.isin(self.plots, (1, 2)).astype(float)

    def designs(self):
        return spruce_design(self.days, self.ozone)


_SPRUCE_COLUMNS = ("tree_id", "plot", "day", "log_size")


def load_spruce_csv(path):
    """Read the long-format CSV (tree_id, plot, day, log_size)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:4]) != _SPRUCE_COLUMNS:
            raise ValueError(f"expected columns {_SPRUCE_COLUMNS}, got {reader.fieldnames}")
        records = {}
        plots = {}
        for line, row in enumerate(reader, start=2):
            try:
                tree = row["tree_id"]
                plot = int(row["plot"])
                day = int(row["day"])
                val = float(row["log_size"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"line {line}: {exc}") from None
            if plot not in (1, 2, 3, 4):
                raise ValueError(f"line {line}: plot must be 1-4")
            if plots.setdefault(tree, plot) != plot:
                raise ValueError(f"line {line}: tree {tree} changes plot")
            records.setdefault(tree, {})[day] = val
    if not records:
        raise ValueError("no data rows")
    trees = tuple(records)
    days = tuple(sorted(records[trees[0]]))
    for t in trees:
        if tuple(sorted(records[t])) != days:
            raise ValueError(f"tree {t} is not observed on the common days")
    y = np.array([[records[t][dd] for dd in days] for t in trees])
    return SpruceData(y, days, trees, np.array([plots[t] for t in trees]))


def write_spruce_csv(data, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SPRUCE_COLUMNS)
        for tree, plot, row in zip(data.tree_ids, data.plots, data.y):
            for day, val in zip(data.days, row):
                w.writerow([tree, int(plot), int(day), repr(float(val))])


def fetch_spruce(dest=None):
    """Locate the spruce data and return its CSV path, or None.

    Looks at ``$CLIC_SPRUCE_CSV`` first and otherwise converts the copy
    shipped by the optional ``rdatasets`` package.
    """
    env = os.environ.get("CLIC_SPRUCE_CSV")
    if env and Path(env).is_file():
        return Path(env)
    try:
        import rdatasets
    except ImportError:
        return None
    try:
        df = rdatasets.data("nlme", "Spruce")
    except Exception:
        return None
    dest = Path(dest) if dest else Path.home() / ".cache" / "clic" / "spruce.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SPRUCE_COLUMNS)
        for tree, plot, day, val in zip(df["Tree"], df["plot"], df["days"], df["logSize"]):
            w.writerow([tree, int(plot), int(day), repr(float(val))])
    return dest


def synthetic_spruce(seed=0):
    """Simulated data with the shape and rough parameter values of the real set."""
    plots = np.repeat([1, 2, 3, 4], [27, 27, 12, 13])
    trees = tuple(f"{'O' if p <= 2 else 'N'}{p}T{i + 1:02d}" for i, p in enumerate(plots))
    designs = spruce_design(SPRUCE_DAYS, np.isin(plots, (1, 2)))
    psi = np.diag([0.62, 0.27, 0.10]) ** 2
    law = TrueLaw(LmmSpec([4.27, 1.42, 0.37, -0.10, -0.22, 0.0], psi, 0.138**2, 13))
    y = simulate(law, designs, seed)
    return SpruceData(np.round(y, 2), SPRUCE_DAYS, trees, plots)

