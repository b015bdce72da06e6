"""Distribution of quadratic forms in normal variables.

The workhorse is Imhof's characteristic-function inversion

    P(Q > c) = 1/2 + (1/pi) int_0^inf sin(theta(u)) / (u rho(u)) du

for Q = sum_j lam_j (Z_j + delta_j)^2.  The finite part [0, U]
is done with Gauss-Legendre panels about half an oscillation wide, and the
reported error includes the difference between two Gauss rules.

For c != 0 the phase is theta_0(u) - c u / 2 with theta_0 bounded, so the
tail beyond U is a Fourier integral with smooth amplitude; it is handed to
QUADPACK's QAWF (epsilon-extrapolated cycles).  For c == 0, or when the
caller fixes U, the tail is dropped and bounded either by Imhof's bound or,
when the phase is monotone, by the oscillatory bound 2 A(U) / |theta'(U)|
with A = 1 / (u rho).

Correlated noncentral laws N(d, V) are only evaluated by Monte Carlo.
"""

from dataclasses import dataclass, field

import warnings

import numpy as np
from scipy import integrate

from ._kernels import imhof_integrand

__all__ = [
    "QuadFormLaw",
    "TailQuery",
    "TailResult",
    "QuadratureError",
    "imhof",
    "tail_prob",
    "selection_prob_C1",
    "selection_prob_threshold",
    "mc_oracle",
]

ZERO_EIG_RTOL = 1e-10


class QuadratureError(ArithmeticError):
    """Raised when the inversion integral cannot reach a usable accuracy."""

    def __init__(self, msg, error=np.inf):
        super().__init__(msg)
        self.error = error


@dataclass(frozen=True)
class QuadFormLaw:
    """Law of sum_j lam_j W_j^2 with W ~ N(noncentrality, cov)."""

    lambdas: np.ndarray
    noncentrality: np.ndarray | None = None
    cov: np.ndarray | None = None

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if lam.ndim != 1 or lam.size < 1 or not np.all(np.isfinite(lam)):
            raise ValueError("lambdas must be a non-empty finite vector")
        object.__setattr__(self, "lambdas", lam)
        if self.noncentrality is not None:
            nc = np.atleast_1d(np.asarray(self.noncentrality, dtype=float))
            if nc.shape != lam.shape or not np.all(np.isfinite(nc)):
                raise ValueError("noncentrality must match lambdas")
            object.__setattr__(self, "noncentrality", nc)
        if self.cov is not None:
            v = np.asarray(self.cov, dtype=float)
            if v.shape != (lam.size, lam.size) or not np.all(np.isfinite(v)):
                raise ValueError("cov must be m x m")
            if not np.allclose(v, v.T, atol=1e-10):
                raise ValueError("cov must be symmetric")
            if np.linalg.eigvalsh(v).min() < -1e-10:
                raise ValueError("cov must be positive semi-definite")
            object.__setattr__(self, "cov", v)

    @property
    def m(self):
        return self.lambdas.size

    @property
    def is_central(self):
        return self.noncentrality is None or not np.any(self.noncentrality)

    @property
    def has_identity_cov(self):
        return self.cov is None or np.allclose(self.cov, np.eye(self.m), atol=1e-12)


@dataclass(frozen=True)
class TailQuery:
    threshold: float
    upper: bool = True
    method: str = "cf"  # "cf" (Imhof inversion) or "mc"
    draws: int = 1_000_000
    step: float | None = None
    truncation: float | None = None
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("cf", "mc"):
            raise ValueError("method must be 'cf' or 'mc'")
        if self.method == "mc" and self.draws < 10_000:
            raise ValueError("Monte Carlo needs at least 1e4 draws")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.truncation is not None and self.truncation <= 0:
            raise ValueError("truncation must be positive")


@dataclass(frozen=True)
class TailResult:
    prob: float
    error: float
    method: str
    info: dict = field(default_factory=dict, compare=False)

    def __float__(self):
        return self.prob


def _drop_zero(lam, delta2):
    scale = np.max(np.abs(lam))
    if scale == 0:
        return lam[:0], delta2[:0]
    keep = np.abs(lam) >= ZERO_EIG_RTOL * scale
    return lam[keep], delta2[keep]


def _phase_slope_bound(u, lam, delta2):
    # bounds |d/du of the lambda-dependent part of theta| on [u, inf)
    return np.sum(0.5 * np.abs(lam) * (1.0 + delta2) / (1.0 + (lam * u) ** 2))


def _log_rho(u, lam, delta2):
    x2 = (lam * u) ** 2
    return np.sum(0.25 * np.log1p(x2) + 0.5 * delta2 * x2 / (1.0 + x2))


def _truncation_bound(u, lam, delta2, c):
    """Upper bound on |(1/pi) int_u^inf integrand|."""
    k = 0.5 * lam.size
    log_imhof = -(
        np.log(np.pi * k)
        + k * np.log(u)
        + 0.5 * np.sum(np.log(np.abs(lam)))
        + 0.5 * np.sum(delta2 * (lam * u) ** 2 / (1.0 + (lam * u) ** 2))
    )
    bound = np.exp(log_imhof)
    slope = 0.5 * abs(c) - _phase_slope_bound(u, lam, delta2)
    # the oscillatory bound needs a monotone amplitude/phase ratio on [u, inf)
    if slope > 0 and np.min(np.abs(lam)) * u > 2.0:
        amp = np.exp(-np.log(u) - _log_rho(u, lam, delta2))
        bound = min(bound, 2.0 * amp / (np.pi * slope))
    return bound


_GL_HI = np.polynomial.legendre.leggauss(20)
_GL_LO = np.polynomial.legendre.leggauss(14)


def _panel_integral(lam, delta2, c, upper, h, rule):
    nodes, wts = rule
    n_panels = int(np.ceil(upper / h))
    h = upper / n_panels
    left = np.arange(n_panels) * h
    u = (left[:, None] + 0.5 * h * (nodes[None, :] + 1.0)).ravel()
    vals = imhof_integrand(u, lam, delta2, c).reshape(n_panels, -1)
    return 0.5 * h * float(np.sum(vals @ wts)), n_panels


def _theta0(u, lam, delta2):
    x = lam * u
    return 0.5 * np.sum(np.arctan(x) + delta2 * x / (1.0 + x * x))


def _fourier_tail(lam, delta2, c, start, tol):
    """Integral of sin(theta_0 - c u/2)/(u rho) over [start, inf)."""
    omega = 0.5 * abs(c)
    sgn = 1.0 if c > 0 else -1.0

    def amp(u):
        return np.exp(-np.log(u) - _log_rho(u, lam, delta2))

    def f_cos(u):
        return np.sin(_theta0(u, lam, delta2)) * amp(u)

    def f_sin(u):
        return np.cos(_theta0(u, lam, delta2)) * amp(u)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            a, ea = integrate.quad(f_cos, start, np.inf, weight="cos", wvar=omega, epsabs=0.1 * tol, limlst=200)
            b, eb = integrate.quad(f_sin, start, np.inf, weight="sin", wvar=omega, epsabs=0.1 * tol, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"tail integral failed: {exc}") from None
    return a - sgn * b, ea + eb


def imhof(lambdas, c, noncentrality=None, tol=1e-6, step=None, truncation=None):
    """Upper tail P(sum lam_j (Z_j + delta_j)^2 > c) by Imhof inversion.

    Returns ``(prob, error_bound)``.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    delta = np.zeros_like(lam) if noncentrality is None else np.atleast_1d(np.asarray(noncentrality, float))
    lam, delta2 = _drop_zero(lam, delta**2)
    if lam.size == 0:
        return (1.0 if c < 0 else 0.0), 0.0
    if np.all(lam > 0) and c <= 0:
        return 1.0, 0.0
    if np.all(lam < 0) and c >= 0:
        return 0.0, 0.0

    tail = 0.0
    if truncation is not None:
        upper = float(truncation)
        trunc_err = _truncation_bound(upper, lam, delta2, c)
    else:
        upper = 1.0 / np.max(np.abs(lam))
        fourier_start = 4.0 / np.min(np.abs(lam))
        while (bound := _truncation_bound(upper, lam, delta2, c)) > 0.5 * tol:
            if c != 0 and upper >= fourier_start:
                break
            upper *= 2.0
            if upper > 1e10:
                raise QuadratureError("truncation point did not converge", bound)
        if bound > 0.5 * tol:
            tail, tail_err = _fourier_tail(lam, delta2, c, upper, tol)
            trunc_err = tail_err / np.pi
        else:
            trunc_err = bound

    if step is None:
        omega = 0.5 * np.sum(np.abs(lam) * (1.0 + 2.0 * delta2)) + 0.5 * abs(c)
        step = np.pi / omega
    hi, n_panels = _panel_integral(lam, delta2, c, upper, step, _GL_HI)
    lo, _ = _panel_integral(lam, delta2, c, upper, step, _GL_LO)
    prob = 0.5 + (hi + tail) / np.pi
    err = trunc_err + abs(hi - lo) / np.pi
    if err > max(1e3 * tol, 1e-3):
        raise QuadratureError(f"Imhof inversion error {err:.2e} exceeds tolerance", err)
    return float(min(1.0, max(0.0, prob))), float(err)


def mc_oracle(law, c, draws=1_000_000, seed=0, upper=True, chunk=250_000):
    """Monte Carlo estimate of P(Q > c) (or < c) with its binomial SE."""
    if draws < 10_000:
        raise ValueError("Monte Carlo needs at least 1e4 draws")
    if not isinstance(law, QuadFormLaw):
        law = QuadFormLaw(law)
    rng = np.random.Generator(np.random.Philox(seed))
    m = law.m
    mean = np.zeros(m) if law.noncentrality is None else law.noncentrality
    root = None
    if law.cov is not None:
        w, v = np.linalg.eigh(law.cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))
    hits = 0
    done = 0
    while done < draws:
        size = min(chunk, draws - done)
        z = rng.standard_normal((size, m))
        if root is not None:
            z = z @ root.T
        z += mean
        q = (z * z) @ law.lambdas
        hits += int(np.count_nonzero(q > c if upper else q < c))
        done += size
    p = hits / draws
    return p, float(np.sqrt(max(p * (1.0 - p), 1.0 / draws) / draws))


def tail_prob(law, query):
    """Tail probability of a quadratic form; see :class:`TailQuery`."""
    if not isinstance(law, QuadFormLaw):
        law = QuadFormLaw(law)
    if not isinstance(query, TailQuery):
        query = TailQuery(float(query))
    use_mc = query.method == "mc" or not (law.is_central or law.has_identity_cov)
    if use_mc:
        p, se = mc_oracle(law, query.threshold, query.draws, query.seed, upper=query.upper)
        return TailResult(p, se, "monte-carlo", {"draws": query.draws})
    if not law.has_identity_cov:
        # central with general V: Z'V^{1/2} diag(lam) V^{1/2}Z has weights eig(V^{1/2} L V^{1/2})
        w, v = np.linalg.eigh(law.cov)
        half = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        lam = np.linalg.eigvalsh(half @ np.diag(law.lambdas) @ half)
        delta = None
    else:
        lam, delta = law.lambdas, law.noncentrality
    p, err = imhof(lam, query.threshold, delta, tol=query.tol, step=query.step, truncation=query.truncation)
    if not query.upper:
        p = 1.0 - p
    return TailResult(p, err, "cf-inversion")


def _check_selection_lambdas(lambdas):
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lam.size == 0 or not np.all(np.isfinite(lam)):
        raise ValueError("lambdas must be a non-empty finite vector")
    scale = np.max(np.abs(lam))
    if scale == 0:
        raise ValueError("at least one lambda must be positive")
    if np.any(lam < -ZERO_EIG_RTOL * scale):
        raise ValueError("selection probabilities need non-negative lambdas")
    return np.clip(lam, 0.0, None)


def selection_prob_threshold(lambdas, c, tol=1e-9):
    """P(sum lam_j U_j < c sum lam_j) with U_j iid chi-square(1)."""
    if not c > 0:
        raise ValueError("threshold multiplier must be positive")
    lam = _check_selection_lambdas(lambdas)
    lam = lam / lam.max()
    if np.isinf(c):
        return 1.0
    p, _ = imhof(lam, c * lam.sum(), tol=tol)
    return 1.0 - p


def selection_prob_C1(lambdas, tol=1e-9):
    """Asymptotic probability that CLAIC keeps the smaller nested model."""
    return selection_prob_threshold(lambdas, 2.0, tol=tol)
