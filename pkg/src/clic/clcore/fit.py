"""Maximum composite likelihood fitting and the Godambe summary of a fit."""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import engine
from .schemes import MarginScheme
from .structures import ModelSpec

__all__ = ["FitOptions", "GodambeEstimate", "ConvergenceError", "fit", "start_values"]


class ConvergenceError(RuntimeError):
    def __init__(self, msg, theta=None, grad_norm=np.inf, trace=None):
        super().__init__(msg)
        self.theta = theta
        self.grad_norm = grad_norm
        self.trace = trace or []


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-8  # relative to max(1, |logCL|)
    max_iter: int = 200
    quasi_newton_fallback: bool = True

    def __post_init__(self):
        if not self.gtol > 0:
            raise ValueError("gtol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class GodambeEstimate:
    model: ModelSpec
    scheme: MarginScheme
    theta_hat: np.ndarray
    logCL: float
    H_hat: np.ndarray  # observed, -n^-1 d^2 logCL
    J_hat: np.ndarray  # n^-1 sum_i s_i s_i^T
    scores: np.ndarray = field(repr=False)
    n: int = 0
    iterations: int = 0
    converged: bool = True
    boundary: bool = False
    x: np.ndarray | None = field(default=None, repr=False)
    _model_blocks: tuple | None = field(default=None, init=False, repr=False)

    @property
    def p(self):
        return self.model.p

    @property
    def penalty(self):
        return float(np.trace(np.linalg.solve(self.H_hat, self.J_hat.T).T))

    @property
    def log_2pi_term(self):
        """The -(1/2) log(2 pi) part of logCL, summed over margins and subjects."""
        sizes = np.array([len(m) for m in self.scheme.margins], dtype=float)
        return -0.5 * self.n * np.log(2 * np.pi) * float(np.dot(self.scheme.weights, sizes))

    def model_blocks(self):
        """(H, J) implied by the fitted Gaussian working model at theta_hat.

        A plug-in alternative to the empirical pair: far less variable, but
        only consistent for J when the working model is correct.
        """
        if self._model_blocks is None:
            if self.x is None:
                raise ValueError("fit was summarized without its design")
            beta, psi = self.model.split(self.theta_hat)
            mean = self.x[:, :, list(self.model.beta_cols)] @ beta
            rep = engine.score_representation(self.model, self.scheme, mean, self.x, self.theta_hat)
            j = engine.cross_moment(rep, rep, self.model.cov.sigma(psi))
            h = engine.fisher_information(self.model, self.scheme, self.x, self.theta_hat) / self.n
            self._model_blocks = (h, j)
        return self._model_blocks

    def penalty_of(self, kind="empirical"):
        """tr(J H^-1) from the empirical or model-based blocks, or p for ``classical``."""
        if kind == "empirical":
            return self.penalty
        if kind == "model":
            h, j = self.model_blocks()
            return float(np.trace(np.linalg.solve(h, j.T).T))
        if kind == "classical":
            return float(self.p)
        raise ValueError(f"unknown penalty kind {kind!r}")

    @property
    def sandwich_cov(self):
        hinv = np.linalg.inv(self.H_hat)
        return hinv @ self.J_hat @ hinv / self.n

    @property
    def sandwich_se(self):
        return np.sqrt(np.clip(np.diag(self.sandwich_cov), 0.0, None))

    @property
    def beta(self):
        return self.model.split(self.theta_hat)[0]

    def natural(self):
        return self.model.cov.natural(self.model.split(self.theta_hat)[1])


def start_values(model, y, x, extra=None):
    """Pooled OLS for beta and moment estimates for the covariance."""
    xb = np.asarray(x, dtype=float)[:, :, list(model.beta_cols)]
    n, d, pb = xb.shape
    beta, *_ = np.linalg.lstsq(xb.reshape(n * d, pb), np.asarray(y, float).reshape(n * d), rcond=None)
    e = y - xb @ beta
    m = e.T @ e if extra is None else e.T @ e + extra
    return np.concatenate([beta, model.cov.start(m / n)])


def _newton(model, scheme, y, x, theta, opts, extra):
    """Damped Newton with Fisher scoring whenever the Hessian is not negative definite."""
    ev = engine.evaluate(model, scheme, y, x, theta, 2, extra)
    trace = []
    for it in range(1, opts.max_iter + 1):
        gnorm = np.max(np.abs(ev.grad))
        trace.append((ev.value, gnorm))
        if gnorm <= opts.gtol * max(1.0, abs(ev.value)):
            return theta, ev, it - 1, True, trace
        neg_h = -ev.hess
        try:
            np.linalg.cholesky(neg_h)
            step = np.linalg.solve(neg_h, ev.grad)
        except np.linalg.LinAlgError:
            info = engine.fisher_information(model, scheme, x, theta)
            try:
                step = np.linalg.solve(info, ev.grad)
            except np.linalg.LinAlgError:
                step = ev.grad / max(1.0, np.max(np.abs(ev.grad)))
        slope = ev.grad @ step
        t = 1.0
        while True:
            cand = theta + t * step
            try:
                nev = engine.evaluate(model, scheme, y, x, cand, 2, extra)
                ok = np.isfinite(nev.value) and nev.value >= ev.value + 1e-4 * t * slope
                # near the optimum the gain drowns in rounding; use the gradient instead
                flat = abs(nev.value - ev.value) <= 1e-12 * max(1.0, abs(ev.value))
                ok = ok or (flat and np.max(np.abs(nev.grad)) < gnorm)
            except np.linalg.LinAlgError:
                ok = False
            if ok:
                break
            t *= 0.5
            if t < 1e-12:
                return theta, ev, it, False, trace
        theta, ev = cand, nev
    return theta, ev, opts.max_iter, False, trace


def _quasi_newton(model, scheme, y, x, theta, extra):
    def fun(th):
        try:
            ev = engine.evaluate(model, scheme, y, x, th, 1, extra)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros_like(th)
        return -ev.value, -ev.grad

    res = optimize.minimize(fun, theta, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
    return res.x


def maximize(model, scheme, y, x, theta0=None, opts=None, extra=None):
    """Local maximizer of the (possibly expected) log composite likelihood."""
    opts = opts or FitOptions()
    theta = start_values(model, y, x, extra) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    theta, ev, its, ok, trace = _newton(model, scheme, y, x, theta, opts, extra)
    if not ok and opts.quasi_newton_fallback:
        theta = _quasi_newton(model, scheme, y, x, theta, extra)
        theta, ev, more, ok, trace2 = _newton(model, scheme, y, x, theta, opts, extra)
        its += more
        trace += trace2
    if not ok:
        raise ConvergenceError(
            f"no convergence after {its} iterations (|grad|={np.max(np.abs(ev.grad)):.3e})",
            theta,
            float(np.max(np.abs(ev.grad))),
            trace,
        )
    return model.canonical(theta), its


def fit(model, scheme, y, x, opts=None, theta0=None):
    """Fit ``model`` by maximum composite likelihood and summarize it."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("data must be finite")
    engine._check(model, scheme, y, x)
    n = y.shape[0]
    if n < model.p:
        raise ValueError(f"need n >= p ({n} < {model.p})")
    theta, its = maximize(model, scheme, y, x, theta0, opts)
    return summarize(model, scheme, y, x, theta, its)


def summarize(model, scheme, y, x, theta, iterations=0, converged=True):
    ev = engine.evaluate(model, scheme, y, x, theta, 2)
    n = ev.n
    s = engine.per_subject_scores(model, scheme, y, x, theta)
    return GodambeEstimate(
        model=model,
        scheme=scheme,
        theta_hat=theta,
        logCL=ev.value,
        H_hat=-ev.hess / n,
        J_hat=s.T @ s / n,
        scores=s,
        n=n,
        iterations=iterations,
        converged=converged,
        boundary=model.cov.at_boundary(model.split(theta)[1]),
        x=x,
    )
