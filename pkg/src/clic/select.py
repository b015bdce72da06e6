"""Information criteria, composite likelihood ratios and the B-matrix.

For nested models 1 within 2 the limit law of 2 LR is sum_j lam_j U_j with
U_j iid chi-square(1) and lam_j the nonzero eigenvalues of

    B = [[-J11 H1^-1, J12 H2^-1],
         [-J21 H1^-1, J22 H2^-1]]

whose trace equals the penalty difference tr(J22 H2^-1) - tr(J11 H1^-1).
The blocks come from fitted models (:func:`empirical_blocks`) or from a
true law (:func:`expected_blocks`).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import qfdist
from .clcore import engine
from .clcore.fit import maximize

__all__ = [
    "CriterionReport",
    "criteria",
    "lr_statistic",
    "NestedPairAnalysis",
    "bmatrix",
    "EigenResult",
    "bmatrix_eigenvalues",
    "theoretical_selection_probs",
    "expected_blocks",
    "empirical_blocks",
    "pseudo_true",
]


@dataclass
class CriterionReport:
    names: list
    p: np.ndarray
    logCL: np.ndarray
    penalty: np.ndarray
    n: int
    scheme: str
    classical: bool = False
    divisor: float = 1.0

    @property
    def claic(self):
        return (-2.0 * self.logCL + 2.0 * self.penalty) / self.divisor

    @property
    def clbic(self):
        return (-2.0 * self.logCL + math.log(self.n) * self.penalty) / self.divisor

    def _labels(self):
        if self.scheme == "FULL":
            return "AIC", "BIC"
        return "CLAIC", "CLBIC"

    def values(self):
        a, b = self._labels()
        return {a: self.claic, b: self.clbic}

    def ties(self, rtol=1e-12):
        out = {}
        for label, v in self.values().items():
            best = v.min()
            hit = np.flatnonzero(np.abs(v - best) <= rtol * max(1.0, abs(best)))
            out[label] = [int(k) for k in hit]
        return out

    @property
    def selected(self):
        """Index of the minimizing model per criterion (first one on ties)."""
        return {k: v[0] for k, v in self.ties().items()}

    def rows(self):
        a, b = self._labels()
        sel = self.selected
        return [
            {
                "model": name,
                "scheme": self.scheme,
                "n": self.n,
                "p": int(self.p[k]),
                "logCL": float(self.logCL[k]),
                "penalty": float(self.penalty[k]),
                a: float(self.claic[k]),
                b: float(self.clbic[k]),
                f"selected_{a}": sel[a] == k,
                f"selected_{b}": sel[b] == k,
            }
            for k, name in enumerate(self.names)
        ]


def criteria(fits, n=None, classical=False, divisor=1.0, penalty="empirical", drop_constant=False):
    """CLAIC/CLBIC (AIC/BIC for the full likelihood) for competing fits.

    ``penalty`` picks the tr(J H^-1) estimate: ``"empirical"`` (sandwich
    blocks) or ``"model"`` (blocks implied by the fitted working model).
    ``classical=True`` replaces it by the parameter count.
    ``drop_constant`` removes the log(2 pi) terms from logCL.  None of
    these options that act on all candidates alike changes a decision
    when the penalty is fixed.
    """
    if not fits:
        raise ValueError("no fits given")
    scheme = fits[0].scheme
    for f in fits[1:]:
        if not f.scheme.same_as(scheme):
            raise ValueError("all candidates must use the same margin scheme")
    n = fits[0].n if n is None else n
    p = np.array([f.p for f in fits])
    kind = "classical" if classical else penalty
    pen = np.array([f.penalty_of(kind) for f in fits])
    return CriterionReport(
        names=[f.model.name for f in fits],
        p=p,
        logCL=np.array([f.logCL - (f.log_2pi_term if drop_constant else 0.0) for f in fits]),
        penalty=pen,
        n=n,
        scheme=scheme.name,
        classical=classical,
        divisor=divisor,
    )


def lr_statistic(fit1, fit2, tol=1e-6):
    """L2(gamma_hat) - L1(theta_hat) for model 1 nested in model 2."""
    if not fit1.scheme.same_as(fit2.scheme):
        raise ValueError("fits use different margin schemes")
    lr = fit2.logCL - fit1.logCL
    if lr < -tol * max(1.0, abs(fit2.logCL)):
        raise ValueError(f"negative likelihood ratio {lr:.3g}; the bigger model is not at its maximum")
    return max(lr, 0.0)


@dataclass
class NestedPairAnalysis:
    H1: np.ndarray
    J11: np.ndarray
    H2: np.ndarray
    J22: np.ndarray
    J12: np.ndarray
    J21: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.J21 is None:
            self.J21 = self.J12.T

    @property
    def p1(self):
        return self.H1.shape[0]

    @property
    def p2(self):
        return self.H2.shape[0]

    @property
    def m(self):
        return self.p2 - self.p1

    @property
    def penalty1(self):
        return float(np.trace(np.linalg.solve(self.H1.T, self.J11.T).T))

    @property
    def penalty2(self):
        return float(np.trace(np.linalg.solve(self.H2.T, self.J22.T).T))

    def bmatrix(self):
        return bmatrix(self)

    def eigenvalues(self, rtol=1e-6, m=None):
        """Eigenvalues of B; estimated blocks keep the m largest by default."""
        if m is None and self.info.get("mode") != "closed-form":
            m = self.m
        return bmatrix_eigenvalues(self.bmatrix(), rtol, m)


def _right_inv(a, h):
    # a @ inv(h) without forming the inverse
    try:
        return np.linalg.solve(h.T, a.T).T
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular H block") from None


def bmatrix(blocks):
    return np.block(
        [
            [-_right_inv(blocks.J11, blocks.H1), _right_inv(blocks.J12, blocks.H2)],
            [-_right_inv(blocks.J21, blocks.H1), _right_inv(blocks.J22, blocks.H2)],
        ]
    )


@dataclass
class EigenResult:
    values: np.ndarray  # retained, real, descending
    all_values: np.ndarray
    max_imag: float
    complex_flag: bool

    @property
    def m(self):
        return self.values.size


def bmatrix_eigenvalues(b, rtol=1e-6, m=None):
    """Nonzero eigenvalues of a (non-symmetric) B-matrix.

    Eigenvalues below ``rtol`` times the spectral radius are dropped.  With
    sampling noise the structural zeros are not small, so ``m`` instead keeps
    the m eigenvalues of largest modulus.
    """
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("B has non-finite entries")
    ev = np.linalg.eigvals(b)
    radius = float(np.max(np.abs(ev))) if ev.size else 0.0
    max_imag = float(np.max(np.abs(ev.imag))) if ev.size else 0.0
    if radius == 0.0:
        return EigenResult(np.zeros(0), ev, 0.0, False)
    keep = np.abs(ev) > rtol * radius
    if m is not None:
        keep = np.zeros(ev.size, dtype=bool)
        keep[np.argsort(-np.abs(ev), kind="stable")[:m]] = True
    vals = np.sort(ev[keep].real)[::-1]
    return EigenResult(vals, ev, max_imag, max_imag > rtol * radius)


def theoretical_selection_probs(lambdas, n):
    """Limit probabilities that CLAIC and CLBIC keep the smaller model."""
    return {
        "CLAIC": qfdist.selection_prob_C1(lambdas),
        "CLBIC": qfdist.selection_prob_threshold(lambdas, math.log(n)),
    }


def pseudo_true(law, designs, model, scheme, theta0=None):
    """Divergence-minimizing parameters: zero of the expected composite score.

    The expected score only involves the first two moments of the law, so
    it is available in closed form even when fourth moments are not.
    """
    mean = law.means(designs)
    omega = law.residual_cov(designs.z)
    n = designs.n
    extra = n * omega
    theta, _ = maximize(model, scheme, mean, designs.x, theta0=theta0, extra=extra)
    return theta


def _expected_hessian(law, designs, model, scheme, theta):
    mean = law.means(designs)
    extra = designs.n * law.residual_cov(designs.z)
    return -engine.evaluate(model, scheme, mean, designs.x, theta, 2, extra).hess / designs.n


def expected_blocks(law, designs, model1, model2, scheme, mode="closed-form", draws=100_000, seed=0, chunk=20_000):
    """H and J blocks of a nested pair under a true law.

    ``closed-form`` integrates exactly (needs finite fourth moments);
    ``monte-carlo`` averages per-subject Hessians and score products over
    ``draws`` simulated subjects, cycling through the design rows.
    """
    theta = pseudo_true(law, designs, model1, scheme)
    gamma = pseudo_true(law, designs, model2, scheme)
    info = {"theta_star": theta, "gamma_star": gamma, "mode": mode}
    if mode == "closed-form":
        mean, omega, t, kurt = law.moments(designs)
        r1 = engine.score_representation(model1, scheme, mean, designs.x, theta)
        r2 = engine.score_representation(model2, scheme, mean, designs.x, gamma)
        return NestedPairAnalysis(
            H1=_expected_hessian(law, designs, model1, scheme, theta),
            J11=engine.cross_moment(r1, r1, omega, t, kurt),
            H2=_expected_hessian(law, designs, model2, scheme, gamma),
            J22=engine.cross_moment(r2, r2, omega, t, kurt),
            J12=engine.cross_moment(r1, r2, omega, t, kurt),
            info=info,
        )
    if mode != "monte-carlo":
        raise ValueError("mode must be 'closed-form' or 'monte-carlo'")
    if draws < 1000:
        raise ValueError("Monte Carlo mode needs at least 1000 draws")
    from .models import rng_for, simulate

    p1, p2 = model1.p, model2.p
    h1 = np.zeros((p1, p1))
    h2 = np.zeros((p2, p2))
    s_sum = np.zeros((p1 + p2, p1 + p2))
    s_sq = np.zeros((p1 + p2, p1 + p2))
    done = 0
    block = 0
    while done < draws:
        size = min(chunk, draws - done)
        rows = np.arange(done, done + size) % designs.n
        sub = designs.subset(rows)
        y = simulate(law, sub, seed, rng=rng_for(seed, block))
        h1 -= engine.evaluate(model1, scheme, y, sub.x, theta, 2).hess
        h2 -= engine.evaluate(model2, scheme, y, sub.x, gamma, 2).hess
        s = np.hstack(
            [
                engine.per_subject_scores(model1, scheme, y, sub.x, theta),
                engine.per_subject_scores(model2, scheme, y, sub.x, gamma),
            ]
        )
        s_sum += s.T @ s
        s_sq += (s * s).T @ (s * s)
        done += size
        block += 1
    j = s_sum / draws
    info["J_se"] = np.sqrt(np.clip(s_sq / draws - j**2, 0.0, None) / draws)
    info["draws"] = draws
    return NestedPairAnalysis(
        H1=h1 / draws,
        J11=j[:p1, :p1],
        H2=h2 / draws,
        J22=j[p1:, p1:],
        J12=j[:p1, p1:],
        J21=j[p1:, :p1],
        info=info,
    )


def empirical_blocks(fit1, fit2):
    """Plug-in blocks from two fits on the same data."""
    if fit1.n != fit2.n:
        raise ValueError("fits use different data")
    n = fit1.n
    return NestedPairAnalysis(
        H1=fit1.H_hat,
        J11=fit1.J_hat,
        H2=fit2.H_hat,
        J22=fit2.J_hat,
        J12=fit1.scores.T @ fit2.scores / n,
        info={"mode": "empirical"},
    )
