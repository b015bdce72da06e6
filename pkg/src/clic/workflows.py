"""Delete-one jackknife and the spruce growth analysis."""

from dataclasses import dataclass, field

import numpy as np

from .clcore import ConvergenceError, MarginScheme, ModelSpec, fit
from .clcore.fit import maximize
from .models import SpruceData
from .select import criteria

__all__ = [
    "JackknifeResult",
    "JackknifeError",
    "jackknife",
    "SPRUCE_SUBMODELS",
    "spruce_models",
    "spruce_estimates",
    "SpruceAnalysis",
    "spruce_analysis",
]


class JackknifeError(RuntimeError):
    def __init__(self, msg, index):
        super().__init__(msg)
        self.index = index


@dataclass
class JackknifeResult:
    names: list
    estimate: np.ndarray
    se: np.ndarray
    deletions: np.ndarray = field(repr=False)  # (n, k)

    def rows(self):
        return [{"parameter": k, "estimate": float(e), "se": float(s)} for k, e, s in zip(self.names, self.estimate, self.se)]


def jackknife(model, scheme, y, x, theta_hat=None, transform=None, names=None):
    """Delete-one jackknife SEs of ``transform(theta)`` (theta itself by default).

    Each deletion refit is warm-started at the full-data estimate.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = y.shape[0]
    if n < 10:
        raise ValueError("the jackknife needs n >= 10")
    if theta_hat is None:
        theta_hat = fit(model, scheme, y, x).theta_hat
    transform = transform or (lambda th: np.asarray(th, dtype=float))
    est = np.asarray(transform(theta_hat), dtype=float)
    out = np.empty((n, est.size))
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        keep[i] = False
        try:
            th, _ = maximize(model, scheme, y[keep], x[keep], theta0=theta_hat)
        except (ConvergenceError, np.linalg.LinAlgError) as exc:
            raise JackknifeError(f"deletion {i} failed: {exc}", i) from exc
        out[i] = transform(th)
        keep[i] = True
    centred = out - out.mean(axis=0)
    se = np.sqrt((n - 1) / n * np.sum(centred**2, axis=0))
    names = list(names) if names is not None else [f"theta{k}" for k in range(est.size)]
    return JackknifeResult(names, est, se, out)


# beta_j enters as column j of (1, u1, u2, oz, oz*u1, oz*u2)
SPRUCE_SUBMODELS = {6: (0, 1, 2, 3, 4, 5), 5: (0, 1, 2, 3, 4), 4: (0, 1, 2, 4), 3: (0, 1, 2)}


def spruce_models(z):
    return {k: ModelSpec.lmm(z, cols, f"{k} betas") for k, cols in SPRUCE_SUBMODELS.items()}


def _natural_vector(model, theta):
    beta, psi = model.split(theta)
    nat = model.cov.natural(psi)
    return np.concatenate([beta, [nat["resid_sd"]], nat["re_sd"]])


def _natural_names(model):
    return [f"beta{j}" for j in model.beta_cols] + ["resid_sd", "sd_b0", "sd_b1", "sd_b2"]


def spruce_estimates(data, model, scheme, with_jackknife=True):
    """Estimates of one model on the spruce data, optionally with jackknife SEs."""
    designs = data.designs()
    f = fit(model, scheme, data.y, designs.x)
    names = _natural_names(model)
    if not with_jackknife:
        return f, JackknifeResult(names, _natural_vector(model, f.theta_hat), np.full(len(names), np.nan), np.zeros((0, len(names))))
    jk = jackknife(
        model, scheme, data.y, designs.x, f.theta_hat, transform=lambda th: _natural_vector(model, th), names=names
    )
    return f, jk


@dataclass
class SpruceAnalysis:
    estimates: dict  # scheme -> JackknifeResult of the 6-beta model
    reports: dict  # scheme -> CriterionReport over the 6/5/4/3-beta models
    fits: dict  # (scheme, k) -> GodambeEstimate

    def decisions(self):
        out = {}
        for s, rep in self.reports.items():
            for label, k in rep.selected.items():
                out[f"{label}[{s}]"] = len(SPRUCE_SUBMODELS[list(SPRUCE_SUBMODELS)[k]])
        return out

    def criterion_rows(self):
        rows = []
        for s, rep in self.reports.items():
            for r in rep.rows():
                r["divisor"] = rep.divisor
                rows.append(r)
        return rows


def spruce_analysis(
    data: SpruceData, schemes=("FULL", "TCL", "BCL"), with_jackknife=True, penalty="model", drop_constant=True
):
    """Fit the nested 6-, 5-, 4- and 3-beta models under each scheme.

    Composite criteria are divided by the number of margins, which leaves
    every decision unchanged.  The defaults (plug-in penalty, logCL without
    its log(2 pi) terms) give the conventional published scale; with the
    model penalty AIC/BIC use exactly p.
    """
    designs = data.designs()
    models = spruce_models(designs.z)
    d = data.y.shape[1]
    estimates, reports, fits = {}, {}, {}
    for s in schemes:
        scheme = MarginScheme.named(s, d)
        f6, jk = spruce_estimates(data, models[6], scheme, with_jackknife)
        estimates[s] = jk
        fits[(s, 6)] = f6
        for k in (5, 4, 3):
            fits[(s, k)] = fit(models[k], scheme, data.y, designs.x)
        divisor = 1.0 if s == "FULL" else float(scheme.normalizer())
        reports[s] = criteria(
            [fits[(s, k)] for k in SPRUCE_SUBMODELS], divisor=divisor, penalty=penalty, drop_constant=drop_constant
        )
    return SpruceAnalysis(estimates, reports, fits)
