"""Replicate loop: simulate, fit every candidate under every scheme, decide."""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..clcore import ConvergenceError, MarginScheme, fit
from ..models import rng_for, simulate
from ..select import criteria as criterion_report
from .tables import DecisionTable

__all__ = ["ReplicateResult", "run_replicate", "run_scenario", "write_replicates_csv"]


@dataclass
class ReplicateResult:
    replicate: int
    ok: bool
    decisions: dict = field(default_factory=dict)  # criterion -> candidate index
    penalty: dict = field(default_factory=dict)  # scheme -> per-candidate array
    logcl: dict = field(default_factory=dict)
    error: str = ""


def _criterion_scheme(cfg, crit):
    if crit in ("AIC", "BIC"):
        return "FULL"
    return next(s for s in cfg.schemes if s != "FULL")


def run_replicate(cfg, r, law=None, models=None):
    law = law or cfg.law()
    models = models or cfg.models()
    rng = rng_for(cfg.seed, r)
    designs = cfg.covariates.draw(cfg.n, cfg.d, rng)
    y = simulate(law, designs, cfg.seed, rng=rng)
    out = ReplicateResult(r, True)
    reports = {}
    try:
        for s in cfg.schemes:
            scheme = MarginScheme.named(s, cfg.d)
            fits = [fit(m, scheme, y, designs.x) for m in models]
            classical = cfg.classical_full and s == "FULL"
            reports[s] = criterion_report(fits, classical=classical, penalty=cfg.penalty)
            out.penalty[s] = np.array([f.penalty_of(cfg.penalty) for f in fits])
            out.logcl[s] = np.array([f.logCL for f in fits])
    except (ConvergenceError, np.linalg.LinAlgError, ValueError) as exc:
        return ReplicateResult(r, False, error=f"{type(exc).__name__}: {exc}")
    for crit in cfg.criteria:
        rep = reports[_criterion_scheme(cfg, crit)]
        label = crit if crit in ("AIC", "BIC") else crit.replace("CL", "", 1)
        vals = rep.claic if label == "AIC" else rep.clbic
        out.decisions[crit] = int(np.argmin(vals))
    return out


def _chunk(args):
    cfg, rows = args
    law, models = cfg.law(), cfg.models()
    return [run_replicate(cfg, r, law, models) for r in rows]


def run_scenario(cfg, workers=1, replicates=None):
    """Run all replicates and return a :class:`DecisionTable`.

    Results depend only on (cfg, replicate index), never on ``workers``.
    """
    reps = range(cfg.replicates if replicates is None else replicates)
    if workers <= 1:
        results = _chunk((cfg, list(reps)))
    else:
        size = math.ceil(len(reps) / (4 * workers))
        jobs = [(cfg, list(reps[i : i + size])) for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(workers) as pool:
            results = [r for part in pool.map(_chunk, jobs) for r in part]
    results.sort(key=lambda res: res.replicate)
    return DecisionTable.from_results(cfg, results)


def write_replicates_csv(table, path):
    """One row per (replicate, criterion) with penalties and logCL per candidate."""
    names = table.candidates
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scenario", "replicate", "criterion", "scheme", "decision"]
            + [f"penalty_{c}" for c in names]
            + [f"logCL_{c}" for c in names]
        )
        for res in table.results:
            if not res.ok:
                w.writerow([table.scenario, res.replicate, "FAILED", "", res.error] + [""] * (2 * len(names)))
                continue
            for crit, dec in res.decisions.items():
                s = table.criterion_scheme[crit]
                w.writerow(
                    [table.scenario, res.replicate, crit, s, names[dec]]
                    + [f"{v:.10g}" for v in res.penalty[s]]
                    + [f"{v:.10g}" for v in res.logcl[s]]
                )
