"""Decision tables, agreement statistics and penalty summaries."""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["DecisionTable", "agreement_stats", "penalty_quartiles"]


def penalty_quartiles(values):
    """(Q1, Q3) with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 4:
        raise ValueError("need at least 4 finite values for quartiles")
    q1, q3 = np.percentile(v, [25, 75])
    return float(q1), float(q3)


def agreement_stats(table):
    """Agreement and signed asymmetry of a cross-tabulation.

    Rows hold the composite criterion's choice, columns the classical one,
    candidates ordered from smallest to biggest.  Asymmetry is positive when
    the composite criterion picks the bigger model more often.
    """
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("table must be square")
    total = t.sum()
    if total <= 0:
        raise ValueError("empty table")
    lower = np.tril(t, -1).sum()
    upper = np.triu(t, 1).sum()
    return {"agreement": float(np.trace(t) / total), "asymmetry": float((lower - upper) / total)}


@dataclass
class DecisionTable:
    scenario: str
    candidates: list
    criteria: list
    criterion_scheme: dict
    results: list
    config: object = None

    @classmethod
    def from_results(cls, cfg, results):
        cs = {c: ("FULL" if c in ("AIC", "BIC") else next(s for s in cfg.schemes if s != "FULL")) for c in cfg.criteria}
        return cls(cfg.id, [c.name for c in cfg.candidates], list(cfg.criteria), cs, list(results), cfg)

    @property
    def ok(self):
        return [r for r in self.results if r.ok]

    @property
    def failures(self):
        return sum(not r.ok for r in self.results)

    def decisions(self, criterion):
        return np.array([r.decisions[criterion] for r in self.ok], dtype=int)

    def counts(self, criterion):
        return np.bincount(self.decisions(criterion), minlength=len(self.candidates))

    def frequencies(self, criterion):
        c = self.counts(criterion)
        return c / max(1, c.sum())

    def crosstab(self, rows, cols):
        """Counts with ``rows`` criterion choice down, ``cols`` criterion across."""
        k = len(self.candidates)
        out = np.zeros((k, k), dtype=int)
        np.add.at(out, (self.decisions(rows), self.decisions(cols)), 1)
        return out

    def discordant(self, rows, cols):
        """(rows picks bigger, cols picks bigger) counts."""
        t = self.crosstab(rows, cols)
        return int(np.tril(t, -1).sum()), int(np.triu(t, 1).sum())

    def penalties(self, scheme, candidate):
        k = self.candidates.index(candidate) if isinstance(candidate, str) else candidate
        return np.array([r.penalty[scheme][k] for r in self.ok])

    def penalty_quartiles(self, scheme, candidate):
        return penalty_quartiles(self.penalties(scheme, candidate))

    def summary_rows(self):
        rows = []
        for crit in self.criteria:
            for k, name in enumerate(self.candidates):
                rows.append(
                    {
                        "scenario": self.scenario,
                        "criterion": crit,
                        "candidate": name,
                        "count": int(self.counts(crit)[k]),
                        "replicates": len(self.ok),
                        "failures": self.failures,
                    }
                )
        return rows

    def write_summary_csv(self, path):
        rows = self.summary_rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def to_dict(self):
        out = {
            "scenario": self.scenario,
            "candidates": self.candidates,
            "replicates": len(self.results),
            "failures": self.failures,
            "counts": {c: self.counts(c).tolist() for c in self.criteria},
        }
        pen = {}
        for s in sorted({s for r in self.ok for s in r.penalty}):
            if s == "FULL" and self.config is not None and self.config.classical_full:
                continue
            if len(self.ok) >= 4:
                pen[s] = {name: self.penalty_quartiles(s, k) for k, name in enumerate(self.candidates)}
        out["penalty_quartiles"] = pen
        return out
