"""Margin schemes: which sub-vectors of a cluster enter the composite likelihood."""

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

__all__ = ["MarginScheme"]


@dataclass(frozen=True)
class MarginScheme:
    margins: tuple  # tuple of sorted index tuples, 0-based
    weights: np.ndarray
    d: int
    name: str = "custom"
    _idx: np.ndarray = field(init=False, repr=False, compare=False)
    _sizes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        margins = tuple(tuple(int(j) for j in s) for s in self.margins)
        if not margins:
            raise ValueError("a scheme needs at least one margin")
        for s in margins:
            if len(s) == 0:
                raise ValueError("empty margin")
            if len(set(s)) != len(s):
                raise ValueError(f"duplicated index in margin {s}")
            if min(s) < 0 or max(s) >= self.d:
                raise ValueError(f"margin {s} out of range for d={self.d}")
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (len(margins),)).copy()
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be positive and finite")
        kmax = max(len(s) for s in margins)
        idx = np.zeros((len(margins), kmax), dtype=np.int64)
        for q, s in enumerate(margins):
            idx[q, : len(s)] = sorted(s)
        object.__setattr__(self, "margins", tuple(tuple(sorted(s)) for s in margins))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_idx", idx)
        object.__setattr__(self, "_sizes", np.array([len(s) for s in margins], dtype=np.int64))

    @classmethod
    def full(cls, d, weight=1.0):
        return cls((tuple(range(d)),), weight, d, "FULL")

    @classmethod
    def bcl(cls, d, weight=1.0):
        if d < 2:
            raise ValueError("pairwise likelihood needs d >= 2")
        return cls(tuple(combinations(range(d), 2)), weight, d, "BCL")

    @classmethod
    def tcl(cls, d, weight=1.0):
        if d < 3:
            raise ValueError("triplewise likelihood needs d >= 3")
        return cls(tuple(combinations(range(d), 3)), weight, d, "TCL")

    @classmethod
    def named(cls, name, d, weight=1.0):
        try:
            return {"FULL": cls.full, "BCL": cls.bcl, "TCL": cls.tcl}[name.upper()](d, weight)
        except KeyError:
            raise ValueError(f"unknown scheme {name!r}") from None

    def scaled(self, a):
        """Same margins with every weight multiplied by ``a``."""
        return MarginScheme(self.margins, self.weights * a, self.d, self.name)

    @property
    def n_margins(self):
        return len(self.margins)

    @property
    def idx(self):
        return self._idx

    @property
    def sizes(self):
        return self._sizes

    def normalizer(self):
        """Number of margins of the named schemes, i.e. C(d, 2) for BCL."""
        k = {"FULL": self.d, "BCL": 2, "TCL": 3}.get(self.name)
        return 1 if k is None else comb(self.d, k)

    def same_as(self, other):
        return (
            self.d == other.d
            and self.margins == other.margins
            and np.array_equal(self.weights, other.weights)
        )
