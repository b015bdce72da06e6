"""vec/vech calculus: Kronecker products and the duplication, elimination and
commutation matrices.

Conventions
-----------
``vec`` stacks columns.  ``vech`` stacks the lower triangle column by column,
so for r = 3 the order is (1,1), (2,1), (3,1), (2,2), (3,2), (3,3).  The
elimination matrix is the lower-triangle one, which makes
``elimination(r).T @ vech(C) == vec(C)`` for lower-triangular ``C``.

All operators are dense; every use in this package has r <= 13.
"""

import numpy as np

__all__ = [
    "vec",
    "unvec",
    "vech",
    "unvech",
    "vech_indices",
    "duplication",
    "elimination",
    "commutation",
    "build_operator",
    "kron",
]


def _as_matrix(m):
    a = np.asarray(m, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {a.shape}")
    return a


def vec(m):
    """Column-stacked vector of ``m``."""
    return _as_matrix(m).reshape(-1, order="F")


def unvec(v, rows, cols=None):
    cols = rows if cols is None else cols
    return np.asarray(v, dtype=float).reshape((rows, cols), order="F")


def vech_indices(r):
    """Row and column indices of the lower triangle in vech order."""
    rows, cols = [], []
    for j in range(r):
        for i in range(j, r):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp)


def vech(m):
    """Lower triangle of square ``m`` stacked column by column."""
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"vech needs a square matrix, got shape {a.shape}")
    i, j = vech_indices(a.shape[0])
    return a[i, j]


def unvech(v, symmetric=True):
    """Inverse of :func:`vech`.

    With ``symmetric=False`` the result is lower triangular (the form used
    for Cholesky factors).
    """
    v = np.asarray(v, dtype=float)
    r = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if r * (r + 1) // 2 != v.size:
        raise ValueError(f"length {v.size} is not triangular")
    out = np.zeros((r, r))
    i, j = vech_indices(r)
    out[i, j] = v
    if symmetric:
        out[j, i] = v
    return out


def duplication(r):
    """D_r with ``D_r @ vech(A) == vec(A)`` for symmetric ``A``."""
    out = np.zeros((r * r, r * (r + 1) // 2))
    for k, (i, j) in enumerate(zip(*vech_indices(r))):
        out[i + j * r, k] = 1.0
        out[j + i * r, k] = 1.0
    return out


def elimination(r):
    """Lower-triangle E_r with ``E_r @ vec(A) == vech(A)``."""
    out = np.zeros((r * (r + 1) // 2, r * r))
    for k, (i, j) in enumerate(zip(*vech_indices(r))):
        out[k, i + j * r] = 1.0
    return out


def commutation(r):
    """T_rr with ``T_rr @ vec(A) == vec(A.T)``."""
    out = np.zeros((r * r, r * r))
    for i in range(r):
        for j in range(r):
            out[j + i * r, i + j * r] = 1.0
    return out


_BUILDERS = {
    "duplication": duplication,
    "D": duplication,
    "elimination": elimination,
    "E": elimination,
    "commutation": commutation,
    "T": commutation,
    "identity": lambda r: np.eye(r),
    "I": lambda r: np.eye(r),
}


def build_operator(kind, r):
    if r < 1:
        raise ValueError("order must be >= 1")
    try:
        return _BUILDERS[kind](r)
    except KeyError:
        raise ValueError(f"unknown operator kind {kind!r}") from None


def kron(a, b):
    return np.kron(_as_matrix(a), _as_matrix(b))
