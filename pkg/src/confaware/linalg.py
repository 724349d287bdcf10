"""Small dense linear algebra kernels.

Matrices and vectors are plain ``float64`` numpy arrays (row-major, 2-D and
1-D respectively). The routines here are deliberately minimal: they cover
exactly what the Gaussian prototypes need and validate their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix

PIVOT_FLOOR = 1e-12
SINGULAR_FLOOR = 1e-14
SYMMETRY_RTOL = 1e-12


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def cholesky(a) -> np.ndarray:
    """Cholesky factor ``L`` (lower triangular) with ``a = L @ L.T``.

    Raises:
        NotPositiveDefinite: if a pivot falls to ``PIVOT_FLOOR`` or below.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")

    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > PIVOT_FLOOR:
            raise NotPositiveDefinite(f"pivot {j} is {pivot:.3e}")
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_lower(l, b) -> np.ndarray:
    """Forward substitution: solve ``l @ y = b`` for lower-triangular ``l``."""
    l = as_matrix(l)
    b = as_vector(b)
    n = l.shape[0]
    if l.shape != (n, n) or b.shape[0] != n:
        raise DimensionMismatch(f"cannot solve {l.shape} system with rhs of dim {b.shape[0]}")
    diag = np.abs(np.diag(l))
    if np.any(diag <= SINGULAR_FLOOR):
        raise SingularMatrix(f"diagonal entry {int(np.argmin(diag))} is ~0")
    y = np.zeros(n)
    for i in range(n):
        y[i] = (b[i] - l[i, :i] @ y[:i]) / l[i, i]
    return y


def matvec(a, x) -> np.ndarray:
    a = as_matrix(a)
    x = as_vector(x)
    if a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"matrix {a.shape} times vector of dim {x.shape[0]}")
    return a @ x


def rows_times_transpose(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w.T`` for a batch of rows, bit-identical for every batch size.

    BLAS picks different kernels (and summation orders) for one row versus
    many; einsum's plain loops do not, so a sample scores the same alone or
    inside a batch.
    """
    return np.einsum("ij,kj->ik", x, w)


def outer(x, y) -> np.ndarray:
    return np.outer(as_vector(x), as_vector(y))


def inverse_spd(a) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor."""
    L = cholesky(a)
    n = L.shape[0]
    # columns of L^{-1}, then a^{-1} = L^{-T} L^{-1}
    linv = np.column_stack([solve_lower(L, e) for e in np.eye(n)]) if n else np.zeros((0, 0))
    inv = linv.T @ linv
    return 0.5 * (inv + inv.T)
