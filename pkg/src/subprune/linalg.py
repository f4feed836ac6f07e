"""Dense linear-algebra kernels shared by the selection machinery.

Matrices are plain 2-D float64 numpy arrays in row-major order.  The one
non-library routine here is a tolerance-aware modified Gram-Schmidt
orthonormalization: the greedy engine consumes columns one block at a time
and must detect (near-)linear dependence instead of dividing by tiny
residual norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class RankReport:
    numerical_rank: int
    singular_tolerance: float
    column_count: int


def as_matrix(data, *, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    return a @ b


def frob_norm_sq(a: np.ndarray) -> float:
    """Sum of squared entries."""
    return float(np.sum(a * a))


def orthonormalize_with_tol(
    cols: np.ndarray,
    tol: float = DEFAULT_TOL,
    *,
    pivot: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Modified Gram-Schmidt with one reorthogonalization pass.

    Returns ``(basis, coeffs, kept)`` where ``basis`` has orthonormal
    columns spanning the kept input columns and
    ``cols[:, kept] == basis @ coeffs`` up to tol-scaled error.  A column
    is dropped when its residual norm falls to ``tol`` times the column's
    own norm (zero columns are always dropped).  With ``pivot=True``
    columns are processed in order of largest current residual, which is
    what numerical rank detection needs.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    cols = np.asarray(cols, dtype=np.float64)
    n, m = cols.shape
    residual = cols.copy()
    own_norms = np.linalg.norm(cols, axis=0)
    basis_vecs: list[np.ndarray] = []
    kept: list[int] = []
    remaining = list(range(m))

    while remaining:
        if pivot:
            norms = [np.linalg.norm(residual[:, j]) for j in remaining]
            pick = int(np.argmax(norms))
        else:
            pick = 0
        j = remaining.pop(pick)
        r = residual[:, j]
        if np.linalg.norm(r) <= tol * max(own_norms[j], np.finfo(float).tiny):
            continue
        # second orthogonalization pass against the accepted basis
        for q in basis_vecs:
            r = r - q * (q @ r)
        nrm = np.linalg.norm(r)
        if nrm <= tol * max(own_norms[j], np.finfo(float).tiny):
            continue
        q = r / nrm
        basis_vecs.append(q)
        kept.append(j)
        for i in remaining:
            residual[:, i] -= q * (q @ residual[:, i])

    if basis_vecs:
        basis = np.column_stack(basis_vecs)
    else:
        basis = np.zeros((n, 0))
    coeffs = basis.T @ cols[:, kept] if kept else np.zeros((0, 0))
    return basis, coeffs, kept


def numerical_rank(a: np.ndarray, tol: float = DEFAULT_TOL) -> RankReport:
    """Rank as the number of columns surviving pivoted orthonormalization."""
    _, _, kept = orthonormalize_with_tol(a, tol, pivot=True)
    return RankReport(
        numerical_rank=len(kept),
        singular_tolerance=tol,
        column_count=a.shape[1],
    )
