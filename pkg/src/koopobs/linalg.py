"""Numerical-rank and least-squares helpers shared by the analysis modules."""
from __future__ import annotations

import numpy as np

EXACT_RANK_TOL = 1e-12
GRAMIAN_RANK_TOL = 1e-6


def numerical_rank(M: np.ndarray, rel_tol: float = EXACT_RANK_TOL, scale: float | None = None,
                   dims_factor: bool = True) -> int:
    """Rank of ``M`` by SVD with cutoff ``scale * max(dims) * rel_tol``.

    ``scale`` defaults to the largest singular value of ``M``. Pass an
    external scale when ``M`` is a block of a larger matrix, otherwise an
    all-noise block would count as full rank.
    """
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    ref = s[0] if scale is None else max(scale, 0.0)
    if ref == 0.0:
        return 0
    cutoff = ref * rel_tol * (max(M.shape) if dims_factor else 1)
    return int(np.sum(s > cutoff))


def gram_schmidt(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Orthonormalise the columns of ``vectors`` (modified Gram-Schmidt).

    Columns that are numerically dependent on earlier ones are dropped.
    """
    V = np.array(vectors, dtype=complex, copy=True)
    basis: list[np.ndarray] = []
    for j in range(V.shape[1]):
        v = V[:, j].copy()
        norm0 = np.linalg.norm(v)
        for b in basis:
            v -= np.vdot(b, v) * b
        norm = np.linalg.norm(v)
        if norm > tol * max(norm0, 1.0):
            basis.append(v / norm)
    if not basis:
        return np.zeros((V.shape[0], 0), dtype=complex)
    return np.stack(basis, axis=1)


def lstsq_fit(A: np.ndarray, b: np.ndarray, rel_tol: float = EXACT_RANK_TOL):
    """Least-squares ``A c ~ b`` with the SVD cutoff used across the package.

    Returns ``(c, residual)`` where ``residual`` is the max-abs misfit.
    """
    rcond = rel_tol * max(A.shape)
    c, *_ = np.linalg.lstsq(A, b, rcond=rcond)
    resid = np.max(np.abs(A @ c - b)) if b.size else 0.0
    return c, float(resid)
