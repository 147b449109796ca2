"""Small dense linear-algebra helpers built on numpy's SVD."""

from __future__ import annotations

import numpy as np

RANK_RTOL = 1e-10


def _svd(A: np.ndarray):
    return np.linalg.svd(A, full_matrices=True)


def rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def canonical_signs(B: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry of largest magnitude is positive."""
    B = np.array(B, dtype=float, copy=True)
    for j in range(B.shape[1]):
        col = B[:, j]
        i = int(np.argmax(np.abs(col) > np.abs(col).max() * (1 - 1e-9)))
        if col[i] < 0:
            B[:, j] = -col
    return B


def orth(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of the column space of ``A``."""
    m = A.shape[0]
    if A.size == 0:
        return np.zeros((m, 0))
    U, s, _ = _svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m, 0))
    r = int(np.sum(s > rtol * s[0]))
    return canonical_signs(U[:, :r])


def null(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of the kernel of ``A``."""
    k = A.shape[1]
    if A.shape[0] == 0 or not np.any(A):
        return np.eye(k)
    _, s, Vt = _svd(A)
    r = int(np.sum(s > rtol * s[0]))
    return canonical_signs(Vt[r:].T)


def intersect(U: np.ndarray, V: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of span(U) ∩ span(V)."""
    if U.shape[1] == 0 or V.shape[1] == 0:
        return np.zeros((U.shape[0], 0))
    coeffs = null(np.hstack([U, -V]), rtol)
    return orth(U @ coeffs[: U.shape[1]], rtol)


def same_span(U: np.ndarray, V: np.ndarray, rtol: float = RANK_RTOL) -> bool:
    ru, rv = rank(U, rtol), rank(V, rtol)
    return ru == rv == rank(np.hstack([U, V]), rtol)
