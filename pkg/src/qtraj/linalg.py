"""Small dense linear-algebra helpers shared across the package.

Everything here operates on plain complex ndarrays.  Conventions: vec() is
column-stacking (Fortran order), so vec(A X B) = kron(B.T, A) vec(X).
"""

from __future__ import annotations

import numpy as np


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def hermiticity_residual(a: np.ndarray) -> float:
    """Largest entrywise deviation from self-adjointness."""
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def operator_norm(a: np.ndarray) -> float:
    """Spectral (largest singular value) norm."""
    return float(np.linalg.norm(a, 2))


def trace_norm(a: np.ndarray, hermitian_tol: float = 1e-10) -> float:
    """Sum of singular values; for (near-)Hermitian input, sum |eigenvalues|.

    The Hermitian fast path keeps the common case (differences of density
    matrices) exact and cheap.
    """
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        return 0.0
    if hermiticity_residual(a) <= hermitian_tol * max(1.0, scale):
        eig = np.linalg.eigvalsh(hermitize(a))
        return float(np.sum(np.abs(eig)))
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def min_eig_hermitian(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitize(a))[0])


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return a.reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape(dim, dim, order="F")


def pairwise_sum(arr: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along ``axis`` with a fixed pairwise reduction tree.

    The tree depends only on element indices: neighbours (2i, 2i+1) combine,
    an odd trailing element is carried up unchanged, and the scheme recurses.
    Identical results regardless of how the inputs were produced or scheduled,
    with better rounding growth than left-to-right accumulation.
    """
    a = np.moveaxis(np.asarray(arr), axis, 0)
    n = a.shape[0]
    if n == 0:
        return np.zeros(a.shape[1:], dtype=a.dtype)
    while n > 1:
        half = n // 2
        paired = a[0 : 2 * half : 2] + a[1 : 2 * half : 2]
        if n % 2:
            a = np.concatenate([paired, a[n - 1 : n]], axis=0)
        else:
            a = paired
        n = a.shape[0]
    return a[0]
