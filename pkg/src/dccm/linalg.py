"""Small dense symmetric linear algebra, batched over leading axes.

The matrices here are tiny (n <= 4 for the plants of interest) but there are
many of them, so every routine loops over matrix indices and vectorizes over
the batch.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def sym(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _check_square(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise ContractError(f"expected square matrices, got shape {S.shape}")
    return S


def pivoted_det(S: np.ndarray) -> np.ndarray:
    """Determinant by Gaussian elimination with partial pivoting (batched)."""
    S = _check_square(S)
    n = S.shape[-1]
    if n == 0:
        return np.ones(S.shape[:-2])
    U = S.reshape((-1, n, n)).copy()
    det = np.ones(U.shape[0])
    rows = np.arange(U.shape[0])
    for j in range(n):
        p = j + np.argmax(np.abs(U[:, j:, j]), axis=1)
        swap = p != j
        det[swap] *= -1.0
        Uj, Up = U[rows, j].copy(), U[rows, p].copy()
        U[rows, j], U[rows, p] = Up, Uj
        piv = U[:, j, j]
        det *= piv
        safe = np.where(piv == 0.0, 1.0, piv)
        if j + 1 < n:
            factors = U[:, j + 1:, j] / safe[:, None]
            U[:, j + 1:, :] -= factors[:, :, None] * U[:, None, j, :]
    return det.reshape(S.shape[:-2])


def leading_minors(S: np.ndarray) -> np.ndarray:
    """``minors[..., i] = det(S[..., :i+1, :i+1])`` for ``i < n``."""
    S = _check_square(S)
    n = S.shape[-1]
    return np.stack([pivoted_det(S[..., :i + 1, :i + 1]) for i in range(n)], axis=-1)


def cofactor_matrix(S: np.ndarray) -> np.ndarray:
    """Cofactors ``C`` with ``d det(S) / dS = C`` (batched, no inversion)."""
    S = _check_square(S)
    n = S.shape[-1]
    if n == 1:
        return np.ones_like(S)
    C = np.empty_like(S)
    idx = np.arange(n)
    for a in range(n):
        ra = idx[idx != a]
        for b in range(n):
            cb = idx[idx != b]
            sub = S[..., ra[:, None], cb[None, :]]
            C[..., a, b] = (-1.0) ** (a + b) * pivoted_det(sub)
    return C


def leading_minor_grads(S: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_i weights[..., i] * minor_i(S)`` with respect to ``S``."""
    S = _check_square(S)
    n = S.shape[-1]
    G = np.zeros_like(S)
    for i in range(n):
        w = weights[..., i]
        if not np.any(w):
            continue
        G[..., :i + 1, :i + 1] += w[..., None, None] * cofactor_matrix(S[..., :i + 1, :i + 1])
    return G


def cholesky_upper(M: np.ndarray, tol: float = 0.0):
    """Factor ``M = Theta^T Theta`` with ``Theta`` upper triangular.

    Returns ``(Theta, ok)``; ``ok`` is False where a pivot is ``<= tol``,
    which is the positive-definiteness test. Failed entries hold garbage.
    """
    M = _check_square(M)
    n = M.shape[-1]
    L = np.zeros_like(M)
    ok = np.ones(M.shape[:-2], dtype=bool)
    for j in range(n):
        d = M[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        ok &= d > tol
        ljj = np.sqrt(np.where(d > tol, d, 1.0))
        L[..., j, j] = ljj
        for i in range(j + 1, n):
            L[..., i, j] = (M[..., i, j] - np.sum(L[..., i, :j] * L[..., j, :j], axis=-1)) / ljj
    return np.swapaxes(L, -1, -2), ok


def solve_upper(U: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``U X = B`` for upper-triangular ``U`` by back substitution."""
    n = U.shape[-1]
    X = np.zeros(np.broadcast_shapes(U.shape[:-2], B.shape[:-2]) + B.shape[-2:])
    for i in range(n - 1, -1, -1):
        acc = B[..., i, :] - np.einsum("...k,...kj->...j", U[..., i, i + 1:], X[..., i + 1:, :])
        X[..., i, :] = acc / U[..., i, i, None]
    return X


def jacobi_eigvalsh(S: np.ndarray, tol: float = 1e-14, max_sweeps: int = 50) -> np.ndarray:
    """Eigenvalues of symmetric matrices by the cyclic Jacobi rotation method.

    Sorted ascending. Intended for small ``n``; each sweep visits every
    off-diagonal pair once and zeroes it with a plane rotation.
    """
    A = sym(_check_square(S)).reshape((-1,) + np.shape(S)[-2:]).copy()
    n = A.shape[-1]
    scale = np.maximum(np.abs(A).max(axis=(1, 2)), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2, axis=(1, 2)))
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                app, aqq = A[:, p, p], A[:, q, q]
                theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                Ap, Aq = A[:, :, p].copy(), A[:, :, q].copy()
                A[:, :, p] = c[:, None] * Ap - s[:, None] * Aq
                A[:, :, q] = s[:, None] * Ap + c[:, None] * Aq
                Ap, Aq = A[:, p, :].copy(), A[:, q, :].copy()
                A[:, p, :] = c[:, None] * Ap - s[:, None] * Aq
                A[:, q, :] = s[:, None] * Ap + c[:, None] * Aq
    w = np.sort(np.diagonal(A, axis1=1, axis2=2), axis=1)
    return w.reshape(np.shape(S)[:-1])


def eigvalsh(S: np.ndarray) -> np.ndarray:
    """Symmetric eigenvalues: Jacobi rotations for n <= 4, LAPACK otherwise."""
    S = _check_square(S)
    if S.shape[-1] <= 4:
        return jacobi_eigvalsh(S)
    return np.linalg.eigvalsh(sym(S))
