"""Proximal operators for the sparse + group-fused penalty on stacked site matrices.

A stack is a ``K x d**2`` array whose row ``k`` is the row-major flattening of
site ``k``'s matrix.
"""
from __future__ import annotations

import math
import warnings
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeMismatch


class NonConvergenceWarning(RuntimeWarning):
    pass


def transform(matrices: Sequence[np.ndarray]) -> np.ndarray:
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not mats:
        raise ShapeMismatch("need at least one matrix")
    shape = mats[0].shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ShapeMismatch(f"matrices must be square, got {shape}")
    for m in mats:
        if m.shape != shape:
            raise ShapeMismatch(f"matrix shapes disagree: {m.shape} vs {shape}")
    return np.stack([m.reshape(-1) for m in mats])


def inverse_transform(stack, d: int) -> list[np.ndarray]:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 2 or stack.shape[1] != d * d:
        raise ShapeMismatch(f"stack of shape {stack.shape} does not hold {d}x{d} matrices")
    return [row.reshape(d, d).copy() for row in stack]


def prox_l1(U, lambda1) -> np.ndarray:
    """Soft thresholding; ``lambda1`` may be a scalar or broadcast against ``U``."""
    U = np.asarray(U, dtype=np.float64)
    if np.any(np.asarray(lambda1) < 0):
        raise ValueError("lambda1 must be non-negative")
    if np.all(np.asarray(lambda1) == 0):
        return U.copy()
    return np.sign(U) * np.maximum(np.abs(U) - lambda1, 0.0)


def difference_matrix(K: int) -> np.ndarray:
    """Backward differences, row i = e_{i+1} - e_i."""
    D = np.zeros((K - 1, K))
    idx = np.arange(K - 1)
    D[idx, idx] = -1.0
    D[idx, idx + 1] = 1.0
    return D


def fused_objective(Z, U, lambda1: float, lambda2: float, weights=None) -> float:
    """0.5 sum_k w_k ||Z_k - U_k||^2 + lambda1 ||Z||_1 + lambda2 sum_k ||Z_{k+1} - Z_k||_2."""
    Z = np.asarray(Z, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    w = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    val = 0.5 * float(w @ np.sum((Z - U) ** 2, axis=1)) + lambda1 * np.abs(Z).sum()
    if Z.shape[0] > 1:
        val += lambda2 * np.linalg.norm(np.diff(Z, axis=0), axis=1).sum()
    return float(val)


def _centered_design(K):
    # Gram of the column-centred step design, G_ij = min(i,j) (K - max(i,j)) / K
    # (1-based indices), and the centred design itself.
    R = np.tril(np.ones((K, K - 1)), -1)
    Rc = R - R.mean(axis=0)
    i = np.arange(1, K)
    G = np.minimum.outer(i, i) * (K - np.maximum.outer(i, i)) / K
    return R, Rc, G


def _check_weights(weights, K):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (K,) or not np.all(np.isfinite(w)) or not np.all(w > 0):
        raise ValueError(f"weights must be {K} positive finite numbers")
    return None if np.all(w == w[0]) and w[0] == 1.0 else w


def _group_lasso_bcd(C, G, lam, A, tol, max_sweeps):
    """Block-coordinate descent on 0.5||Uc - Rc A||^2 + lam ||A||_{2,1}.

    ``C = Rc^T Uc`` and ``G = Rc^T Rc``; ``A`` is updated in place.
    """
    m = G.shape[0]
    # running value of G @ A, kept in sync with every block update
    GA = G @ A
    diag = np.diag(G).copy()
    cols = [G[:, i, None] for i in range(m)]
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for i in range(m):
            S = C[i] - GA[i] + diag[i] * A[i]
            nrm = math.sqrt(S @ S)
            if nrm <= lam:
                new = 0.0 * S
            else:
                new = ((1.0 - lam / nrm) / diag[i]) * S
            delta = new - A[i]
            dd = float(delta @ delta)
            if dd > 0.0:
                GA += cols[i] * delta
                A[i] = new
                change += dd
        scale = max(1.0, math.sqrt(float(np.vdot(A, A))))
        if math.sqrt(change) <= tol * scale:
            return A, sweep, True
    return A, max_sweeps, False


def prox_group_fused(U, lambda2: float, tol: float = 1e-8, max_sweeps: int = 10000,
                     A0=None, full_output: bool = False, weights=None):
    """argmin_Z 0.5 ||Z - U||_F^2 + lambda2 sum_k ||Z_{k+1,.} - Z_{k,.}||_2.

    Solved through the difference parametrisation Z = 1 a + R A with
    block-coordinate descent over the rows of A. With ``full_output`` the
    return value is ``(Z, A, sweeps, converged)``; ``A`` can be passed back
    as ``A0`` to warm-start a nearby problem. Positive row ``weights`` w
    replace the quadratic term by 0.5 sum_k w_k ||Z_k - U_k||^2.
    """
    U = np.asarray(U, dtype=np.float64)
    if lambda2 < 0:
        raise ValueError("lambda2 must be non-negative")
    K = U.shape[0]
    if K == 1 or lambda2 == 0:
        Z = U.copy()
        if full_output:
            return Z, np.diff(U, axis=0), 0, True
        return Z
    w = _check_weights(weights, K)
    if w is None:
        R, Rc, G = _centered_design(K)
        Uc = U - U.mean(axis=0)
        C = Rc.T @ Uc
    else:
        R = np.tril(np.ones((K, K - 1)), -1)
        p = w / w.sum()
        Rc = R - p @ R
        G = Rc.T @ (w[:, None] * Rc)
        C = Rc.T @ (w[:, None] * (U - p @ U))
    A = np.zeros((K - 1, U.shape[1])) if A0 is None else np.array(A0, dtype=np.float64, copy=True)
    A, sweeps, converged = _group_lasso_bcd(C, G, lambda2, A, tol, max_sweeps)
    if not converged:
        warnings.warn(
            f"group-fused BCD stopped after {sweeps} sweeps without reaching tol={tol:g}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    RA = R @ A
    a = (U - RA).mean(axis=0) if w is None else p @ (U - RA)
    Z = a + RA
    if full_output:
        return Z, A, sweeps, converged
    return Z


class DipaResult(NamedTuple):
    Z: np.ndarray
    iterations: int
    converged: bool
    warm: np.ndarray | None = None


def dipa(U_bar, lambda1: float, lambda2: float, tol: float = 1e-6, max_iter: int = 500,
         warm=None, weights=None) -> DipaResult:
    """Dykstra-like alternation computing the prox of the l1 + group-fused penalty.

    ``warm`` seeds the inner group-lasso coefficients (the ``warm`` field of
    a previous result on a nearby input); it changes the work done, not the
    answer. ``weights`` computes the prox in the metric sum_k w_k ||.||^2
    over rows, in which both partial proxes stay closed form.
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError("dipa needs tol > 0 and max_iter >= 1")
    U_bar = np.asarray(U_bar, dtype=np.float64)
    A = U_bar.copy()
    M = np.zeros_like(A)
    Q = np.zeros_like(A)
    if warm is not None and np.shape(warm) != (A.shape[0] - 1, A.shape[1]):
        warm = None
    w = _check_weights(weights, A.shape[0])
    thresh = lambda1 if w is None else (lambda1 / w)[:, None]
    inner_tol = tol / 10.0
    for n in range(1, max_iter + 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            V, warm, _, _ = prox_group_fused(A + M, lambda2, tol=inner_tol, A0=warm,
                                             full_output=True, weights=w)
        M = A + M - V
        A_next = prox_l1(V + Q, thresh)
        Q = V + Q - A_next
        step = np.sqrt(np.sum((A_next - A) ** 2))
        A = A_next
        if step < tol:
            return DipaResult(A, n, True, warm)
    warnings.warn(f"DIPA stopped after {max_iter} iterations", NonConvergenceWarning, stacklevel=2)
    return DipaResult(A, max_iter, False, warm)
