"""Closed-form per-site update of the local adjacency matrix."""
from __future__ import annotations

import threading
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ShapeMismatch, SingularSystem


class LocalUpdateInput(NamedTuple):
    gram: np.ndarray
    Z_prev: np.ndarray
    beta: np.ndarray
    rho2: float


def _factor(gram, rho2):
    if not rho2 > 0:
        raise SingularSystem(f"rho2 must be positive, got {rho2}")
    M = gram + rho2 * np.eye(gram.shape[0])
    try:
        return cho_factor(M, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise SingularSystem(f"Cholesky of U + rho2*I failed: {exc}") from exc


def local_solve(gram, Z, beta, rho2, factor=None) -> np.ndarray:
    """Stationary point of the site subproblem, diagonal left untouched.

    Solves ``(U + rho2 I) W = rho2 Z - beta + U``.
    """
    gram = np.asarray(gram, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if not (gram.shape == Z.shape == beta.shape) or gram.shape[0] != gram.shape[1]:
        raise ShapeMismatch(f"shapes disagree: U {gram.shape}, Z {Z.shape}, beta {beta.shape}")
    if factor is None:
        factor = _factor(gram, rho2)
    rhs = rho2 * Z - beta + gram
    return cho_solve(factor, rhs, check_finite=False)


def local_update(inp: LocalUpdateInput, factor=None, diagonal: str = "zero") -> np.ndarray:
    """Closed-form site update.

    ``diagonal="zero"`` clears the diagonal of the unconstrained solution;
    ``"exact"`` returns the minimiser under the constraint diag(W) = 0,
    obtained from the unconstrained one by a per-column correction along
    the columns of ``(U + rho2 I)^{-1}``.
    """
    if factor is None:
        factor = _factor(np.asarray(inp.gram, dtype=np.float64), inp.rho2)
    W = local_solve(inp.gram, inp.Z_prev, inp.beta, inp.rho2, factor=factor)
    if diagonal == "exact":
        Minv = cho_solve(factor, np.eye(W.shape[0]), check_finite=False)
        W -= Minv * (np.diagonal(W) / np.diagonal(Minv))
    elif diagonal != "zero":
        raise ValueError(f"unknown diagonal mode {diagonal!r}")
    np.fill_diagonal(W, 0.0)
    return W


def local_objective(W, gram, Z, beta, rho2) -> float:
    """Site subproblem objective with the data term written through U."""
    UW = gram @ W
    loss = 0.5 * np.trace(gram - 2.0 * W.T @ gram + W.T @ UW)
    return float(loss + np.sum(beta * (W - Z)) + 0.5 * rho2 * np.sum((W - Z) ** 2))


def local_gradient(W, gram, Z, beta, rho2) -> np.ndarray:
    return (gram + rho2 * np.eye(gram.shape[0])) @ W - gram + beta - rho2 * Z


class LocalSolver:
    """Site-side solver holding the Gram matrix and a Cholesky cache keyed by rho2.

    Only the factor for the most recent rho2 is retained; rho2 changes at
    most once per round.
    """

    def __init__(self, gram):
        self.gram = np.asarray(gram, dtype=np.float64)
        self._lock = threading.Lock()
        self._rho = None
        self._factor = None
        self.factorizations = 0

    def factor(self, rho2):
        with self._lock:
            if self._rho != rho2:
                self._factor = _factor(self.gram, rho2)
                self._rho = rho2
                self.factorizations += 1
            return self._factor

    def update(self, Z, beta, rho2, diagonal: str = "zero") -> np.ndarray:
        return local_update(LocalUpdateInput(self.gram, Z, beta, rho2), factor=self.factor(rho2),
                            diagonal=diagonal)
