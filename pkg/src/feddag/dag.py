"""Continuous acyclicity function h(W) = tr(exp(W * W)) - d and its gradient."""
from __future__ import annotations

from collections import deque
from typing import NamedTuple

import numpy as np

from .errors import CyclicInput, NonFinite
from .types import BinaryGraph, WeightedAdjacency

# Taylor order for the scaled argument (norm <= 1/2): the truncation
# remainder is below 0.5**19 / 19! ~ 1.6e-23.
_TAYLOR_ORDER = 18
_SCALED_NORM = 0.5


def matrix_exp(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Taylor kernel.

    The argument is scaled by ``2**-s`` until its 1-norm is at most 1/2,
    the truncated series is evaluated with Horner's rule and the result is
    squared ``s`` times.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix_exp needs a square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite("matrix_exp input contains NaN or Inf")
    d = A.shape[0]
    norm = np.abs(A).sum(axis=0).max() if d else 0.0
    s = 0
    if norm > _SCALED_NORM:
        s = int(np.ceil(np.log2(norm / _SCALED_NORM)))
    B = A / (2.0**s) if s else A
    eye = np.eye(d)
    E = eye.copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        E = eye + (B @ E) / k
    for _ in range(s):
        E = E @ E
    if not np.all(np.isfinite(E)):
        raise NonFinite("matrix exponential overflowed")
    return E


class HEval(NamedTuple):
    value: float
    gradient: np.ndarray


def h_and_grad(W) -> HEval:
    """Return ``h(W)`` and ``(exp(W*W))^T * 2W`` with the diagonal zeroed."""
    W = W.values if isinstance(W, WeightedAdjacency) else np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise NonFinite("h_and_grad input contains NaN or Inf")
    E = matrix_exp(W * W)
    value = float(np.trace(E) - W.shape[0])
    grad = E.T * (2.0 * W)
    np.fill_diagonal(grad, 0.0)
    return HEval(value, grad)


def h_value(W) -> float:
    W = np.asarray(W, dtype=np.float64)
    return float(np.trace(matrix_exp(W * W)) - W.shape[0])


def is_acyclic_exact(G) -> bool:
    """Kahn's algorithm; True iff the graph has no directed cycle."""
    adj = G.adj if isinstance(G, BinaryGraph) else (np.asarray(G) != 0)
    adj = np.asarray(adj, dtype=bool)
    d = adj.shape[0]
    if np.any(np.diagonal(adj)):
        return False
    indeg = adj.sum(axis=0).astype(int)
    queue = deque(i for i in range(d) if indeg[i] == 0)
    seen = 0
    while queue:
        i = queue.popleft()
        seen += 1
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    return seen == d


def topological_order(G) -> list[int]:
    """A topological order of an acyclic support, ties broken by node index."""
    adj = np.asarray(G.adj if isinstance(G, BinaryGraph) else G) != 0
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = sorted(i for i in range(d) if indeg[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
        ready.sort()
    if len(order) != d:
        raise CyclicInput("graph contains a directed cycle")
    return order
