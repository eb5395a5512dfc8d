"""Domain types, problem validation and the repo-wide random number contract."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, NonFinite, ShapeMismatch

__all__ = [
    "WeightedAdjacency",
    "BinaryGraph",
    "SiteDataset",
    "PenaltyConfig",
    "AdmmState",
    "ProblemDescriptor",
    "validate_problem",
    "seeded_rng",
    "split_rng",
]


def _frozen(a):
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.setflags(write=False)
    return a


def _check_square(values, name):
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeMismatch(f"{name} must be a square matrix, got shape {values.shape}")


@dataclass(frozen=True, eq=False)
class WeightedAdjacency:
    """d x d edge-weight matrix; entry (i, j) is the weight of edge i -> j.

    ``diagonal`` selects what happens to a nonzero diagonal: ``"zero"``
    clears it, ``"reject"`` raises ``ValueError``.
    """

    values: np.ndarray

    def __init__(self, values, diagonal: str = "zero"):
        values = np.array(values, dtype=np.float64, order="C", copy=True)
        _check_square(values, "WeightedAdjacency")
        if not np.all(np.isfinite(values)):
            raise NonFinite("WeightedAdjacency entries must be finite")
        diag = np.diagonal(values)
        if np.any(diag != 0.0):
            if diagonal == "reject":
                raise ValueError("self-loops are not allowed (nonzero diagonal)")
            if diagonal != "zero":
                raise ValueError(f"unknown diagonal mode {diagonal!r}")
            np.fill_diagonal(values, 0.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def support(self) -> "BinaryGraph":
        return BinaryGraph(self.values != 0)


@dataclass(frozen=True, eq=False)
class BinaryGraph:
    """d x d {0,1} adjacency with zero diagonal."""

    adj: np.ndarray

    def __init__(self, adj):
        adj = np.array(adj, copy=True)
        _check_square(adj, "BinaryGraph")
        adj = (adj != 0).astype(np.uint8)
        if np.any(np.diagonal(adj)):
            raise ValueError("BinaryGraph must have a zero diagonal")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @property
    def dim(self) -> int:
        return self.adj.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adj))]

    def __eq__(self, other):
        if not isinstance(other, BinaryGraph):
            return NotImplemented
        return self.adj.shape == other.adj.shape and bool(np.array_equal(self.adj, other.adj))

    def __hash__(self):
        return hash((self.adj.shape, self.adj.tobytes()))

    def __array__(self, dtype=None, copy=None):
        return self.adj if dtype is None else self.adj.astype(dtype)


@dataclass(frozen=True, eq=False)
class SiteDataset:
    """One site's observations together with its Gram matrix ``X^T X / n``."""

    site_id: str
    data: np.ndarray
    gram: np.ndarray = field(repr=False)

    def __init__(self, site_id: str, data):
        data = np.array(data, dtype=np.float64, order="C", copy=True)
        if data.ndim != 2:
            raise ShapeMismatch(f"site {site_id!r}: data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFinite(f"site {site_id!r}: data contains NaN or Inf")
        n = data.shape[0]
        if n > 0:
            gram = data.T @ data / n
            gram = (gram + gram.T) / 2.0
        else:
            gram = np.zeros((data.shape[1], data.shape[1]))
        object.__setattr__(self, "site_id", str(site_id))
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "gram", _frozen(gram))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.01
    lambda2: float = 0.05
    admm_tol: float = 1e-4
    admm_max_iter: int = 200
    dipa_tol: float = 1e-6
    dipa_max_iter: int = 500
    h_tol: float = 1e-8
    edge_threshold: float = 0.3

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        for name in ("admm_tol", "dipa_tol", "h_tol", "edge_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.admm_max_iter < 1 or self.dipa_max_iter < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class AdmmState:
    """Center-side ADMM variables; mutated in place by the orchestrator."""

    Z: list
    alpha: np.ndarray
    beta: list
    rho1: float
    rho2: float
    gamma1: float
    gamma2: float
    iteration: int = 0
    step: np.ndarray | None = None

    @classmethod
    def initial(cls, K, d, rho1, rho2, gamma1, gamma2):
        return cls(
            Z=[np.zeros((d, d)) for _ in range(K)],
            alpha=np.zeros(K),
            beta=[np.zeros((d, d)) for _ in range(K)],
            rho1=float(rho1),
            rho2=float(rho2),
            gamma1=float(gamma1),
            gamma2=float(gamma2),
        )

    @property
    def K(self) -> int:
        return len(self.Z)


class ProblemDescriptor(NamedTuple):
    K: int
    d: int
    n: list


def validate_problem(datasets: Sequence[SiteDataset]) -> ProblemDescriptor:
    if len(datasets) == 0:
        raise ValueError("at least one site dataset is required")
    d = datasets[0].dim
    for ds in datasets:
        if ds.dim != d:
            raise DimensionMismatch(
                f"site {ds.site_id!r} has {ds.dim} variables, expected {d}", site_id=ds.site_id
            )
        if ds.n == 0:
            raise EmptyDataset(f"site {ds.site_id!r} has no samples", site_id=ds.site_id)
    ids = [ds.site_id for ds in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError(f"site ids must be unique, got {ids}")
    return ProblemDescriptor(K=len(datasets), d=d, n=[ds.n for ds in datasets])


def seeded_rng(seed) -> np.random.Generator:
    """Deterministic stream backed by the counter-based Philox bit generator.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def split_rng(seed, n: int) -> list[np.random.Generator]:
    """Independent child streams for concurrent tasks."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed) & (2**64 - 1))
    return [seeded_rng(child) for child in ss.spawn(n)]
