"""Synthetic multi-site benchmarks: ER ground truth, perturbed site graphs, linear SEM data."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .dag import is_acyclic_exact, topological_order
from .errors import CyclicInput
from .types import BinaryGraph, SiteDataset, WeightedAdjacency, seeded_rng


@dataclass(frozen=True)
class SynthConfig:
    d: int = 10
    K: int = 10
    p_l: float = 0.1
    n_total: int | None = None
    n_per_site: int | None = None
    er_edge_prob: float | None = None
    er_expected_edges: float | None = None
    weight_low: float = 0.5
    weight_high: float = 2.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_l <= 1.0:
            raise ValueError("p_l must lie in [0, 1]")
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be positive")
        if self.n_total is not None and self.n_per_site is not None:
            raise ValueError("give n_total or n_per_site, not both")
        if not 0 < self.weight_low <= self.weight_high:
            raise ValueError("need 0 < weight_low <= weight_high")

    @property
    def edge_prob(self) -> float:
        if self.er_edge_prob is not None:
            return self.er_edge_prob
        pairs = self.d * (self.d - 1) / 2
        if pairs == 0:
            return 0.0
        expected = self.er_expected_edges if self.er_expected_edges is not None else 1.0 * self.d
        return min(1.0, expected / pairs)

    def site_sizes(self) -> list[int]:
        if self.n_per_site is not None:
            return [self.n_per_site] * self.K
        n_total = self.n_total if self.n_total is not None else 3 * self.d
        base, extra = divmod(n_total, self.K)
        return [base + (1 if k < extra else 0) for k in range(self.K)]


@dataclass(frozen=True, eq=False)
class SynthProblem:
    G_truth: BinaryGraph
    graphs: list
    weights: list
    datasets: list
    config: SynthConfig
    realized_perturbations: list = field(default_factory=list)
    reverted_perturbations: list = field(default_factory=list)

    def export(self, directory):
        """Write ``site_{k}.csv``, ``truth_{k}.csv`` and ``meta.json``."""
        os.makedirs(directory, exist_ok=True)
        d = self.G_truth.dim
        header = [f"X{i + 1}" for i in range(d)]
        for k, (ds, W) in enumerate(zip(self.datasets, self.weights)):
            with open(os.path.join(directory, f"site_{k}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows([repr(float(v)) for v in row] for row in ds.data)
            with open(os.path.join(directory, f"truth_{k}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows([repr(float(v)) for v in row] for row in W.values)
        meta = {
            "config": asdict(self.config),
            "G_truth": self.G_truth.adj.astype(int).tolist(),
            "realized_perturbations": self.realized_perturbations,
            "reverted_perturbations": self.reverted_perturbations,
            "cycle_repair": "reverse-selection-order undo of additions/reversals on cycles",
        }
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2)


def gen_er_dag(d: int, density: float, rng) -> BinaryGraph:
    """ER graph oriented along a random permutation, hence acyclic."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    upper = np.triu(rng.random((d, d)) < density, k=1)
    order = rng.permutation(d)
    adj = np.zeros((d, d), dtype=np.uint8)
    adj[np.ix_(order, order)] = upper
    return BinaryGraph(adj)


def n_perturbed_positions(d: int, p_l: float) -> int:
    # round half up
    return int(math.floor(p_l * d * (d - 1) + 0.5))


def perturb(A_t: BinaryGraph, p_l: float, rng, full_output: bool = False):
    """Add/delete/reverse edges at ``round(p_l d (d-1))`` random off-diagonal positions.

    Selected zeros become edges; selected edges are deleted or reversed with
    equal probability. Additions and reversals that end up on a directed
    cycle are undone in reverse selection order until the graph is acyclic.
    """
    if not 0.0 <= p_l <= 1.0:
        raise ValueError("p_l must lie in [0, 1]")
    t = A_t.adj.astype(bool)
    d = t.shape[0]
    g = t.copy()
    off = np.flatnonzero(~np.eye(d, dtype=bool))
    m = n_perturbed_positions(d, p_l)
    picks = rng.choice(off.size, size=m, replace=False) if m else np.empty(0, dtype=int)
    mods = []  # (kind, i, j, [(cell, previous value), ...])
    for p in picks:
        i, j = divmod(int(off[p]), d)
        if not t[i, j]:
            mods.append(("add", i, j, [((i, j), g[i, j])]))
            g[i, j] = True
        elif rng.random() < 0.5:
            mods.append(("delete", i, j, [((i, j), g[i, j])]))
            g[i, j] = False
        else:
            mods.append(("reverse", i, j, [((i, j), g[i, j]), ((j, i), g[j, i])]))
            g[i, j] = False
            g[j, i] = True

    undone = set()
    while not is_acyclic_exact(g):
        progressed = False
        for n in range(len(mods) - 1, -1, -1):
            kind, i, j, cells = mods[n]
            if kind == "delete" or n in undone:
                continue
            u, v = (i, j) if kind == "add" else (j, i)
            if g[u, v] and _reaches(g, v, u):
                for cell, old in reversed(cells):
                    g[cell] = old
                undone.add(n)
                progressed = True
                if is_acyclic_exact(g):
                    break
        if not progressed:  # pragma: no cover - every cycle holds a new edge
            raise CyclicInput("perturbation repair failed")
    G = BinaryGraph(g)
    if full_output:
        realized = [(k, i, j) for n, (k, i, j, _) in enumerate(mods) if n not in undone]
        reverted = [(k, i, j) for n, (k, i, j, _) in enumerate(mods) if n in undone]
        return G, realized, reverted
    return G


def _reaches(adj, src, dst) -> bool:
    seen = np.zeros(adj.shape[0], dtype=bool)
    stack = [src]
    seen[src] = True
    while stack:
        u = stack.pop()
        if u == dst:
            return True
        for w in np.flatnonzero(adj[u] & ~seen):
            seen[w] = True
            stack.append(int(w))
    return False


def assign_weights(G: BinaryGraph, rng, low: float = 0.5, high: float = 2.0) -> WeightedAdjacency:
    d = G.dim
    mag = rng.uniform(low, high, size=(d, d))
    sign = np.where(rng.random((d, d)) < 0.5, -1.0, 1.0)
    return WeightedAdjacency(G.adj * sign * mag)


def sample_sem(W, n: int, noise_std: float = 1.0, rng=None) -> np.ndarray:
    """Draw n samples of x_j = sum_i W[i, j] x_i + noise_j in topological order."""
    W = W.values if isinstance(W, WeightedAdjacency) else np.asarray(W, dtype=np.float64)
    if rng is None:
        rng = seeded_rng(0)
    order = topological_order(W != 0)  # raises CyclicInput
    d = W.shape[0]
    noise = noise_std * rng.standard_normal((n, d)) if noise_std else np.zeros((n, d))
    X = np.zeros((n, d))
    for j in order:
        X[:, j] = X @ W[:, j] + noise[:, j]
    return X


def gen_problem(config: SynthConfig) -> SynthProblem:
    rng = seeded_rng(config.seed)
    truth = gen_er_dag(config.d, config.edge_prob, rng)
    graphs, weights, datasets, realized, reverted = [], [], [], [], []
    for k, n_k in enumerate(config.site_sizes()):
        G, done, undone = perturb(truth, config.p_l, rng, full_output=True)
        W = assign_weights(G, rng, config.weight_low, config.weight_high)
        X = sample_sem(W, n_k, config.noise_std, rng)
        graphs.append(G)
        weights.append(W)
        datasets.append(SiteDataset(f"site_{k}", X))
        realized.append(len(done))
        reverted.append(len(undone))
    return SynthProblem(truth, graphs, weights, datasets, config, realized, reverted)
