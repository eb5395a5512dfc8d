"""Directed-edge evaluation metrics and graph comparisons across sites."""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, LabelMismatch
from .types import BinaryGraph


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class Scores(NamedTuple):
    error: float
    precision: float
    recall: float
    fscore: float


def _adj(G):
    return np.asarray(G.adj if isinstance(G, BinaryGraph) else G) != 0


def _same_dim(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"graph shapes differ: {a.shape} vs {b.shape}")


def confusion(learned, truth) -> ConfusionCounts:
    L, T = _adj(learned), _adj(truth)
    _same_dim(L, T)
    off = ~np.eye(L.shape[0], dtype=bool)
    tp = int(np.sum(L & T & off))
    fp = int(np.sum(L & ~T & off))
    fn = int(np.sum(~L & T & off))
    tn = int(np.sum(~L & ~T & off))
    return ConfusionCounts(tp, fp, fn, tn)


def error_precision_recall_f1(c: ConfusionCounts) -> Scores:
    """Zero denominators give 0 for precision, recall and F-score."""
    total = c.total
    if total <= 0:
        raise ValueError("confusion counts are empty")
    error = (c.fp + c.fn) / total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(error, precision, recall, f)


def shd(learned, truth) -> int:
    """Additions, deletions and reversals each cost one."""
    L, T = _adj(learned), _adj(truth)
    _same_dim(L, T)
    iu = np.triu_indices(L.shape[0], k=1)
    l_fwd, l_bwd = L[iu], L.T[iu]
    t_fwd, t_bwd = T[iu], T.T[iu]
    l_any, t_any = l_fwd | l_bwd, t_fwd | t_bwd
    differs = l_any != t_any
    both = l_any & t_any
    mismatch = both & ((l_fwd != t_fwd) | (l_bwd != t_bwd))
    return int(differs.sum() + mismatch.sum())


def score(learned, truth) -> dict:
    c = confusion(learned, truth)
    s = error_precision_recall_f1(c)
    return {"error": s.error, "precision": s.precision, "recall": s.recall,
            "fscore": s.fscore, "shd": shd(learned, truth)}


class DegreeRow(NamedTuple):
    index: int
    label: str
    degree: int


class DegreeReport(NamedTuple):
    out_degree: np.ndarray
    in_degree: np.ndarray
    top_out: list
    top_in: list


def connection_degrees(G, labels: Sequence[str], top: int = 10) -> DegreeReport:
    A = _adj(G).astype(int)
    if len(labels) != A.shape[0]:
        raise LabelMismatch(f"{len(labels)} labels for {A.shape[0]} nodes")
    out_deg, in_deg = A.sum(axis=1), A.sum(axis=0)

    def ranked(deg):
        order = sorted(range(len(deg)), key=lambda i: (-deg[i], i))
        return [DegreeRow(i, labels[i], int(deg[i])) for i in order[:top]]

    return DegreeReport(out_deg, in_deg, ranked(out_deg), ranked(in_deg))


def _stack(graphs):
    if not graphs:
        raise ValueError("need at least one graph")
    mats = [_adj(g) for g in graphs]
    for m in mats[1:]:
        _same_dim(mats[0], m)
    return np.stack(mats)


def overlapping_connections(graphs) -> BinaryGraph:
    return BinaryGraph(np.logical_and.reduce(_stack(graphs), axis=0))


def site_specific_connections(graphs, k: int) -> BinaryGraph:
    S = _stack(graphs)
    if not 0 <= k < S.shape[0]:
        raise IndexError(f"site index {k} out of range for {S.shape[0]} graphs")
    others = np.delete(S, k, axis=0).any(axis=0) if S.shape[0] > 1 else np.zeros_like(S[0])
    return BinaryGraph(S[k] & ~others)


def two_sample_proportion_test(x1: int, n1: int, x2: int, n2: int, pooled: bool = True) -> float:
    """Two-sided z-test for equal proportions; a degenerate variance gives p = 1."""
    if n1 < 1 or n2 < 1 or not (0 <= x1 <= n1 and 0 <= x2 <= n2):
        raise ValueError("need 0 <= x <= n and n >= 1 in both groups")
    p1, p2 = x1 / n1, x2 / n2
    if pooled:
        p = (x1 + x2) / (n1 + n2)
        var = p * (1 - p) * (1 / n1 + 1 / n2)
    else:
        var = p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2
    if var <= 0:
        return 1.0
    z = (p1 - p2) / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))
