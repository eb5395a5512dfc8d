"""ADMM driver for the personalized federated estimator and its baselines."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .consensus import GlobalStepInput, global_update
from .dag import h_and_grad, is_acyclic_exact
from .errors import NonFinite
from .federation.transport import InProcessTransport, Transport
from .types import AdmmState, BinaryGraph, PenaltyConfig, SiteDataset, WeightedAdjacency, validate_problem

log = logging.getLogger(__name__)

RHO_CAP = 1e16


class Mode(str, enum.Enum):
    PFL = "PFL"
    SIG = "SIG"
    AVG = "AVG"
    ADMM_HOMOGENEOUS = "ADMM_HOMOGENEOUS"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"pfl": cls.PFL, "sig": cls.SIG, "avg": cls.AVG, "admm": cls.ADMM_HOMOGENEOUS,
                   "admm_homogeneous": cls.ADMM_HOMOGENEOUS}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown estimator {value!r}") from None


@dataclass(frozen=True)
class EstimatorConfig:
    mode: Mode = Mode.PFL
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    rho1_init: float = 1.0
    rho2_init: float = 1.0
    gamma1: float = 1.05
    gamma2: float = 1.01
    seed: int = 0
    step_floor: str = "quadratic"
    step_shrink: float = 0.5
    inner_steps: int = 5
    site_steps: bool = True

    # The growth factors and step settings above were tuned on small
    # synthetic problems; faster penalty growth freezes Z before the edge
    # directions settle.

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if not 0 < self.step_shrink <= 1:
            raise ValueError("step_shrink must lie in (0, 1]")
        if self.step_floor not in ("quadratic", "augmented"):
            raise ValueError(f"unknown step floor {self.step_floor!r}")
        if not (self.gamma1 > 1 and self.gamma2 > 1):
            raise ValueError("growth factors gamma1, gamma2 must exceed 1")
        if not (self.rho1_init > 0 and self.rho2_init > 0):
            raise ValueError("initial penalties must be positive")

    def with_penalties(self, **kw) -> "EstimatorConfig":
        return replace(self, penalties=replace(self.penalties, **kw))


@dataclass(frozen=True, eq=False)
class FitResult:
    Z_final: list
    graphs: list
    h_values: list
    iterations_used: int
    primal_residuals: list
    dual_residuals: list
    converged: bool
    site_ids: list = field(default_factory=list)
    mode: str = Mode.PFL.value
    rho1_trace: list = field(default_factory=list)
    rho2_trace: list = field(default_factory=list)
    stopped: bool = False
    rho_capped: bool = False
    prox_converged: bool = True

    @property
    def K(self) -> int:
        return len(self.Z_final)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "site_ids": list(self.site_ids),
            "Z_final": [z.values.tolist() for z in self.Z_final],
            "graphs": [g.adj.astype(int).tolist() for g in self.graphs],
            "h_values": [float(h) for h in self.h_values],
            "iterations_used": self.iterations_used,
            "primal_residuals": [float(r) for r in self.primal_residuals],
            "dual_residuals": [float(r) for r in self.dual_residuals],
            "rho1_trace": [float(r) for r in self.rho1_trace],
            "rho2_trace": [float(r) for r in self.rho2_trace],
            "converged": self.converged,
            "stopped": self.stopped,
            "rho_capped": self.rho_capped,
            "prox_converged": self.prox_converged,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        return cls(
            Z_final=[WeightedAdjacency(z) for z in data["Z_final"]],
            graphs=[BinaryGraph(g) for g in data["graphs"]],
            h_values=list(data["h_values"]),
            iterations_used=int(data["iterations_used"]),
            primal_residuals=list(data["primal_residuals"]),
            dual_residuals=list(data["dual_residuals"]),
            converged=bool(data["converged"]),
            site_ids=list(data.get("site_ids", [])),
            mode=data.get("mode", Mode.PFL.value),
            rho1_trace=list(data.get("rho1_trace", [])),
            rho2_trace=list(data.get("rho2_trace", [])),
            stopped=bool(data.get("stopped", False)),
            rho_capped=bool(data.get("rho_capped", False)),
            prox_converged=bool(data.get("prox_converged", True)),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FitResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _cycle_edges(adj):
    """Mask of edges lying on at least one directed cycle (both ends in one SCC)."""
    n, labels = connected_components(adj, directed=True, connection="strong")
    if n == adj.shape[0]:
        return None
    same = labels[:, None] == labels[None, :]
    mask = adj & same
    return mask if mask.any() else None


def repair_cycles(adj, weights) -> np.ndarray:
    """Drop the weakest cycle edge until acyclic; ties go to the lowest (row, col)."""
    adj = np.array(adj, dtype=bool)
    mag = np.abs(np.asarray(weights, dtype=np.float64))
    while True:
        mask = _cycle_edges(adj)
        if mask is None:
            return adj
        rows, cols = np.nonzero(mask)  # row-major, so ties resolve lexicographically
        k = int(np.argmin(mag[rows, cols]))
        adj[rows[k], cols[k]] = False


def threshold_graph(W, omega: float) -> BinaryGraph:
    if not omega > 0:
        raise ValueError("omega must be positive")
    W = W.values if isinstance(W, WeightedAdjacency) else np.asarray(W, dtype=np.float64)
    adj = np.abs(W) >= omega
    np.fill_diagonal(adj, False)
    return BinaryGraph(repair_cycles(adj, W))


class _Run:
    """Mutable bookkeeping for one ADMM run."""

    def __init__(self, K):
        self.active = np.ones(K, dtype=bool)
        self.primal = []
        self.dual = []
        self.rho1 = []
        self.rho2 = []
        self.rho_capped = False
        self.prox_ok = True


def _admm(transport: Transport, K: int, d: int, config: EstimatorConfig, shared: bool,
          independent: bool, callback: Callable | None):
    pen = config.penalties
    st = AdmmState.initial(K, d, config.rho1_init, config.rho2_init, config.gamma1, config.gamma2)
    run = _Run(K)
    C_prev = None
    warm = None
    stopped = False
    for t in range(1, pen.admm_max_iter + 1):
        st.iteration = t
        transport.broadcast(t, [(st.Z[k], st.beta[k], st.rho2) for k in range(K)])
        W = transport.gather(t)
        for k in range(K):
            np.fill_diagonal(W[k], 0.0)
        idx = np.flatnonzero(run.active) if independent else np.arange(K)
        Z_cur = [st.Z[k] for k in idx]
        try:
            for _ in range(config.inner_steps):
                C_start = None if C_prev is None else C_prev[idx] * config.step_shrink
                step = global_update(
                    GlobalStepInput(
                        Z_cur, [W[k] for k in idx], st.alpha[idx],
                        [st.beta[k] for k in idx], st.rho1, st.rho2, pen, warm,
                    ),
                    C_start=C_start,
                    shared=shared,
                    floor=config.step_floor,
                    site_steps=config.site_steps,
                )
                Z_cur, warm = step.Z, step.warm
                if C_prev is None:
                    C_prev = np.zeros(K)
                C_prev[idx] = step.step
        except (NonFinite, FloatingPointError) as exc:
            raise NonFinite(
                f"non-finite values at iteration {t} (rho1={st.rho1:.3g}, rho2={st.rho2:.3g}): {exc}"
            ) from exc
        run.prox_ok &= step.converged

        change = np.zeros(K)
        primal = 0.0
        for j, k in enumerate(idx):
            Z_new = step.Z[j]
            change[k] = np.linalg.norm(Z_new - st.Z[k]) / max(np.linalg.norm(Z_new), 1e-12)
            st.beta[k] = st.beta[k] + st.rho2 * (W[k] - Z_new)
            st.alpha[k] += st.rho1 * h_and_grad(Z_new).value
            primal = max(primal, float(np.linalg.norm(W[k] - Z_new)))
            st.Z[k] = Z_new
        dual = st.rho2 * float(np.sqrt(sum(
            (change[k] * max(np.linalg.norm(st.Z[k]), 1e-12)) ** 2 for k in idx)))
        run.primal.append(primal)
        run.dual.append(dual)
        run.rho1.append(st.rho1)
        run.rho2.append(st.rho2)
        if callback is not None:
            callback({"iteration": t, "primal_residual": primal, "dual_residual": dual,
                      "rho1": st.rho1, "rho2": st.rho2, "step": float(np.max(step.step))})

        new_rho1, new_rho2 = st.gamma1 * st.rho1, st.gamma2 * st.rho2
        if new_rho1 > RHO_CAP or new_rho2 > RHO_CAP:
            run.rho_capped = True
        st.rho1, st.rho2 = min(new_rho1, RHO_CAP), min(new_rho2, RHO_CAP)

        if independent:
            run.active[idx[change[idx] < pen.admm_tol]] = False
            if not run.active.any():
                stopped = True
                break
        elif change.sum() < pen.admm_tol:
            stopped = True
            break
    return st, run, stopped


def fit(datasets: Sequence[SiteDataset], config: EstimatorConfig | None = None,
        transport: Transport | None = None, callback: Callable | None = None) -> FitResult:
    """Learn one weighted DAG per site.

    ``transport`` defaults to an in-process transport. Its sites are
    launched from ``datasets`` unless it has already been opened. The AVG
    baseline pools raw rows and therefore always runs in process.
    """
    config = config or EstimatorConfig()
    pen = config.penalties
    mode = config.mode
    if datasets is not None:
        problem = validate_problem(datasets)
        site_ids = [ds.site_id for ds in datasets]

    if mode is Mode.AVG:
        pooled = SiteDataset("pooled", np.vstack([ds.data for ds in datasets]))
        inner = fit([pooled], replace(config, mode=Mode.PFL), InProcessTransport(), callback)
        K = problem.K
        return replace(
            inner,
            Z_final=[inner.Z_final[0]] * K,
            graphs=[inner.graphs[0]] * K,
            h_values=[inner.h_values[0]] * K,
            site_ids=site_ids,
            mode=Mode.AVG.value,
        )

    transport = transport if transport is not None else InProcessTransport()
    own = not transport._opened
    if own:
        transport.open(datasets)
    K, d = len(transport.site_ids), transport.dim
    if datasets is not None and (K, d) != (problem.K, problem.d):
        raise ValueError("transport sites do not match the datasets")
    if mode is Mode.SIG:
        config = config.with_penalties(lambda2=0.0)
    try:
        st, run, stopped = _admm(
            transport, K, d, config,
            shared=mode is Mode.ADMM_HOMOGENEOUS,
            independent=mode is Mode.SIG,
            callback=callback,
        )
    finally:
        if own:
            transport.close()

    Z_final = [WeightedAdjacency(z) for z in st.Z]
    h_values = [h_and_grad(z.values).value for z in Z_final]
    graphs = [threshold_graph(z, pen.edge_threshold) for z in Z_final]
    assert all(is_acyclic_exact(g) for g in graphs)
    converged = stopped and all(h <= pen.h_tol for h in h_values)
    return FitResult(
        Z_final=Z_final,
        graphs=graphs,
        h_values=h_values,
        iterations_used=st.iteration,
        primal_residuals=run.primal,
        dual_residuals=run.dual,
        converged=converged,
        site_ids=list(transport.site_ids),
        mode=mode.value,
        rho1_trace=run.rho1,
        rho2_trace=run.rho2,
        stopped=stopped,
        rho_capped=run.rho_capped,
        prox_converged=run.prox_ok,
    )
