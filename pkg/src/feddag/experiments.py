"""Batch experiments: synthetic sweeps, CSV ingestion of site data, post-fit analysis."""
from __future__ import annotations

import csv
import glob
import json
import logging
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .admm import EstimatorConfig, FitResult, Mode, fit
from .errors import DimensionMismatch, FedDagError, LabelMismatch, ParseError
from .federation.transport import make_transport
from .metrics import (
    connection_degrees,
    overlapping_connections,
    score,
    site_specific_connections,
    two_sample_proportion_test,
)
from .synth import SynthConfig, gen_problem
from .types import BinaryGraph, PenaltyConfig, SiteDataset

log = logging.getLogger(__name__)

KINDS = ("sweep_d", "sweep_K", "sweep_pl", "single_fit", "analyze")
METRICS = ("error", "shd", "precision", "recall", "fscore")

# grid variable and the synthetic settings held fixed for each sweep kind
_SWEEP_BASE = {
    "sweep_d": ("d", {"K": 10, "p_l": 0.1, "n_total": "3d"}),
    "sweep_K": ("K", {"d": 50, "p_l": 0.1, "n_total": 256}),
    "sweep_pl": ("p_l", {"d": 30, "K": 10, "n_total": "3d"}),
    "single_fit": ("d", {"K": 10, "p_l": 0.1, "n_total": "3d"}),
}
_PENALTY_KEYS = {f.name for f in fields(PenaltyConfig)}
_CONFIG_KEYS = {f.name for f in fields(EstimatorConfig)} - {"mode", "penalties"}


@dataclass
class ExperimentSpec:
    kind: str = "sweep_d"
    grid: Sequence = (10, 20, 30)
    replicates: int = 10
    estimators: Sequence[str] = ("pfl", "sig")
    overrides: dict = field(default_factory=dict)
    estimator_overrides: dict = field(default_factory=dict)  # per-estimator refinements
    synth: dict = field(default_factory=dict)
    transport: str = "inproc"
    out: str = "results"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if len(self.grid) == 0:
            raise ValueError("grid must be non-empty")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        self.estimators = [Mode.parse(e).value for e in self.estimators]
        self.estimator_overrides = {Mode.parse(k).value: dict(v) for k, v in self.estimator_overrides.items()}
        for extra in [self.overrides, *self.estimator_overrides.values()]:
            unknown = set(extra) - _PENALTY_KEYS - _CONFIG_KEYS
            if unknown:
                raise ValueError(f"unknown estimator settings: {sorted(unknown)}")

    @property
    def grid_var(self) -> str:
        return _SWEEP_BASE[self.kind][0]

    def synth_config(self, value, seed: int) -> SynthConfig:
        var, base = _SWEEP_BASE[self.kind]
        params = dict(base)
        params.update(self.synth)
        params[var] = value
        if params.get("n_total") == "3d":
            params["n_total"] = 3 * int(params["d"])
        if params.get("n_per_site") is not None:
            params.pop("n_total", None)
        params["d"], params["K"] = int(params["d"]), int(params["K"])
        return SynthConfig(seed=seed, **params)

    def estimator_config(self, estimator: str) -> EstimatorConfig:
        settings = {**self.overrides, **self.estimator_overrides.get(Mode.parse(estimator).value, {})}
        return build_config(estimator, settings, seed=self.seed)


def build_config(estimator, overrides: dict | None = None, seed: int = 0) -> EstimatorConfig:
    """EstimatorConfig from a flat dict mixing penalty and solver settings."""
    overrides = dict(overrides or {})
    pen = {k: overrides.pop(k) for k in list(overrides) if k in _PENALTY_KEYS}
    unknown = set(overrides) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown estimator settings: {sorted(unknown)}")
    overrides.setdefault("seed", seed)
    return EstimatorConfig(mode=Mode.parse(estimator), penalties=PenaltyConfig(**pen), **overrides)


def replicate_seed(seed: int, grid_index: int, replicate: int) -> int:
    """Problem seed shared by every estimator at one (grid point, replicate)."""
    return int(np.random.SeedSequence([seed, grid_index, replicate]).generate_state(1)[0])


def _fit_one(problem, estimator, spec: ExperimentSpec) -> FitResult:
    config = spec.estimator_config(estimator)
    if spec.transport == "inproc" or config.mode is Mode.AVG:
        return fit(problem.datasets, config)
    transport = make_transport(spec.transport)
    return fit(problem.datasets, config, transport=transport)


def run_sweep(spec: ExperimentSpec, progress=None) -> dict:
    """Run every grid point x replicate x estimator; write ``results.csv`` and ``runs.jsonl``.

    Failed fits are recorded with ``status="failed"`` and left out of the
    averages. Returns the rows of the summary table.
    """
    os.makedirs(spec.out, exist_ok=True)
    records = []
    for gi, value in enumerate(spec.grid):
        for rep in range(spec.replicates):
            pseed = replicate_seed(spec.seed, gi, rep)
            problem = gen_problem(spec.synth_config(value, pseed))
            for est in spec.estimators:
                rec = {"grid_var": spec.grid_var, "value": value, "replicate": rep,
                       "estimator": est, "problem_seed": pseed}
                t0 = time.perf_counter()
                try:
                    res = _fit_one(problem, est, spec)
                except (FedDagError, FloatingPointError, OSError) as exc:
                    rec.update(status="failed", error_type=type(exc).__name__, message=str(exc))
                    log.warning("run failed: %s", "".join(traceback.format_exception_only(type(exc), exc)).strip())
                else:
                    per_site = [score(g, G) for g, G in zip(res.graphs, problem.graphs)]
                    rec.update(
                        status="ok",
                        converged=res.converged,
                        iterations=res.iterations_used,
                        max_h=float(max(res.h_values)),
                        **{m: float(np.mean([s[m] for s in per_site])) for m in METRICS},
                    )
                rec["seconds"] = round(time.perf_counter() - t0, 3)
                records.append(rec)
                if progress is not None:
                    progress(rec)

    with open(os.path.join(spec.out, "runs.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    rows = summarize(records)
    write_csv(os.path.join(spec.out, "results.csv"), rows)
    with open(os.path.join(spec.out, "spec.json"), "w") as fh:
        json.dump(asdict(spec), fh, indent=2, default=list)
    return {"rows": rows, "records": records}


def summarize(records) -> list[dict]:
    """Mean and population std of each metric per (grid value, estimator)."""
    keys = []
    for r in records:
        k = (r["grid_var"], r["value"], r["estimator"])
        if k not in keys:
            keys.append(k)
    rows = []
    for var, value, est in keys:
        ok = [r for r in records if (r["grid_var"], r["value"], r["estimator"]) == (var, value, est)
              and r["status"] == "ok"]
        total = sum(1 for r in records if (r["grid_var"], r["value"], r["estimator"]) == (var, value, est))
        row = {"grid_var": var, "value": value, "estimator": est, "n_ok": len(ok), "n_runs": total}
        for m in METRICS:
            vals = np.array([r[m] for r in ok], dtype=float)
            row[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
            row[f"{m}_std"] = float(vals.std()) if vals.size else math.nan
        rows.append(row)
    return rows


def write_csv(path, rows: Sequence[dict], header: Sequence[str] | None = None):
    header = list(header if header is not None else (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_csv(path) -> list[dict]:
    """Reader for the tables written here; numeric-looking cells come back as numbers."""
    def conv(s):
        for cast in (int, float):
            try:
                return cast(s)
            except ValueError:
                pass
        return s

    with open(path, newline="") as fh:
        return [{k: conv(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _read_numeric_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=path, line=1) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", path=path, line=lineno)
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r} in column {header[col - 1]!r}",
                                     path=path, line=lineno, column=col) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r}", path=path, line=lineno, column=col)
                vals.append(v)
            rows.append(vals)
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def read_site_csv(path, site_id: str | None = None, standardize: bool = True) -> SiteDataset:
    """One site's samples; the id defaults to the file stem."""
    _, X = _read_numeric_csv(path)
    if standardize and X.shape[0] > 0:
        X = X - X.mean(axis=0)
        sd = X.std(axis=0)
        X = X / np.where(sd > 0, sd, 1.0)
    return SiteDataset(site_id or os.path.splitext(os.path.basename(path))[0], X)


def ingest_csv_sites(directory, standardize: bool = True) -> list[SiteDataset]:
    """One dataset per ``site_*.csv`` (header row, numeric body), in sorted file order.

    Columns are standardized per site unless ``standardize`` is false.
    """
    paths = sorted(glob.glob(os.path.join(os.fspath(directory), "site_*.csv")))
    if not paths:
        raise FileNotFoundError(f"no site_*.csv files in {directory}")
    datasets = [read_site_csv(p, standardize=standardize) for p in paths]
    for ds, p in zip(datasets[1:], paths[1:]):
        if ds.dim != datasets[0].dim:
            raise DimensionMismatch(f"{p} has {ds.dim} columns, expected {datasets[0].dim}",
                                    site_id=ds.site_id)
    return datasets


def read_labels(path) -> list[str]:
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def _edge_rows(G: BinaryGraph, labels):
    return [{"source": labels[i], "target": labels[j], "source_index": i, "target_index": j}
            for i, j in G.edges()]


def analyze(fit_path, labels_path=None, out="analysis", group_b=None, top: int = 10,
            pooled: bool = True) -> dict:
    """Degree tables, overlapping and site-specific edges for one fit.

    ``fit_path`` may be a single saved FitResult or a list of them (their
    graphs are concatenated). With ``group_b`` each edge's frequency across
    the two groups' graphs is compared with a two-sample proportion test.
    """
    graphs_a, ids_a = _load_graphs(fit_path)
    d = graphs_a[0].dim
    labels = read_labels(labels_path) if labels_path else [f"X{i + 1}" for i in range(d)]
    if len(labels) != d:
        raise LabelMismatch(f"{len(labels)} labels for {d} nodes")
    os.makedirs(out, exist_ok=True)
    written = {}

    deg_rows = []
    for sid, G in zip(ids_a, graphs_a):
        rep = connection_degrees(G, labels, top=d)
        for i in range(d):
            deg_rows.append({"site": sid, "node": labels[i], "index": i,
                             "out_degree": int(rep.out_degree[i]), "in_degree": int(rep.in_degree[i])})
    written["degrees"] = os.path.join(out, "degrees.csv")
    write_csv(written["degrees"], deg_rows, ["site", "node", "index", "out_degree", "in_degree"])

    top_rows = []
    for sid, G in zip(ids_a, graphs_a):
        rep = connection_degrees(G, labels, top=top)
        for rank, (o, i) in enumerate(zip(rep.top_out, rep.top_in), start=1):
            top_rows.append({"site": sid, "rank": rank, "out_node": o.label, "out_degree": o.degree,
                             "in_node": i.label, "in_degree": i.degree})
    written["top_degrees"] = os.path.join(out, "top_degrees.csv")
    write_csv(written["top_degrees"], top_rows,
              ["site", "rank", "out_node", "out_degree", "in_node", "in_degree"])

    written["overlap"] = os.path.join(out, "overlap.csv")
    write_csv(written["overlap"], _edge_rows(overlapping_connections(graphs_a), labels),
              ["source", "target", "source_index", "target_index"])

    spec_rows = []
    for k, sid in enumerate(ids_a):
        for row in _edge_rows(site_specific_connections(graphs_a, k), labels):
            spec_rows.append({"site": sid, **row})
    written["site_specific"] = os.path.join(out, "site_specific.csv")
    write_csv(written["site_specific"], spec_rows, ["site", "source", "target", "source_index", "target_index"])

    if group_b is not None:
        graphs_b, _ = _load_graphs(group_b)
        if graphs_b[0].dim != d:
            raise DimensionMismatch("the two groups have different numbers of nodes")
        A = np.stack([g.adj for g in graphs_a]).astype(int)
        B = np.stack([g.adj for g in graphs_b]).astype(int)
        ca, cb = A.sum(axis=0), B.sum(axis=0)
        rows = []
        for i in range(d):
            for j in range(d):
                if i == j or (ca[i, j] == 0 and cb[i, j] == 0):
                    continue
                p = two_sample_proportion_test(int(ca[i, j]), len(A), int(cb[i, j]), len(B), pooled=pooled)
                rows.append({"source": labels[i], "target": labels[j], "count_a": int(ca[i, j]),
                             "n_a": len(A), "count_b": int(cb[i, j]), "n_b": len(B), "p_value": p})
        written["proportion_tests"] = os.path.join(out, "proportion_tests.csv")
        write_csv(written["proportion_tests"], rows,
                  ["source", "target", "count_a", "n_a", "count_b", "n_b", "p_value"])
    return written


def _load_graphs(paths):
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    graphs, ids = [], []
    for p in paths:
        try:
            res = FitResult.load(p)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"cannot read fit result: {exc}", path=os.fspath(p)) from exc
        graphs.extend(res.graphs)
        sids = res.site_ids or [f"site_{k}" for k in range(len(res.graphs))]
        ids.extend(sids if len(paths) == 1 else [f"{os.path.basename(os.fspath(p))}:{s}" for s in sids])
    if not graphs:
        raise ParseError("fit result holds no graphs", path=os.fspath(paths[0]))
    return graphs, ids


def load_spec(path, **overrides) -> ExperimentSpec:
    with open(path) as fh:
        data = json.load(fh)
    data.update(overrides)
    return ExperimentSpec(**data)


__all__ = [
    "ExperimentSpec",
    "analyze",
    "build_config",
    "ingest_csv_sites",
    "read_csv",
    "read_labels",
    "read_site_csv",
    "replicate_seed",
    "run_sweep",
    "summarize",
    "write_csv",
]
