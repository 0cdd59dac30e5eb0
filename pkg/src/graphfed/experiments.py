"""Seeded experiment grids with CSV results and provenance.

A run expands the grid into cells (the Cartesian product of the ``grid``
lists in :data:`GRID_KEYS` order), and every cell is repeated ``repeats``
times. Data, graph and initialization for replicate ``r`` are seeded from
``mix_seed(seed, data_cell, r)``, where ``data_cell`` indexes the grid
restricted to keys that change the data. Cells that differ only in
aggregation strength, number of rounds or edge probabilities therefore see
the same samples, and SBM graphs for different edge probabilities are drawn
from the same uniforms (a graph at higher ``p_in`` contains the one at lower
``p_in``). Comparisons along those axes are paired.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .datasets import (
    load_embedded_features,
    make_clustered_federation,
    make_prior_skew_federation,
)
from .exceptions import GraphFedError, ParseError
from .federated import TrainConfig, graphfed_em, train_centralized, train_local, train_oracle
from .graph import block_graph, prior_overlap_graph, sbm_graph, write_edge_list
from .metrics import (
    MetricsRecord,
    avg_log_likelihood,
    centroid_error,
    consensus_error,
    hard_assign,
    nmi,
    replicate_stats,
)
from .mixture import e_step
from .seeding import mix_seed

log = logging.getLogger(__name__)

OUT_DIR_ENV = "GRAPHFED_OUT_DIR"

KINDS = ("clustered", "prior-skew", "embedded")
METHODS = ("local", "centralized", "oracle-pooled", "oracle-aggregated", "graphfed")
GRID_KEYS = ("d", "n_train", "aggregation_alpha", "p_in", "p_out", "dirichlet_concentration", "n_rounds")
# keys that leave the samples unchanged; excluded from the replicate seed
PAIRED_KEYS = ("aggregation_alpha", "n_rounds", "p_in", "p_out")

CSV_COLUMNS = ("experiment", "cell_id", "method", "replicate", "d", "N_i", "alpha", "p_in", "p_out",
               "avg_ll", "nmi", "mu_err", "consensus_err", "error")
METRIC_COLUMNS = {"avg_ll": "avg_log_likelihood", "nmi": "nmi", "mu_err": "mu_err",
                  "consensus_err": "consensus_err"}
CELL_COLUMNS = ("d", "N_i", "alpha", "p_in", "p_out")


def sample_features_path() -> str:
    """Path of the bundled pre-embedded sample feature file."""
    return str(resources.files("graphfed").joinpath("data/sample_embedded.csv"))


def _default_grid():
    return {"d": [2], "n_train": [50], "aggregation_alpha": [1.0], "p_in": [1.0], "p_out": [0.0],
            "dirichlet_concentration": [0.3], "n_rounds": [10]}


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    kind: str = "clustered"
    methods: list = field(default_factory=lambda: ["local", "centralized", "graphfed"])
    grid: dict = field(default_factory=_default_grid)
    n_components: int = 3
    n_local_steps: int = 5
    shrinkage: float = 0.01
    loading: float = 1e-6
    n_clusters: int = 5
    nodes_per_cluster: int = 5
    n_nodes: int = 10
    n_val: int = 500
    separation: float = 5.0
    cov_scale: float = 1.0
    features_path: Optional[str] = None
    repeats: int = 10
    seed: int = 0
    out_dir: Optional[str] = None
    workers: int = 1
    trace: bool = False

    def __post_init__(self):
        grid = _default_grid()
        for key, values in (self.grid or {}).items():
            if key not in GRID_KEYS:
                raise ValueError(f"unknown grid key {key!r}; expected one of {GRID_KEYS}")
            grid[key] = list(values) if isinstance(values, (list, tuple)) else [values]
        self.grid = grid
        self.methods = list(self.methods)
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.kind != "clustered" and {"oracle-pooled", "oracle-aggregated"} & set(self.methods):
            raise ValueError("oracle methods need cluster identities (kind=clustered)")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        for p in self.grid["p_in"] + self.grid["p_out"]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"edge probability {p} is not in [0, 1]")
        for a in self.grid["aggregation_alpha"]:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"aggregation_alpha {a} is not in [0, 1]")
        if any(c <= 0 for c in self.grid["dirichlet_concentration"]):
            raise ValueError("dirichlet_concentration must be positive")
        if any(d < 1 for d in self.grid["d"]) or any(n < self.n_components for n in self.grid["n_train"]):
            raise ValueError("need d >= 1 and n_train >= n_components")

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "kind": self.kind,
            "methods": list(self.methods),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "model": {"n_components": self.n_components, "n_local_steps": self.n_local_steps,
                      "shrinkage": self.shrinkage, "loading": self.loading},
            "data": {"n_clusters": self.n_clusters, "nodes_per_cluster": self.nodes_per_cluster,
                     "n_nodes": self.n_nodes, "n_val": self.n_val, "separation": self.separation,
                     "cov_scale": self.cov_scale, "features_path": self.features_path},
            "run": {"repeats": self.repeats, "seed": self.seed, "out_dir": self.out_dir,
                    "workers": self.workers, "trace": self.trace},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        flat = {}
        for key, value in raw.items():
            if key in ("model", "data", "run"):
                flat.update(value or {})
            else:
                flat[key] = value
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(flat) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**flat)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def dump(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=False)
        if path is not None:
            Path(path).write_text(text)
        return text

    def replace(self, **changes) -> "ExperimentConfig":
        grid = dict(self.grid)
        grid.update(changes.pop("grid", {}))
        return dataclasses.replace(self, grid=grid, **changes)

    # -- grid -----------------------------------------------------------------

    def cells(self) -> list[dict]:
        return [dict(zip(GRID_KEYS, combo)) for combo in itertools.product(*(self.grid[k] for k in GRID_KEYS))]

    def data_cell_index(self, cell: dict) -> int:
        data_keys = [k for k in GRID_KEYS if k not in PAIRED_KEYS]
        index = 0
        for k in data_keys:
            values = self.grid[k]
            index = index * len(values) + values.index(cell[k])
        return index


def preset(name: str) -> ExperimentConfig:
    """Parameter grids of the published experiments, at their stated sizes."""
    if name == "fig1":
        return ExperimentConfig(
            experiment="fig1", kind="clustered", methods=list(METHODS),
            grid={"d": [2, 6, 10], "n_train": [10, 50, 100], "aggregation_alpha": [1.0],
                  "p_in": [1.0], "p_out": [0.0], "n_rounds": [10]},
            n_components=3, n_clusters=5, nodes_per_cluster=5, n_local_steps=5, repeats=10)
    if name == "fig3":
        return ExperimentConfig(
            experiment="fig3", kind="clustered", methods=["graphfed"],
            grid={"d": [10], "n_train": [10], "aggregation_alpha": [0.1, 0.5, 1.0],
                  "p_in": [0.4, 0.7, 1.0], "p_out": [0.0], "n_rounds": [50]},
            n_components=3, n_clusters=1, nodes_per_cluster=10, n_local_steps=5, repeats=10)
    if name == "fig4":
        return ExperimentConfig(
            experiment="fig4", kind="clustered", methods=["graphfed", "oracle-aggregated"],
            grid={"d": [10], "n_train": [10], "aggregation_alpha": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                  "p_in": [1.0], "p_out": [0.0, 0.2, 0.4], "n_rounds": [10]},
            n_components=3, n_clusters=5, nodes_per_cluster=5, n_local_steps=5, repeats=10)
    if name == "fig5":
        return ExperimentConfig(
            experiment="fig5", kind="prior-skew", methods=["local", "centralized", "graphfed"],
            grid={"d": [2, 6, 10], "n_train": [10], "aggregation_alpha": [1.0],
                  "dirichlet_concentration": [0.3], "n_rounds": [10]},
            n_components=3, n_nodes=10, n_local_steps=5, repeats=10)
    if name == "mnist-like":
        return ExperimentConfig(
            experiment="mnist-like", kind="embedded", methods=["local", "centralized", "graphfed"],
            grid={"d": [2, 6, 10], "n_train": [50, 100, 200], "aggregation_alpha": [1.0],
                  "dirichlet_concentration": [0.3], "n_rounds": [10]},
            n_components=10, n_nodes=10, n_local_steps=5, repeats=10)
    raise ValueError(f"unknown preset {name!r}; choose from fig1, fig3, fig4, fig5, mnist-like")


PRESETS = ("fig1", "fig3", "fig4", "fig5", "mnist-like")


# -- one job: a (cell, replicate) pair ------------------------------------------

def build_problem(cfg: ExperimentConfig, cell: dict, seed: int):
    """Data and similarity graph for one cell and replicate seed."""
    d, n_train = int(cell["d"]), int(cell["n_train"])
    if cfg.kind == "clustered":
        fed = make_clustered_federation(
            cfg.n_clusters, cfg.nodes_per_cluster, cfg.n_components, d, n_train, cfg.n_val,
            seed=mix_seed(seed, 1), separation=cfg.separation, cov_scale=cfg.cov_scale)
        graph = sbm_graph(cfg.n_clusters, cfg.nodes_per_cluster, cell["p_in"], cell["p_out"],
                          seed=mix_seed(seed, 2))
    elif cfg.kind == "prior-skew":
        fed = make_prior_skew_federation(
            cfg.n_nodes, cfg.n_components, d, cell["dirichlet_concentration"], n_train, cfg.n_val,
            seed=mix_seed(seed, 1), separation=cfg.separation, cov_scale=cfg.cov_scale)
        graph = prior_overlap_graph(fed.priors)
    else:
        path = cfg.features_path or sample_features_path()
        fed = load_embedded_features(path, cfg.n_nodes, cell["dirichlet_concentration"], n_train,
                                     seed=mix_seed(seed, 1), n_val_max=cfg.n_val, d=d)
        graph = prior_overlap_graph(fed.priors)
    return fed, graph


def _per_node_models(method, fed, graph, tcfg, trace_path=None):
    if method == "local":
        return [r.model for r in train_local(fed, tcfg)]
    if method == "centralized":
        return [train_centralized(fed, tcfg).model] * fed.n_nodes
    if method == "oracle-pooled":
        fits = train_oracle(fed, tcfg, mode="pooled")
        return [fits[int(c)].model for c in fed.cluster_of]
    if method == "oracle-aggregated":
        return graphfed_em(block_graph(fed.cluster_of), fed, tcfg, trace_path=trace_path,
                           record_history=False).models
    if method == "graphfed":
        return graphfed_em(graph, fed, tcfg, trace_path=trace_path,
                           record_history=False).models
    raise ValueError(f"unknown method {method!r}")


def evaluate(models, fed, graph) -> MetricsRecord:
    """All metrics for per-node models on the federation's validation sets."""
    lls, nmis = [], []
    for m, va in zip(models, fed.val):
        lls.append(avg_log_likelihood(m, va))
        if va.labels is not None:
            nmis.append(nmi(va.labels, hard_assign(m, va)))
    truth = [fed.generating_model(i) for i in range(fed.n_nodes)]
    mu_err = centroid_error(truth, models) if all(t is not None for t in truth) else math.nan
    counts = [e_step(m, tr).counts for m, tr in zip(models, fed.train)]
    cons = consensus_error(models, counts, graph, [tr.n_samples for tr in fed.train])
    return MetricsRecord(
        avg_log_likelihood=float(np.mean(lls)),
        nmi=float(np.mean(nmis)) if nmis else math.nan,
        mu_err=mu_err,
        consensus_err=cons,
    )


def run_job(cfg: ExperimentConfig, cell_id: int, cell: dict, replicate: int,
            out_dir: Optional[str] = None) -> list[dict]:
    """Rows for every method of one (cell, replicate) pair."""
    seed = mix_seed(cfg.seed, cfg.data_cell_index(cell), replicate)
    base = {"experiment": cfg.experiment, "cell_id": cell_id, "replicate": replicate,
            "d": cell["d"], "N_i": cell["n_train"], "alpha": cell["aggregation_alpha"],
            "p_in": cell["p_in"], "p_out": cell["p_out"]}
    try:
        fed, graph = build_problem(cfg, cell, seed)
    except (GraphFedError, ValueError, np.linalg.LinAlgError) as exc:
        return [_error_row(base, m, exc) for m in cfg.methods]
    if out_dir is not None:
        gdir = Path(out_dir) / "provenance" / "graphs"
        gdir.mkdir(parents=True, exist_ok=True)
        write_edge_list(graph, gdir / f"cell{cell_id:03d}_rep{replicate:02d}.edges")
    tcfg = TrainConfig(n_components=cfg.n_components, n_rounds=int(cell["n_rounds"]),
                       n_local_steps=cfg.n_local_steps, alpha=float(cell["aggregation_alpha"]),
                       shrinkage=cfg.shrinkage, loading=cfg.loading, repair_loading=cfg.loading,
                       seed=mix_seed(seed, 3))
    rows = []
    for method in cfg.methods:
        trace_path = None
        if cfg.trace and out_dir is not None and method in ("graphfed", "oracle-aggregated"):
            tdir = Path(out_dir) / "traces"
            tdir.mkdir(parents=True, exist_ok=True)
            trace_path = tdir / f"cell{cell_id:03d}_rep{replicate:02d}_{method}.csv"
        try:
            models = _per_node_models(method, fed, graph, tcfg, trace_path)
            rec = evaluate(models, fed, graph)
        except (GraphFedError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("cell %d replicate %d method %s failed: %s", cell_id, replicate, method, exc)
            rows.append(_error_row(base, method, exc))
            continue
        row = dict(base, method=method, error="")
        for col, attr in METRIC_COLUMNS.items():
            row[col] = getattr(rec, attr)
        rows.append(row)
    return rows


def _error_row(base, method, exc):
    row = dict(base, method=method, error=f"{type(exc).__name__}: {exc}")
    for col in METRIC_COLUMNS:
        row[col] = math.nan
    return row


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _job(args):
    return run_job(*args)


@dataclass
class RunOutcome:
    results_path: Path
    rows: list
    n_errors: int


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> RunOutcome:
    """Run every (cell, replicate) job and write ``results.csv`` plus provenance.

    The first line of the CSV is a ``# created:`` timestamp comment; every
    following byte depends only on the configuration.
    """
    out_dir = Path(out_dir or cfg.out_dir or os.environ.get(OUT_DIR_ENV) or "results")
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers or 1
    prov = out_dir / "provenance"
    prov.mkdir(exist_ok=True)
    cfg.dump(prov / "config.yaml")
    (prov / "environment.yaml").write_text(yaml.safe_dump({
        "graphfed": __version__, "numpy": np.__version__, "python": platform.python_version(),
    }, sort_keys=False))

    jobs = [(cfg, cid, cell, r, str(out_dir))
            for cid, cell in enumerate(cfg.cells()) for r in range(cfg.repeats)]
    results_path = out_dir / "results.csv"
    all_rows = []
    with open(results_path, "w", newline="") as fh:
        fh.write(f"# created: {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                batches = pool.map(_job, jobs)
                for rows in batches:
                    _write_rows(writer, rows, all_rows)
        else:
            for job in jobs:
                _write_rows(writer, _job(job), all_rows)
    n_errors = sum(1 for r in all_rows if r["error"])
    log.info("wrote %d rows (%d errors) to %s", len(all_rows), n_errors, results_path)
    return RunOutcome(results_path, all_rows, n_errors)


def _write_rows(writer, rows, sink):
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        sink.append(row)


# -- summaries ----------------------------------------------------------------------

def read_results(path) -> list[dict]:
    rows = []
    header = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields_ = next(csv.reader([line]))
            if header is None:
                header = fields_
                missing = set(CSV_COLUMNS) - set(header)
                if missing:
                    raise ParseError(f"results header lacks columns {sorted(missing)}", lineno)
                continue
            if len(fields_) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(fields_)}", lineno)
            row = dict(zip(header, fields_))
            try:
                for col in METRIC_COLUMNS:
                    row[col] = float(row[col])
                row["replicate"] = int(row["replicate"])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            rows.append(row)
    if header is None:
        raise ParseError("results file has no header", 1)
    return rows


SUMMARY_COLUMNS = ("experiment", "cell_id", "method") + CELL_COLUMNS + ("n",) + tuple(
    f"{m}_{s}" for m in METRIC_COLUMNS for s in ("mean", "stderr"))


def summarize(results_path, out_path=None) -> list[dict]:
    """Mean and standard error per (cell, method); written as CSV when ``out_path`` is set."""
    groups: dict = {}
    for row in read_results(results_path):
        key = (row["experiment"], row["cell_id"], row["method"])
        groups.setdefault(key, []).append(row)
    summary = []
    for (experiment, cell_id, method), rows in groups.items():
        stats = replicate_stats([{attr: r[col] for col, attr in METRIC_COLUMNS.items()} for r in rows])
        out = {"experiment": experiment, "cell_id": cell_id, "method": method, "n": len(rows)}
        for c in CELL_COLUMNS:
            out[c] = rows[0][c]
        for col, attr in METRIC_COLUMNS.items():
            out[f"{col}_mean"], out[f"{col}_stderr"] = stats[attr]
        summary.append(out)
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for s in summary:
                w.writerow([_fmt(s[c]) for c in SUMMARY_COLUMNS])
    return summary
